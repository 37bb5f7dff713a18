#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer for 3D scalar
// images. Supported datatypes: uint8, int16, float32, float64.

#include "volume.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

namespace sims {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax;
    std::int32_t glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum class NiftiType : std::int16_t {
    uint8 = 2,
    int16 = 4,
    float32 = 16,
    float64 = 64,
};

inline int nifti_type_bytes(NiftiType t)
{
    switch (t) {
    case NiftiType::uint8: return 1;
    case NiftiType::int16: return 2;
    case NiftiType::float32: return 4;
    case NiftiType::float64: return 8;
    }
    return 0;
}

namespace detail {

template <class T>
T byteswap_value(T v)
{
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

inline void swap_header(Nifti1Header& h)
{
    auto s = [](auto& x) { x = byteswap_value(x); };
    s(h.sizeof_hdr);
    s(h.extents);
    s(h.session_error);
    for (auto& d : h.dim)
        s(d);
    s(h.intent_p1);
    s(h.intent_p2);
    s(h.intent_p3);
    s(h.intent_code);
    s(h.datatype);
    s(h.bitpix);
    s(h.slice_start);
    for (auto& p : h.pixdim)
        s(p);
    s(h.vox_offset);
    s(h.scl_slope);
    s(h.scl_inter);
    s(h.slice_end);
    s(h.cal_max);
    s(h.cal_min);
    s(h.slice_duration);
    s(h.toffset);
    s(h.glmax);
    s(h.glmin);
    s(h.qform_code);
    s(h.sform_code);
    s(h.quatern_b);
    s(h.quatern_c);
    s(h.quatern_d);
    s(h.qoffset_x);
    s(h.qoffset_y);
    s(h.qoffset_z);
    for (int i = 0; i < 4; ++i) {
        s(h.srow_x[i]);
        s(h.srow_y[i]);
        s(h.srow_z[i]);
    }
}

class GzFile {
public:
    GzFile(const std::string& path, const char* mode) : f_(gzopen(path.c_str(), mode)), path_(path)
    {
        if (!f_)
            throw DataError("cannot open '" + path + "'");
    }
    ~GzFile()
    {
        if (f_)
            gzclose(f_);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read(void* dst, std::size_t bytes)
    {
        auto* p = static_cast<char*>(dst);
        while (bytes > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
            const int got = gzread(f_, p, chunk);
            if (got <= 0)
                throw DataError("'" + path_ + "' is truncated or corrupt");
            p += got;
            bytes -= static_cast<std::size_t>(got);
        }
    }

    void write(const void* src, std::size_t bytes)
    {
        const auto* p = static_cast<const char*>(src);
        while (bytes > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
            const int put = gzwrite(f_, p, chunk);
            if (put <= 0)
                throw DataError("write failed for '" + path_ + "'");
            p += put;
            bytes -= static_cast<std::size_t>(put);
        }
    }

    void close()
    {
        const int rc = gzclose(f_);
        f_ = nullptr;
        if (rc != Z_OK)
            throw DataError("closing '" + path_ + "' failed");
    }

private:
    gzFile f_;
    std::string path_;
};

inline bool is_gz_path(const std::string& path)
{
    return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

} // namespace detail

/// Rotation-plus-spacing affine from NIfTI quaternion parameters.
inline Affine quaternion_to_affine(double b, double c, double d, double qx, double qy, double qz, double dx, double dy,
                                   double dz, double qfac)
{
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
        // Pure 180 degree rotation: renormalize (b, c, d).
        const double n = 1.0 / std::sqrt(b * b + c * c + d * d);
        b *= n;
        c *= n;
        d *= n;
        a = 0.0;
    }
    else {
        a = std::sqrt(a);
    }
    const double xd = dx > 0 ? dx : 1.0;
    const double yd = dy > 0 ? dy : 1.0;
    const double zd = (dz > 0 ? dz : 1.0) * (qfac < 0 ? -1.0 : 1.0);
    Affine m = Affine::Identity();
    m(0, 0) = (a * a + b * b - c * c - d * d) * xd;
    m(0, 1) = 2.0 * (b * c - a * d) * yd;
    m(0, 2) = 2.0 * (b * d + a * c) * zd;
    m(1, 0) = 2.0 * (b * c + a * d) * xd;
    m(1, 1) = (a * a + c * c - b * b - d * d) * yd;
    m(1, 2) = 2.0 * (c * d - a * b) * zd;
    m(2, 0) = 2.0 * (b * d - a * c) * xd;
    m(2, 1) = 2.0 * (c * d + a * b) * yd;
    m(2, 2) = (a * a + d * d - c * c - b * b) * zd;
    m(0, 3) = qx;
    m(1, 3) = qy;
    m(2, 3) = qz;
    return m;
}

/// Affine described by a header: sform if set, else qform, else a
/// spacing-diagonal fallback.
inline Affine header_affine(const Nifti1Header& h)
{
    if (h.sform_code > 0) {
        Affine m = Affine::Identity();
        for (int i = 0; i < 4; ++i) {
            m(0, i) = h.srow_x[i];
            m(1, i) = h.srow_y[i];
            m(2, i) = h.srow_z[i];
        }
        return m;
    }
    if (h.qform_code > 0)
        return quaternion_to_affine(h.quatern_b, h.quatern_c, h.quatern_d, h.qoffset_x, h.qoffset_y, h.qoffset_z,
                                    h.pixdim[1], h.pixdim[2], h.pixdim[3], h.pixdim[0]);
    Affine m = Affine::Identity();
    for (int d = 0; d < 3; ++d)
        m(d, d) = h.pixdim[d + 1] > 0 ? h.pixdim[d + 1] : 1.0;
    return m;
}

inline Volume read_volume(const std::string& path)
{
    detail::GzFile in(path, "rb");
    Nifti1Header h{};
    in.read(&h, sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        if (detail::byteswap_value(h.sizeof_hdr) != 348)
            throw DataError("'" + path + "' is not a NIfTI-1 file (bad header size)");
        detail::swap_header(h);
        swapped = true;
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0)
        throw DataError("'" + path + "' is not a single-file NIfTI-1 image");
    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7)
        throw DataError("'" + path + "' has a corrupt dim[0]");
    for (int d = 4; d <= ndim; ++d)
        if (h.dim[d] > 1)
            throw DataError("'" + path + "' is not a 3D image");
    std::array<int, 3> dims{1, 1, 1};
    for (int d = 0; d < 3 && d < ndim; ++d) {
        if (h.dim[d + 1] < 1)
            throw DataError("'" + path + "' has a non-positive dimension");
        dims[static_cast<std::size_t>(d)] = h.dim[d + 1];
    }
    const auto type = static_cast<NiftiType>(h.datatype);
    const int bytes = nifti_type_bytes(type);
    if (bytes == 0)
        throw DataError("'" + path + "' uses unsupported datatype code " + std::to_string(h.datatype));
    if (h.vox_offset < 348.0f)
        throw DataError("'" + path + "' has an invalid vox_offset");

    std::vector<char> skip(static_cast<std::size_t>(h.vox_offset) - 348);
    if (!skip.empty())
        in.read(skip.data(), skip.size());

    Volume v;
    v.dims = dims;
    v.affine = header_affine(h);
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    std::vector<unsigned char> raw(n * static_cast<std::size_t>(bytes));
    in.read(raw.data(), raw.size());
    v.data.resize(n);

    const bool scaled = std::isfinite(h.scl_slope) && h.scl_slope != 0.0f
                        && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    const double slope = scaled ? h.scl_slope : 1.0;
    const double inter = scaled ? h.scl_inter : 0.0;
    auto convert = [&](auto tag) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < n; ++i) {
            T x;
            std::memcpy(&x, raw.data() + i * sizeof(T), sizeof(T));
            if (swapped)
                x = detail::byteswap_value(x);
            v.data[i] = scaled ? static_cast<float>(slope * static_cast<double>(x) + inter) : static_cast<float>(x);
        }
    };
    switch (type) {
    case NiftiType::uint8: convert(std::uint8_t{}); break;
    case NiftiType::int16: convert(std::int16_t{}); break;
    case NiftiType::float32: convert(float{}); break;
    case NiftiType::float64: convert(double{}); break;
    }
    v.validate();
    return v;
}

namespace detail {

/// Quaternion parameters for the rotation closest to the affine's linear
/// part; returns qfac.
inline double affine_to_quaternion(const Affine& a, Nifti1Header& h)
{
    Eigen::Matrix3d r = a.topLeftCorner<3, 3>();
    const Vec3 spacing = r.colwise().norm();
    for (int c = 0; c < 3; ++c)
        r.col(c) /= spacing[c];
    double qfac = 1.0;
    if (r.determinant() < 0) {
        r.col(2) *= -1.0;
        qfac = -1.0;
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r = svd.matrixU() * svd.matrixV().transpose();
    Eigen::Quaterniond q(r);
    if (q.w() < 0)
        q.coeffs() *= -1.0;
    h.quatern_b = static_cast<float>(q.x());
    h.quatern_c = static_cast<float>(q.y());
    h.quatern_d = static_cast<float>(q.z());
    h.qoffset_x = static_cast<float>(a(0, 3));
    h.qoffset_y = static_cast<float>(a(1, 3));
    h.qoffset_z = static_cast<float>(a(2, 3));
    return qfac;
}

} // namespace detail

/// Writes a NIfTI-1 file with sform (and the nearest qform) set from the
/// volume's affine. The affine is stored at 32-bit precision. Integer
/// datatypes round and saturate the data; float32 is the default.
inline void write_volume(const Volume& v, const std::string& path, NiftiType type = NiftiType::float32)
{
    v.validate();
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int d = 0; d < 3; ++d)
        h.dim[d + 1] = static_cast<std::int16_t>(v.dims[static_cast<std::size_t>(d)]);
    for (int d = 4; d < 8; ++d)
        h.dim[d] = 1;
    if (v.dims[0] > 32767 || v.dims[1] > 32767 || v.dims[2] > 32767)
        throw DataError("volume too large for NIfTI-1");
    h.datatype = static_cast<std::int16_t>(type);
    h.bitpix = static_cast<std::int16_t>(8 * nifti_type_bytes(type));
    const Vec3 spacing = v.spacing();
    h.pixdim[0] = static_cast<float>(detail::affine_to_quaternion(v.affine, h));
    for (int d = 0; d < 3; ++d)
        h.pixdim[d + 1] = static_cast<float>(spacing[d]);
    for (int d = 4; d < 8; ++d)
        h.pixdim[d] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // mm
    h.qform_code = 1;
    h.sform_code = 1;
    for (int i = 0; i < 4; ++i) {
        h.srow_x[i] = static_cast<float>(v.affine(0, i));
        h.srow_y[i] = static_cast<float>(v.affine(1, i));
        h.srow_z[i] = static_cast<float>(v.affine(2, i));
    }
    std::strncpy(h.descrip, "sims", sizeof(h.descrip));
    std::memcpy(h.magic, "n+1", 4);
    if constexpr (std::endian::native != std::endian::little)
        detail::swap_header(h);

    std::vector<unsigned char> raw(v.size() * static_cast<std::size_t>(nifti_type_bytes(type)));
    auto emit = [&](auto tag) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < v.size(); ++i) {
            T x;
            if constexpr (std::is_integral_v<T>) {
                const double r = std::nearbyint(static_cast<double>(v.data[i]));
                x = static_cast<T>(std::clamp(r, static_cast<double>(std::numeric_limits<T>::min()),
                                              static_cast<double>(std::numeric_limits<T>::max())));
            }
            else {
                x = static_cast<T>(v.data[i]);
            }
            if constexpr (std::endian::native != std::endian::little)
                x = detail::byteswap_value(x);
            std::memcpy(raw.data() + i * sizeof(T), &x, sizeof(T));
        }
    };
    switch (type) {
    case NiftiType::uint8: emit(std::uint8_t{}); break;
    case NiftiType::int16: emit(std::int16_t{}); break;
    case NiftiType::float32: emit(float{}); break;
    case NiftiType::float64: emit(double{}); break;
    }

    const char extension[4] = {0, 0, 0, 0};
    detail::GzFile out(path, detail::is_gz_path(path) ? "wb6" : "wbT");
    out.write(&h, sizeof(h));
    out.write(extension, sizeof(extension));
    out.write(raw.data(), raw.size());
    out.close();
}

} // namespace sims
