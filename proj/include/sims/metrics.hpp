#pragma once

// Image-quality metrics against a ground truth, and the header-affine
// trilinear fusion baseline.
//
// All metrics first rescale both volumes by the ground truth's min/max to
// [0, 1], so MAE and PSNR are in those units and the data range is 1.

#include "volume.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace sims {

using Mask = std::vector<std::uint8_t>;

namespace detail {

inline void check_pair(const Volume& a, const Volume& b, const Mask& mask)
{
    if (a.dims != b.dims)
        throw DataError("metric inputs have different dimensions");
    if (!mask.empty() && mask.size() != a.size())
        throw DataError("metric mask length differs from the volume size");
}

struct Rescale {
    double lo, span;
    double operator()(double v) const { return (v - lo) / span; }
};

inline Rescale rescale_by(const Volume& truth)
{
    const auto [mn, mx] = std::minmax_element(truth.data.begin(), truth.data.end());
    if (!(*mx > *mn))
        throw DataError("ground truth is constant; cannot rescale to [0, 1]");
    return {*mn, static_cast<double>(*mx) - *mn};
}

} // namespace detail

/// Voxels whose ground truth exceeds `fraction` of its range.
inline Mask foreground_mask(const Volume& truth, double fraction = 0.05)
{
    const auto r = detail::rescale_by(truth);
    Mask m(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
        m[i] = r(truth.data[i]) > fraction ? 1 : 0;
    return m;
}

/// Mean absolute error over the mask (empty = all voxels).
inline double mae(const Volume& test, const Volume& truth, const Mask& mask = {})
{
    detail::check_pair(test, truth, mask);
    const auto r = detail::rescale_by(truth);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!mask.empty() && !mask[i])
            continue;
        acc += std::abs(r(test.data[i]) - r(truth.data[i]));
        ++n;
    }
    if (n == 0)
        throw DataError("metric mask selects no voxels");
    return acc / static_cast<double>(n);
}

/// 10 log10(range^2 / MSE) in dB; +infinity for identical inputs.
inline double psnr(const Volume& test, const Volume& truth, const Mask& mask = {}, double data_range = 1.0)
{
    detail::check_pair(test, truth, mask);
    if (!(data_range > 0.0))
        throw ConfigError("PSNR data range must be positive");
    const auto r = detail::rescale_by(truth);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!mask.empty() && !mask[i])
            continue;
        const double d = r(test.data[i]) - r(truth.data[i]);
        acc += d * d;
        ++n;
    }
    if (n == 0)
        throw DataError("metric mask selects no voxels");
    const double mse = acc / static_cast<double>(n);
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimOptions {
    double sigma = 1.5;
    int window = 11;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Normalized 1D Gaussian taps of odd length `window`.
inline std::vector<double> gaussian_taps(int window, double sigma)
{
    if (window < 1 || window % 2 == 0 || !(sigma > 0.0))
        throw ConfigError("SSIM window must be odd and sigma positive");
    std::vector<double> w(static_cast<std::size_t>(window));
    const int r = window / 2;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += w[static_cast<std::size_t>(i + r)];
    }
    for (auto& x : w)
        x /= sum;
    return w;
}

namespace detail {

/// "Valid" separable filtering of a dense x-fastest grid along one axis.
inline std::vector<double> filter_axis(const std::vector<double>& in, std::array<int, 3>& dims, int axis,
                                       const std::vector<double>& taps)
{
    const int w = static_cast<int>(taps.size());
    std::array<int, 3> od = dims;
    od[static_cast<std::size_t>(axis)] -= w - 1;
    std::vector<double> out(static_cast<std::size_t>(od[0]) * od[1] * od[2]);
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(dims[0])
                                                         : static_cast<std::size_t>(dims[0]) * dims[1];
    std::size_t o = 0;
    for (int k = 0; k < od[2]; ++k)
        for (int j = 0; j < od[1]; ++j)
            for (int i = 0; i < od[0]; ++i, ++o) {
                const std::size_t base = static_cast<std::size_t>(i)
                                         + static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k);
                double acc = 0.0;
                for (int t = 0; t < w; ++t)
                    acc += taps[static_cast<std::size_t>(t)] * in[base + stride * static_cast<std::size_t>(t)];
                out[o] = acc;
            }
    dims = od;
    return out;
}

inline std::vector<double> gaussian_valid(std::vector<double> v, std::array<int, 3> dims,
                                          const std::vector<double>& taps)
{
    for (int axis = 0; axis < 3; ++axis)
        v = filter_axis(v, dims, axis, taps);
    return v;
}

} // namespace detail

/// Mean SSIM over interior voxels (those whose full window fits), with a 3D
/// Gaussian window. A non-empty mask restricts the mean to interior voxels
/// whose center is selected.
inline double ssim3d(const Volume& test, const Volume& truth, const Mask& mask = {}, const SsimOptions& opt = {})
{
    detail::check_pair(test, truth, mask);
    for (int d : truth.dims)
        if (d < opt.window)
            throw DataError("volume is smaller than the SSIM window");
    const auto r = detail::rescale_by(truth);
    const auto taps = gaussian_taps(opt.window, opt.sigma);
    const std::size_t n = truth.size();
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = r(test.data[i]);
        b[i] = r(truth.data[i]);
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto ma = detail::gaussian_valid(std::move(a), truth.dims, taps);
    const auto mb = detail::gaussian_valid(std::move(b), truth.dims, taps);
    const auto saa = detail::gaussian_valid(std::move(aa), truth.dims, taps);
    const auto sbb = detail::gaussian_valid(std::move(bb), truth.dims, taps);
    const auto sab = detail::gaussian_valid(std::move(ab), truth.dims, taps);

    const double c1 = std::pow(opt.k1 * opt.data_range, 2);
    const double c2 = std::pow(opt.k2 * opt.data_range, 2);
    const int rad = opt.window / 2;
    const int ox = truth.dims[0] - 2 * rad, oy = truth.dims[1] - 2 * rad, oz = truth.dims[2] - 2 * rad;
    double acc = 0.0;
    std::size_t count = 0;
    std::size_t o = 0;
    for (int k = 0; k < oz; ++k)
        for (int j = 0; j < oy; ++j)
            for (int i = 0; i < ox; ++i, ++o) {
                if (!mask.empty() && !mask[truth.index(i + rad, j + rad, k + rad)])
                    continue;
                const double va = saa[o] - ma[o] * ma[o];
                const double vb = sbb[o] - mb[o] * mb[o];
                const double cov = sab[o] - ma[o] * mb[o];
                acc += ((2 * ma[o] * mb[o] + c1) * (2 * cov + c2))
                       / ((ma[o] * ma[o] + mb[o] * mb[o] + c1) * (va + vb + c2));
                ++count;
            }
    if (count == 0)
        throw DataError("metric mask selects no interior voxels");
    return acc / static_cast<double>(count);
}

struct FusedVolume {
    Volume volume;
    /// 1 where at least one view covers the voxel center.
    Mask valid;
};

/// Header-affine trilinear fusion: average of both views where both cover a
/// grid point, the covering view where only one does. Points outside both
/// are marked invalid and filled by edge extension of the first view.
inline FusedVolume fuse_baseline(const Volume& axial, const Volume& coronal, Volume grid)
{
    const Sampler sa(axial), sc(coronal);
    FusedVolume out;
    out.valid.assign(grid.size(), 0);
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                const Vec3 w = voxel_to_world(grid, Vec3(i, j, k));
                const auto va = sa(w);
                const auto vc = sc(w);
                float v;
                std::uint8_t ok = 1;
                if (va && vc)
                    v = 0.5f * (*va + *vc);
                else if (va)
                    v = *va;
                else if (vc)
                    v = *vc;
                else {
                    v = sa.clamped(w);
                    ok = 0;
                }
                grid.at(i, j, k) = v;
                out.valid[grid.index(i, j, k)] = ok;
            }
    out.volume = std::move(grid);
    return out;
}

struct MetricReport {
    std::string test_id;
    std::string truth_id;
    std::string mask = "full";
    std::string range_convention = "ground-truth min/max rescaled to [0,1]; data range 1";
    double mae = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;

    static std::string format(double v)
    {
        if (std::isinf(v))
            return v > 0 ? "inf" : "-inf";
        std::ostringstream os;
        os.precision(10);
        os << v;
        return os.str();
    }

    /// key=value lines.
    std::string text() const
    {
        std::ostringstream os;
        os << "test=" << test_id << "\n"
           << "truth=" << truth_id << "\n"
           << "mask=" << mask << "\n"
           << "range=" << range_convention << "\n"
           << "mae=" << format(mae) << "\n"
           << "ssim=" << format(ssim) << "\n"
           << "psnr=" << format(psnr) << "\n";
        return os.str();
    }

    static std::string csv_header() { return "test,truth,mask,mae,ssim,psnr"; }
    std::string csv_row() const
    {
        return test_id + "," + truth_id + "," + mask + "," + format(mae) + "," + format(ssim) + "," + format(psnr);
    }
};

inline MetricReport evaluate(const Volume& test, const Volume& truth, const Mask& mask = {})
{
    MetricReport r;
    r.mask = mask.empty() ? "full" : "foreground";
    r.mae = mae(test, truth, mask);
    r.ssim = ssim3d(test, truth, mask);
    r.psnr = psnr(test, truth, mask);
    return r;
}

} // namespace sims
