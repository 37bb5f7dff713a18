#pragma once

// Scalar volumes with voxel-to-world geometry, joint normalization of
// coordinates and intensities, and continuous trilinear sampling.

#include "core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sims {

using Vec3 = Eigen::Vector3d;
using Affine = Eigen::Matrix4d;

/// 3D scalar grid stored x-fastest, with a 4x4 voxel-index to world (mm)
/// affine.
struct Volume {
    std::array<int, 3> dims{1, 1, 1};
    std::vector<float> data = std::vector<float>(1, 0.0f);
    Affine affine = Affine::Identity();

    Volume() = default;

    Volume(std::array<int, 3> d, const Affine& a, float fill = 0.0f)
        : dims(d), data(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill), affine(a)
    {
        validate();
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i)
               + static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }

    float& at(int i, int j, int k) { return data[index(i, j, k)]; }
    float at(int i, int j, int k) const { return data[index(i, j, k)]; }

    /// Column norms of the affine's linear part.
    Vec3 spacing() const { return affine.topLeftCorner<3, 3>().colwise().norm().transpose(); }

    void validate() const
    {
        for (int d : dims)
            if (d < 1)
                throw DataError("volume dimensions must be positive");
        if (data.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2])
            throw DataError("volume data length does not match its dimensions");
        const double det = affine.topLeftCorner<3, 3>().determinant();
        if (!std::isfinite(det) || std::abs(det) < 1e-12)
            throw DataError("volume affine is singular");
    }
};

inline Vec3 voxel_to_world(const Affine& affine, const Vec3& index)
{
    return affine.topLeftCorner<3, 3>() * index + affine.topRightCorner<3, 1>();
}

inline Vec3 voxel_to_world(const Volume& v, const Vec3& index) { return voxel_to_world(v.affine, index); }

inline Vec3 world_to_voxel(const Volume& v, const Vec3& world)
{
    return v.affine.topLeftCorner<3, 3>().inverse() * (world - v.affine.topRightCorner<3, 1>());
}

/// Trilinear sampler with a cached inverse affine. Points whose fractional
/// index falls outside [0, dim-1] on any axis are reported as outside.
class Sampler {
public:
    explicit Sampler(const Volume& v) : vol_(&v)
    {
        inv_linear_ = v.affine.topLeftCorner<3, 3>().inverse();
        offset_ = v.affine.topRightCorner<3, 1>();
    }

    Vec3 to_index(const Vec3& world) const { return inv_linear_ * (world - offset_); }

    std::optional<float> at_index(const Vec3& idx) const
    {
        const Volume& v = *vol_;
        constexpr double slack = 1e-6;
        double f[3];
        int i0[3];
        for (int d = 0; d < 3; ++d) {
            const double hi = v.dims[d] - 1;
            double p = idx[d];
            if (!(p >= -slack && p <= hi + slack))
                return std::nullopt;
            p = std::clamp(p, 0.0, hi);
            int base = static_cast<int>(std::floor(p));
            if (base >= v.dims[d] - 1)
                base = std::max(v.dims[d] - 2, 0);
            i0[d] = base;
            f[d] = p - base;
        }
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
            const int o[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
            double w = 1.0;
            int ii[3];
            for (int d = 0; d < 3; ++d) {
                w *= o[d] ? f[d] : 1.0 - f[d];
                ii[d] = std::min(i0[d] + o[d], v.dims[d] - 1);
            }
            if (w != 0.0)
                acc += w * v.at(ii[0], ii[1], ii[2]);
        }
        return static_cast<float>(acc);
    }

    std::optional<float> operator()(const Vec3& world) const { return at_index(to_index(world)); }

    /// Sample with the index clamped onto the volume (edge extension).
    float clamped(const Vec3& world) const
    {
        Vec3 idx = to_index(world);
        for (int d = 0; d < 3; ++d)
            idx[d] = std::clamp(idx[d], 0.0, static_cast<double>(vol_->dims[d] - 1));
        return *at_index(idx);
    }

private:
    const Volume* vol_;
    Eigen::Matrix3d inv_linear_;
    Vec3 offset_;
};

inline std::optional<float> trilinear_sample(const Volume& v, const Vec3& world) { return Sampler(v)(world); }

/// Trilinear resampling of `src` onto the voxel centers of `geometry`
/// (whose data is overwritten), with edge extension outside `src`.
inline Volume resample(const Volume& src, Volume geometry)
{
    const Sampler s(src);
    for (int k = 0; k < geometry.dims[2]; ++k)
        for (int j = 0; j < geometry.dims[1]; ++j)
            for (int i = 0; i < geometry.dims[0]; ++i)
                geometry.at(i, j, k) = s.clamped(voxel_to_world(geometry, Vec3(i, j, k)));
    return geometry;
}

/// World-space bounding box of a volume's voxel extents (index -0.5 to
/// dim-0.5 on every axis), axis-aligned.
inline std::array<Vec3, 2> world_bounds(const Volume& v)
{
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int c = 0; c < 8; ++c) {
        const Vec3 idx((c & 1) ? v.dims[0] - 0.5 : -0.5, (c & 2) ? v.dims[1] - 0.5 : -0.5,
                       (c & 4) ? v.dims[2] - 0.5 : -0.5);
        const Vec3 w = voxel_to_world(v, idx);
        lo = lo.cwiseMin(w);
        hi = hi.cwiseMax(w);
    }
    return {lo, hi};
}

struct NormalizationOptions {
    /// Clip intensity bounds to the 0.1 / 99.9 percentiles instead of min/max.
    bool percentile_clip = false;
};

/// Shared map from world space and intensities to [-1, 1].
struct NormalizationFrame {
    Vec3 box_min = Vec3::Constant(-1.0);
    Vec3 box_max = Vec3::Constant(1.0);
    double lo = 0.0;
    double hi = 1.0;

    Vec3 center() const { return 0.5 * (box_min + box_max); }
    Vec3 half_extent() const { return 0.5 * (box_max - box_min); }

    Vec3 to_normalized(const Vec3& world) const { return (world - center()).cwiseQuotient(half_extent()); }
    Vec3 to_world(const Vec3& u) const { return center() + u.cwiseProduct(half_extent()); }

    double normalize_intensity(double v) const { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
    double denormalize_intensity(double u) const { return lo + 0.5 * (u + 1.0) * (hi - lo); }

    void validate() const
    {
        if (!(hi > lo))
            throw DataError("constant-intensity input");
        if (!((box_max - box_min).minCoeff() > 0.0))
            throw DataError("normalization box has zero extent");
    }
};

namespace detail {

inline double percentile(std::vector<float> values, double q)
{
    if (values.empty())
        return 0.0;
    const auto k = static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

} // namespace detail

/// Builds one frame covering every view: the union of their world boxes and
/// the joint intensity range.
inline NormalizationFrame build_normalization(std::span<const Volume* const> views, NormalizationOptions opts = {})
{
    if (views.empty())
        throw DataError("normalization needs at least one view");
    NormalizationFrame f;
    f.box_min = Vec3::Constant(std::numeric_limits<double>::infinity());
    f.box_max = -f.box_min;
    f.lo = std::numeric_limits<double>::infinity();
    f.hi = -f.lo;
    std::vector<float> pooled;
    for (const Volume* v : views) {
        const auto [lo, hi] = world_bounds(*v);
        f.box_min = f.box_min.cwiseMin(lo);
        f.box_max = f.box_max.cwiseMax(hi);
        if (opts.percentile_clip) {
            pooled.insert(pooled.end(), v->data.begin(), v->data.end());
        }
        else {
            for (float x : v->data) {
                f.lo = std::min(f.lo, static_cast<double>(x));
                f.hi = std::max(f.hi, static_cast<double>(x));
            }
        }
    }
    if (opts.percentile_clip) {
        f.lo = detail::percentile(pooled, 0.001);
        f.hi = detail::percentile(std::move(pooled), 0.999);
    }
    f.validate();
    return f;
}

inline NormalizationFrame build_normalization(std::initializer_list<const Volume*> views, NormalizationOptions opts = {})
{
    return build_normalization(std::span<const Volume* const>(views.begin(), views.size()), opts);
}

/// Regular isotropic grid covering an axis-aligned world box at `spacing`.
/// Each axis gets max(1, round(extent / spacing)) voxels, centered in the box.
inline Volume make_grid(const Vec3& box_min, const Vec3& box_max, double spacing)
{
    if (!(spacing > 0.0))
        throw ConfigError("grid spacing must be positive");
    std::array<int, 3> dims{};
    Affine a = Affine::Identity();
    for (int d = 0; d < 3; ++d) {
        const double extent = box_max[d] - box_min[d];
        if (!(extent > 0.0))
            throw ConfigError("grid box must have positive extent");
        dims[static_cast<std::size_t>(d)] = std::max(1, static_cast<int>(std::lround(extent / spacing)));
        const double used = dims[static_cast<std::size_t>(d)] * spacing;
        a(d, d) = spacing;
        a(d, 3) = box_min[d] + 0.5 * (extent - used) + 0.5 * spacing;
    }
    return Volume(dims, a);
}

} // namespace sims
