#pragma once

// Synthetic ground truth and two-view degradation for desk-scale runs.

#include "volume.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace sims {

struct PhantomSpec {
    int size = 64;
    std::uint64_t seed = 1;
    /// Nested ellipsoids including the outer envelope.
    int structures = 8;
    /// Smooth value-noise octaves; 0 disables texture.
    int texture_octaves = 3;
    /// Texture amplitude relative to the contrast span.
    double texture_strength = 0.12;
    double contrast_lo = 0.0;
    double contrast_hi = 1.0;

    void validate() const
    {
        if (size < 16)
            throw ConfigError("phantom size must be at least 16");
        if (structures < 1)
            throw ConfigError("phantom needs at least one structure");
        if (texture_octaves < 0 || texture_strength < 0.0)
            throw ConfigError("phantom texture parameters must be non-negative");
        if (!(contrast_hi >= contrast_lo))
            throw ConfigError("phantom contrast range is inverted");
    }
};

enum class SliceModel { block_mean, subsample };

enum class View { axial, coronal };

inline int through_plane_axis(View v) { return v == View::axial ? 2 : 1; }

struct DegradationSpec {
    int factor = 4;
    /// Rotation of the second view about the world x-axis, radians.
    double rotation = 0.1;
    SliceModel slice_model = SliceModel::block_mean;
    /// Optional additive Gaussian noise (intensity units).
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 7;

    void validate() const
    {
        if (factor < 2)
            throw ConfigError("downsampling factor must be at least 2");
        if (!std::isfinite(rotation))
            throw ConfigError("rotation must be finite");
        if (noise_sigma < 0.0)
            throw ConfigError("noise sigma must be non-negative");
    }
};

/// Homogeneous rotation about the world x-axis.
inline Affine rotation_about_x(double angle)
{
    Affine r = Affine::Identity();
    const double c = std::cos(angle), s = std::sin(angle);
    r(1, 1) = c;
    r(1, 2) = -s;
    r(2, 1) = s;
    r(2, 2) = c;
    return r;
}

struct Ellipsoid {
    Vec3 center;
    Vec3 radii;
    double value;

    bool contains(const Vec3& p) const { return (p - center).cwiseQuotient(radii).squaredNorm() <= 1.0; }
};

namespace detail {

/// Trilinearly interpolated lattice noise with smoothstep weights, values in
/// [-1, 1]; `cells` lattice intervals span the volume.
class LatticeNoise {
public:
    LatticeNoise(int cells, Rng& rng) : n_(cells + 2), values_(static_cast<std::size_t>(n_) * n_ * n_)
    {
        for (auto& v : values_)
            v = rng.uniform(-1.0, 1.0);
    }

    double operator()(double x, double y, double z) const
    {
        const double p[3] = {x, y, z};
        int i0[3];
        double t[3];
        for (int d = 0; d < 3; ++d) {
            i0[d] = std::clamp(static_cast<int>(std::floor(p[d])), 0, n_ - 2);
            const double f = p[d] - i0[d];
            t[d] = f * f * (3.0 - 2.0 * f);
        }
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
            const int o[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
            const double w = (o[0] ? t[0] : 1 - t[0]) * (o[1] ? t[1] : 1 - t[1]) * (o[2] ? t[2] : 1 - t[2]);
            acc += w * values_[static_cast<std::size_t>(i0[0] + o[0])
                               + static_cast<std::size_t>(n_) * (i0[1] + o[1] + static_cast<std::size_t>(n_) * (i0[2] + o[2]))];
        }
        return acc;
    }

private:
    int n_;
    std::vector<double> values_;
};

} // namespace detail

/// Ellipsoids of the phantom, outermost first. Each later ellipsoid lies
/// inside the envelope and avoids the centers of earlier ones, so every
/// structure keeps at least its center voxel.
inline std::vector<Ellipsoid> phantom_structures(const PhantomSpec& spec)
{
    spec.validate();
    Rng rng(derive_seed(spec.seed, 11));
    const double n = spec.size;
    const Vec3 mid = Vec3::Constant(0.5 * (n - 1));
    const double span = spec.contrast_hi - spec.contrast_lo;
    std::vector<Ellipsoid> out;
    out.push_back({mid, Vec3(0.40 * n, 0.37 * n, 0.34 * n), 0.0});

    int attempts = 0;
    while (static_cast<int>(out.size()) < spec.structures) {
        if (++attempts > 100000)
            throw ConfigError("cannot place the requested number of phantom structures");
        Ellipsoid e;
        const double scale = rng.uniform(0.06, 0.22) * n;
        e.radii = Vec3(scale * rng.uniform(0.6, 1.4), scale * rng.uniform(0.6, 1.4), scale * rng.uniform(0.6, 1.4));
        e.radii = e.radii.cwiseMax(2.0);
        e.center = mid + Vec3(rng.uniform(-0.25, 0.25) * n, rng.uniform(-0.25, 0.25) * n, rng.uniform(-0.22, 0.22) * n);
        e.value = 0.0;
        // Keep inside the envelope (check the bounding box corners).
        bool inside = true;
        for (int c = 0; c < 8 && inside; ++c) {
            const Vec3 corner = e.center + Vec3((c & 1) ? 1 : -1, (c & 2) ? 1 : -1, (c & 4) ? 1 : -1).cwiseProduct(e.radii);
            inside = out.front().contains(corner);
        }
        if (!inside)
            continue;
        bool covers = false;
        for (const auto& prev : out)
            covers = covers || e.contains(prev.center.array().round().matrix());
        if (covers)
            continue;
        out.push_back(e);
    }

    // Distinct intensities, well separated from the background.
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double slot = (static_cast<double>(i) + rng.uniform(0.2, 0.8)) / static_cast<double>(out.size());
        out[i].value = spec.contrast_lo + span * (0.15 + 0.85 * slot);
    }
    // Shuffle values so nesting order does not imply brightness order.
    for (std::size_t i = out.size(); i > 1; --i)
        std::swap(out[i - 1].value, out[rng.below(i)].value);
    return out;
}

/// Isotropic phantom on an identity affine (1 mm voxels, origin at voxel 0),
/// intensities clamped to the contrast range. The background is contrast_lo.
inline Volume make_phantom(const PhantomSpec& spec)
{
    spec.validate();
    const auto shapes = phantom_structures(spec);
    const int n = spec.size;
    Volume v({n, n, n}, Affine::Identity(), static_cast<float>(spec.contrast_lo));
    const double span = spec.contrast_hi - spec.contrast_lo;

    Rng rng(derive_seed(spec.seed, 23));
    std::vector<detail::LatticeNoise> octaves;
    for (int o = 0; o < spec.texture_octaves; ++o)
        octaves.emplace_back(4 << o, rng);

    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const Vec3 p(i, j, k);
                double value = spec.contrast_lo;
                bool in_head = false;
                for (const auto& e : shapes)
                    if (e.contains(p)) {
                        value = e.value;
                        in_head = true;
                    }
                if (in_head && !octaves.empty() && span > 0.0) {
                    double tex = 0.0;
                    double amp = 1.0, norm = 0.0;
                    for (int o = 0; o < spec.texture_octaves; ++o) {
                        const double cells = 4 << o;
                        const double s = cells / n;
                        tex += amp * octaves[static_cast<std::size_t>(o)](i * s, j * s, k * s);
                        norm += amp;
                        amp *= 0.5;
                    }
                    value += spec.texture_strength * span * tex / norm;
                }
                v.at(i, j, k) = static_cast<float>(std::clamp(value, spec.contrast_lo, spec.contrast_hi));
            }
    return v;
}

/// Rigidly rotates the imaged object about the world x-axis: the voxel array
/// travels with the object and the affine is premultiplied by the rotation,
/// so content at world p ends up at R p.
inline Volume rotate_volume(const Volume& volume, double angle)
{
    if (!std::isfinite(angle))
        throw ConfigError("rotation angle must be finite");
    Volume out = volume;
    if (angle != 0.0)
        out.affine = rotation_about_x(angle) * volume.affine;
    return out;
}

/// Thick-slice degradation along the view's through-plane axis.
inline Volume degrade(const Volume& volume, int factor, View view, SliceModel model = SliceModel::block_mean)
{
    if (factor < 1)
        throw ConfigError("downsampling factor must be positive");
    const int axis = through_plane_axis(view);
    const int dim = volume.dims[static_cast<std::size_t>(axis)];
    if (dim % factor != 0)
        throw ConfigError("downsampling factor " + std::to_string(factor) + " does not divide dimension "
                          + std::to_string(dim));
    if (factor == 1)
        return volume;
    std::array<int, 3> dims = volume.dims;
    dims[static_cast<std::size_t>(axis)] = dim / factor;

    const double offset = model == SliceModel::block_mean ? 0.5 * (factor - 1) : 0.0;
    Affine a = volume.affine;
    a.block<3, 1>(0, 3) += offset * volume.affine.block<3, 1>(0, axis);
    a.block<3, 1>(0, axis) *= factor;
    Volume out(dims, a);

    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                int src[3] = {i, j, k};
                const int slab = src[axis];
                if (model == SliceModel::subsample) {
                    src[axis] = slab * factor;
                    out.at(i, j, k) = volume.at(src[0], src[1], src[2]);
                    continue;
                }
                double acc = 0.0;
                for (int s = 0; s < factor; ++s) {
                    src[axis] = slab * factor + s;
                    acc += volume.at(src[0], src[1], src[2]);
                }
                out.at(i, j, k) = static_cast<float>(acc / factor);
            }
    return out;
}

struct SimulatedPair {
    Volume axial;
    Volume coronal;
    Volume truth;
};

inline void add_noise(Volume& v, double sigma, Rng& rng)
{
    if (sigma <= 0.0)
        return;
    for (auto& x : v.data)
        x = static_cast<float>(x + sigma * rng.normal());
}

/// Axial view: thick slices along z. Coronal view: the object rotated about
/// x, then thick slices along y.
inline SimulatedPair simulate_pair(const Volume& phantom, const DegradationSpec& spec)
{
    spec.validate();
    SimulatedPair p;
    p.truth = phantom;
    p.axial = degrade(phantom, spec.factor, View::axial, spec.slice_model);
    p.coronal = degrade(rotate_volume(phantom, spec.rotation), spec.factor, View::coronal, spec.slice_model);
    if (spec.noise_sigma > 0.0) {
        Rng rng(spec.noise_seed);
        add_noise(p.axial, spec.noise_sigma, rng);
        add_noise(p.coronal, spec.noise_sigma, rng);
    }
    return p;
}

} // namespace sims
