#pragma once

// Coordinate encoders for the intensity network: the learnable
// multi-resolution hash grid and a fixed Fourier-feature map used for
// ablations. Both consume normalized coordinates in [-1, 1]^3.

#include "tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace sims {

struct HashGridConfig {
    int levels = 16;
    int features = 32;
    int log2_table = 19;
    int min_res = 16;
    int max_res = 2048;
    float init_range = 1e-4f;

    std::uint64_t table_size() const { return std::uint64_t{1} << log2_table; }
    int width() const { return levels * features; }
};

/// Per-level grid resolution N_l = floor(N_min * b^l) with the growth factor
/// b chosen so that the last level lands on N_max.
inline int level_resolution(int level, const HashGridConfig& cfg)
{
    if (level < 0 || level >= cfg.levels)
        throw ConfigError("level index out of range");
    if (cfg.levels == 1 || level == 0)
        return cfg.min_res;
    const double growth =
        (std::log(static_cast<double>(cfg.max_res)) - std::log(static_cast<double>(cfg.min_res))) / (cfg.levels - 1);
    const double n = static_cast<double>(cfg.min_res) * std::exp(growth * level);
    // Relative slack absorbs exp/log rounding at exact integers (e.g. N_max).
    return static_cast<int>(std::floor(n * (1.0 + 1e-12)));
}

inline constexpr std::uint64_t hash_prime_y = 2654435761ULL;
inline constexpr std::uint64_t hash_prime_z = 805459861ULL;

/// Spatial hash of an integer grid vertex into [0, table_size).
inline std::uint64_t spatial_hash(std::uint64_t x, std::uint64_t y, std::uint64_t z, std::uint64_t table_size)
{
    return (x ^ (y * hash_prime_y) ^ (z * hash_prime_z)) % table_size;
}

class HashGrid {
public:
    HashGrid() = default;

    /// Registers one feature table per level in `store`, initialized
    /// uniformly in [-init_range, init_range].
    HashGrid(const HashGridConfig& cfg, ParamStore<float>& store, Rng& rng) : cfg_(cfg)
    {
        validate(cfg);
        for (int l = 0; l < cfg.levels; ++l) {
            const int n = level_resolution(l, cfg);
            const std::uint64_t dense_rows = static_cast<std::uint64_t>(n + 1) * (n + 1) * (n + 1);
            const bool dense = dense_rows <= cfg.table_size();
            const std::uint64_t rows = dense ? dense_rows : cfg.table_size();
            resolution_.push_back(n);
            dense_.push_back(dense);
            const std::size_t id = store.add("hashgrid.level" + std::to_string(l), static_cast<Eigen::Index>(rows),
                                             cfg.features);
            auto& table = store[id].value;
            for (Eigen::Index i = 0; i < table.size(); ++i)
                table.data()[i] = static_cast<float>(rng.uniform(-cfg.init_range, cfg.init_range));
            table_ids_.push_back(id);
        }
    }

    static void validate(const HashGridConfig& cfg)
    {
        if (cfg.levels < 1)
            throw ConfigError("hash grid needs at least one level");
        if (cfg.features < 1)
            throw ConfigError("hash grid needs at least one feature per level");
        if (cfg.log2_table < 1 || cfg.log2_table > 30)
            throw ConfigError("hash table size must be 2^1 .. 2^30");
        if (cfg.min_res < 1 || cfg.max_res < cfg.min_res)
            throw ConfigError("hash grid resolutions must satisfy 1 <= min_res <= max_res");
        if (cfg.levels == 1 && cfg.max_res != cfg.min_res)
            throw ConfigError("a single-level hash grid needs min_res == max_res");
        int prev = 0;
        for (int l = 0; l < cfg.levels; ++l) {
            const int n = level_resolution(l, cfg);
            if (l > 0 && n <= prev)
                throw ConfigError("hash grid resolutions must increase strictly; widen [min_res, max_res] or use fewer levels");
            prev = n;
        }
    }

    const HashGridConfig& config() const { return cfg_; }
    int levels() const { return cfg_.levels; }
    int features() const { return cfg_.features; }
    int width() const { return cfg_.width(); }
    int resolution(int level) const { return resolution_.at(static_cast<std::size_t>(level)); }
    bool is_dense(int level) const { return dense_.at(static_cast<std::size_t>(level)); }
    std::size_t table_id(int level) const { return table_ids_.at(static_cast<std::size_t>(level)); }

    /// Table row of grid vertex `cell` at `level`.
    std::uint64_t hash_index(const std::array<std::uint32_t, 3>& cell, int level) const
    {
        const std::uint64_t n1 = static_cast<std::uint64_t>(resolution(level)) + 1;
        if (is_dense(level))
            return cell[0] + n1 * cell[1] + n1 * n1 * cell[2];
        return spatial_hash(cell[0], cell[1], cell[2], cfg_.table_size());
    }

    /// Number of coordinate components clamped into [-1, 1] so far.
    std::uint64_t clamped_count() const { return clamped_; }

    /// Encodes each row of `coords` (n x 3) into n x (levels * features)
    /// features. Levels at or above `active_levels` output zeros and receive
    /// no gradient. Gradients flow into the tables (unless frozen) and into
    /// the coordinates when `coords` requires them.
    Tape<float>::Var encode(Tape<float>& tape, Tape<float>::Var coords, int active_levels,
                            ParamStore<float>& store) const
    {
        const Matrix<float>& x = tape.value(coords);
        if (x.cols() != 3)
            throw ConfigError("hash encoding expects n x 3 coordinates");
        const int L = cfg_.levels;
        const int F = cfg_.features;
        const int k = std::clamp(active_levels, 1, L);
        const Eigen::Index n = x.rows();

        struct Record {
            std::vector<std::uint32_t> rows; // n * k * 8
            std::vector<float> weights;      // n * k * 8
            std::vector<float> frac;         // n * k * 3
            std::vector<std::uint8_t> inside; // n * 3, 0 where clamped
        };
        auto rec = std::make_shared<Record>();
        rec->rows.resize(static_cast<std::size_t>(n) * k * 8);
        rec->weights.resize(rec->rows.size());
        rec->frac.resize(static_cast<std::size_t>(n) * k * 3);
        rec->inside.resize(static_cast<std::size_t>(n) * 3);

        Matrix<float> out = Matrix<float>::Zero(n, L * F);
        std::vector<const Matrix<float>*> tables(static_cast<std::size_t>(k));
        for (int l = 0; l < k; ++l)
            tables[static_cast<std::size_t>(l)] = &store[table_ids_[static_cast<std::size_t>(l)]].value;

        for (Eigen::Index b = 0; b < n; ++b) {
            float u[3];
            for (int d = 0; d < 3; ++d) {
                float c = x(b, d);
                std::uint8_t in = 1;
                if (!(c >= -1.0f && c <= 1.0f)) {
                    c = std::isnan(c) ? 0.0f : std::clamp(c, -1.0f, 1.0f);
                    in = 0;
                    ++clamped_;
                }
                u[d] = c;
                rec->inside[static_cast<std::size_t>(b) * 3 + d] = in;
            }
            float* orow = out.row(b).data();
            for (int l = 0; l < k; ++l) {
                const int res = resolution_[static_cast<std::size_t>(l)];
                std::uint32_t base[3];
                float t[3];
                for (int d = 0; d < 3; ++d) {
                    const float p = (u[d] + 1.0f) * 0.5f * static_cast<float>(res);
                    int i0 = static_cast<int>(std::floor(p));
                    i0 = std::clamp(i0, 0, res - 1);
                    base[d] = static_cast<std::uint32_t>(i0);
                    t[d] = p - static_cast<float>(i0);
                }
                const std::size_t slot = (static_cast<std::size_t>(b) * k + l);
                for (int d = 0; d < 3; ++d)
                    rec->frac[slot * 3 + d] = t[d];
                const Matrix<float>& table = *tables[static_cast<std::size_t>(l)];
                float* dst = orow + static_cast<std::ptrdiff_t>(l) * F;
                for (int c = 0; c < 8; ++c) {
                    const int cx = c & 1, cy = (c >> 1) & 1, cz = (c >> 2) & 1;
                    const float w = (cx ? t[0] : 1.0f - t[0]) * (cy ? t[1] : 1.0f - t[1]) * (cz ? t[2] : 1.0f - t[2]);
                    const std::uint64_t row =
                        hash_index({base[0] + static_cast<std::uint32_t>(cx), base[1] + static_cast<std::uint32_t>(cy),
                                    base[2] + static_cast<std::uint32_t>(cz)},
                                   l);
                    rec->rows[slot * 8 + c] = static_cast<std::uint32_t>(row);
                    rec->weights[slot * 8 + c] = w;
                    const float* src = table.row(static_cast<Eigen::Index>(row)).data();
                    for (int f = 0; f < F; ++f)
                        dst[f] += w * src[f];
                }
            }
        }

        bool tables_train = false;
        for (int l = 0; l < k; ++l)
            tables_train = tables_train || !store[table_ids_[static_cast<std::size_t>(l)]].frozen;
        const bool ng = tables_train || tape.needs_grad(coords);

        std::vector<Parameter<float>*> params(static_cast<std::size_t>(k));
        for (int l = 0; l < k; ++l)
            params[static_cast<std::size_t>(l)] = &store[table_ids_[static_cast<std::size_t>(l)]];
        std::vector<int> res(resolution_.begin(), resolution_.begin() + k);

        return tape.custom(std::move(out), ng, [rec, params, res, coords, k, F](Tape<float>& t, const Matrix<float>& up) {
            const Eigen::Index n = up.rows();
            for (int l = 0; l < k; ++l) {
                Parameter<float>& p = *params[static_cast<std::size_t>(l)];
                if (p.frozen)
                    continue;
                for (Eigen::Index b = 0; b < n; ++b) {
                    const std::size_t slot = static_cast<std::size_t>(b) * k + l;
                    const float* g = up.row(b).data() + static_cast<std::ptrdiff_t>(l) * F;
                    for (int c = 0; c < 8; ++c) {
                        const float w = rec->weights[slot * 8 + c];
                        float* dst = p.grad.row(rec->rows[slot * 8 + c]).data();
                        for (int f = 0; f < F; ++f)
                            dst[f] += w * g[f];
                    }
                }
            }
            if (!t.needs_grad(coords))
                return;
            Matrix<float> dx = Matrix<float>::Zero(n, 3);
            for (Eigen::Index b = 0; b < n; ++b) {
                for (int l = 0; l < k; ++l) {
                    const std::size_t slot = static_cast<std::size_t>(b) * k + l;
                    const float* tf = &rec->frac[slot * 3];
                    const float* g = up.row(b).data() + static_cast<std::ptrdiff_t>(l) * F;
                    const Matrix<float>& table = params[static_cast<std::size_t>(l)]->value;
                    const float scale = 0.5f * static_cast<float>(res[static_cast<std::size_t>(l)]);
                    float dt[3] = {0.0f, 0.0f, 0.0f};
                    for (int c = 0; c < 8; ++c) {
                        const int bit[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
                        const float* src = table.row(rec->rows[slot * 8 + c]).data();
                        float gf = 0.0f;
                        for (int f = 0; f < F; ++f)
                            gf += g[f] * src[f];
                        for (int d = 0; d < 3; ++d) {
                            float dw = bit[d] ? 1.0f : -1.0f;
                            for (int e = 0; e < 3; ++e)
                                if (e != d)
                                    dw *= bit[e] ? tf[e] : 1.0f - tf[e];
                            dt[d] += gf * dw;
                        }
                    }
                    for (int d = 0; d < 3; ++d)
                        dx(b, d) += dt[d] * scale;
                }
                for (int d = 0; d < 3; ++d)
                    if (!rec->inside[static_cast<std::size_t>(b) * 3 + d])
                        dx(b, d) = 0.0f;
            }
            t.accumulate(coords, dx);
        });
    }

private:
    HashGridConfig cfg_;
    std::vector<int> resolution_;
    std::vector<bool> dense_;
    std::vector<std::size_t> table_ids_;
    mutable std::uint64_t clamped_ = 0;
};

/// Fixed sinusoidal features [sin(2 pi B x), cos(2 pi B x)] with Gaussian
/// frequencies B (width/2 x 3). Has no learnable parameters.
class FourierFeatures {
public:
    FourierFeatures() = default;

    FourierFeatures(int width, double scale, Rng& rng) : width_(width), scale_(scale)
    {
        if (width < 2 || width % 2 != 0)
            throw ConfigError("Fourier feature width must be a positive even number");
        if (!(scale > 0.0))
            throw ConfigError("Fourier feature scale must be positive");
        freq_.resize(width / 2, 3);
        for (Eigen::Index i = 0; i < freq_.size(); ++i)
            freq_.data()[i] = static_cast<float>(2.0 * M_PI * scale * rng.normal());
    }

    int width() const { return width_; }
    double scale() const { return scale_; }
    const Matrix<float>& frequencies() const { return freq_; }

    Tape<float>::Var encode(Tape<float>& tape, Tape<float>::Var coords) const
    {
        const Matrix<float>& x = tape.value(coords);
        if (x.cols() != 3)
            throw ConfigError("Fourier encoding expects n x 3 coordinates");
        Matrix<float> phase = x * freq_.transpose();
        Matrix<float> out(x.rows(), width_);
        out.leftCols(width_ / 2) = phase.array().sin().matrix();
        out.rightCols(width_ / 2) = phase.array().cos().matrix();
        const int half = width_ / 2;
        return tape.custom(std::move(out), tape.needs_grad(coords),
                           [coords, freq = freq_, half, phase = std::move(phase)](Tape<float>& t, const Matrix<float>& up) {
                               Matrix<float> dphase = (up.leftCols(half).array() * phase.array().cos()
                                                       - up.rightCols(half).array() * phase.array().sin())
                                                          .matrix();
                               t.accumulate(coords, dphase * freq);
                           });
    }

private:
    int width_ = 0;
    double scale_ = 1.0;
    Matrix<float> freq_;
};

} // namespace sims
