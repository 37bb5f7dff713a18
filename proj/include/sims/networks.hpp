#pragma once

// The intensity network (coordinate encoder + ReLU MLP, single output) and
// the sine-activated displacement network.

#include "encoding.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace sims {

enum class EncoderKind { hash, fourier };

struct IntensityNetConfig {
    EncoderKind encoder = EncoderKind::hash;
    HashGridConfig grid;
    /// Standard deviation of Fourier frequencies, in cycles per unit of
    /// normalized coordinate.
    double fourier_scale = 8.0;
    int hidden = 1024;
    int hidden_layers = 4;

    int encoding_width() const { return grid.width(); }
    int input_width() const { return encoding_width() + 3; }

    void validate() const
    {
        HashGrid::validate(grid);
        if (hidden < 1 || hidden_layers < 1)
            throw ConfigError("intensity network needs at least one hidden layer of positive width");
        if (encoder == EncoderKind::fourier && (grid.width() % 2 != 0))
            throw ConfigError("Fourier encoder width (levels * features) must be even");
    }

    bool operator==(const IntensityNetConfig& o) const
    {
        return encoder == o.encoder && grid.levels == o.grid.levels && grid.features == o.grid.features
               && grid.log2_table == o.grid.log2_table && grid.min_res == o.grid.min_res
               && grid.max_res == o.grid.max_res && fourier_scale == o.fourier_scale && hidden == o.hidden
               && hidden_layers == o.hidden_layers;
    }
};

struct DisplacementNetConfig {
    int hidden = 256;
    int hidden_layers = 3;
    double omega0 = 32.0;

    void validate() const
    {
        if (hidden < 1 || hidden_layers < 1)
            throw ConfigError("displacement network needs at least one hidden layer of positive width");
        if (!(omega0 > 0.0))
            throw ConfigError("omega0 must be positive");
    }

    bool operator==(const DisplacementNetConfig& o) const
    {
        return hidden == o.hidden && hidden_layers == o.hidden_layers && omega0 == o.omega0;
    }
};

namespace detail {

template <class T>
void fill_uniform(Matrix<T>& m, double bound, Rng& rng)
{
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

} // namespace detail

/// f(x): encoded coordinate concatenated with the raw coordinate, through a
/// ReLU MLP to one intensity.
class IntensityNet {
public:
    IntensityNet() = default;

    IntensityNet(const IntensityNetConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed)
    {
        cfg.validate();
        Rng rng(derive_seed(seed, 101));
        if (cfg.encoder == EncoderKind::hash)
            encoder_ = HashGrid(cfg.grid, store_, rng);
        else
            encoder_ = FourierFeatures(cfg.grid.width(), cfg.fourier_scale, rng);

        int fan_in = cfg.input_width();
        for (int l = 0; l <= cfg.hidden_layers; ++l) {
            const int fan_out = l == cfg.hidden_layers ? 1 : cfg.hidden;
            const std::string tag = "mlp." + std::to_string(l);
            const std::size_t w = store_.add(tag + ".weight", fan_out, fan_in);
            const std::size_t b = store_.add(tag + ".bias", 1, fan_out);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            detail::fill_uniform(store_[w].value, bound, rng);
            detail::fill_uniform(store_[b].value, bound, rng);
            layers_.emplace_back(w, b);
            fan_in = fan_out;
        }
    }

    const IntensityNetConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore<float>& params() { return store_; }
    const ParamStore<float>& params() const { return store_; }
    int levels() const { return cfg_.grid.levels; }

    const HashGrid* grid() const { return std::get_if<HashGrid>(&encoder_); }

    /// coords: n x 3 normalized coordinates -> n x 1 normalized intensities.
    Tape<float>::Var forward(Tape<float>& tape, Tape<float>::Var coords, int active_levels)
    {
        Tape<float>::Var enc;
        if (const auto* g = std::get_if<HashGrid>(&encoder_))
            enc = g->encode(tape, coords, active_levels, store_);
        else
            enc = std::get<FourierFeatures>(encoder_).encode(tape, coords);
        Tape<float>::Var h = tape.concat_cols(enc, coords);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = tape.linear(h, store_[layers_[l].first], store_[layers_[l].second]);
            if (l + 1 < layers_.size())
                h = tape.relu(h);
        }
        return h;
    }

    /// Evaluation with all levels active and no gradient bookkeeping.
    Matrix<float> predict(const Matrix<float>& coords)
    {
        FreezeGuard<float> guard(store_);
        Tape<float> tape;
        auto out = forward(tape, tape.constant(coords), levels());
        return tape.value(out);
    }

private:
    IntensityNetConfig cfg_;
    std::uint64_t seed_ = 0;
    ParamStore<float> store_;
    std::variant<HashGrid, FourierFeatures> encoder_;
    std::vector<std::pair<std::size_t, std::size_t>> layers_;
};

/// g(x): sine-activated MLP 3 -> hidden^k -> 3 predicting a displacement.
/// The output layer starts at zero, so x + g(x) is the identity at init.
/// Evaluated in double precision so that finite-difference curvature
/// estimates stay well above rounding noise.
class DisplacementNet {
public:
    using Scalar = double;

    DisplacementNet() = default;

    DisplacementNet(const DisplacementNetConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed)
    {
        cfg.validate();
        Rng rng(derive_seed(seed, 202));
        int fan_in = 3;
        for (int l = 0; l <= cfg.hidden_layers; ++l) {
            const bool last = l == cfg.hidden_layers;
            const int fan_out = last ? 3 : cfg.hidden;
            const std::string tag = "siren." + std::to_string(l);
            const std::size_t w = store_.add(tag + ".weight", fan_out, fan_in);
            const std::size_t b = store_.add(tag + ".bias", 1, fan_out);
            if (!last) {
                const double wb = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / cfg.omega0;
                detail::fill_uniform(store_[w].value, wb, rng);
                detail::fill_uniform(store_[b].value, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
            }
            layers_.emplace_back(w, b);
            fan_in = fan_out;
        }
    }

    const DisplacementNetConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore<double>& params() { return store_; }
    const ParamStore<double>& params() const { return store_; }

    /// coords: n x 3 -> displacement n x 3.
    Tape<double>::Var forward(Tape<double>& tape, Tape<double>::Var coords)
    {
        Tape<double>::Var h = coords;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = tape.linear(h, store_[layers_[l].first], store_[layers_[l].second]);
            if (l + 1 < layers_.size())
                h = tape.sine(h, cfg_.omega0);
        }
        return h;
    }

    Matrix<double> displacement(const Matrix<double>& coords)
    {
        FreezeGuard<double> guard(store_);
        Tape<double> tape;
        auto out = forward(tape, tape.constant(coords));
        return tape.value(out);
    }

    /// x' = x + g(x)
    Matrix<double> transform(const Matrix<double>& coords) { return coords + displacement(coords); }

    /// Indices of the output layer's (weight, bias).
    std::pair<std::size_t, std::size_t> output_layer() const { return layers_.back(); }

private:
    DisplacementNetConfig cfg_;
    std::uint64_t seed_ = 0;
    ParamStore<double> store_;
    std::vector<std::pair<std::size_t, std::size_t>> layers_;
};

} // namespace sims
