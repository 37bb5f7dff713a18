#pragma once

// Pipeline hyperparameters and their JSON key tree. Struct defaults carry
// the full-size published settings; PipelineConfig::phantom() is the
// desk-scale preset used for simulated 64^3 runs on a CPU.

#include "losses.hpp"
#include "networks.hpp"
#include "optim.hpp"
#include "volume.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace sims {

using json = nlohmann::json;

struct Phase1Config {
    std::int64_t steps = 20000;
    int batch = 50000;
    OptimizerSpec optimizer{};
    bool progressive = true;
    double unlock_fraction = 0.5;
    LossKind loss = LossKind::mse;
};

struct Phase2Config {
    std::int64_t steps = 10000;
    int batch = 50000;
    OptimizerSpec optimizer{OptimizerKind::adam, 1e-5, 0.0, 0.9, 0.999, 1e-8, ScheduleKind::constant, 0.0};
    double bending_weight = 1000.0;
    int bending_points = 4096;
    double bending_step = 1e-3;
};

struct Phase3Config {
    std::int64_t steps = 10000;
    int batch = 50000;
    OptimizerSpec optimizer{};
    /// Fraction of each batch drawn from the registered second view.
    double coronal_weight = 0.5;
    bool progressive = false;
    double unlock_fraction = 0.5;
    LossKind loss = LossKind::mse;
};

struct InferenceConfig {
    int chunk = 65536;
    double memory_budget_mb = 2048.0;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    IntensityNetConfig intensity{};
    DisplacementNetConfig displacement{};
    Phase1Config phase1{};
    Phase2Config phase2{};
    Phase3Config phase3{};
    InferenceConfig inference{};
    NormalizationOptions normalization{};

    /// Published full-size settings.
    static PipelineConfig paper() { return PipelineConfig{}; }

    /// Reduced widths, table sizes, batches and step counts for 64^3
    /// phantoms on a single CPU core.
    static PipelineConfig phantom()
    {
        PipelineConfig c;
        c.intensity.grid.levels = 8;
        c.intensity.grid.features = 4;
        c.intensity.grid.log2_table = 16;
        c.intensity.grid.min_res = 8;
        c.intensity.grid.max_res = 96;
        c.intensity.fourier_scale = 6.0;
        c.intensity.hidden = 64;
        c.intensity.hidden_layers = 4;
        c.displacement.hidden = 64;
        c.displacement.hidden_layers = 3;
        c.displacement.omega0 = 8.0;
        c.phase1.steps = 3000;
        c.phase1.batch = 4096;
        c.phase2.steps = 2000;
        c.phase2.batch = 4096;
        c.phase2.optimizer.lr = 3e-4;
        c.phase2.optimizer.schedule = ScheduleKind::cosine;
        c.phase2.bending_weight = 1.0;
        c.phase2.bending_points = 256;
        c.phase3.steps = 2000;
        c.phase3.batch = 4096;
        return c;
    }

    void validate() const
    {
        intensity.validate();
        displacement.validate();
        auto check_phase = [](const char* name, std::int64_t steps, int batch, const OptimizerSpec& opt) {
            if (steps < 1)
                throw ConfigError(std::string(name) + ": steps must be >= 1");
            if (batch < 1)
                throw ConfigError(std::string(name) + ": batch size must be >= 1");
            opt.validate();
        };
        check_phase("phase1", phase1.steps, phase1.batch, phase1.optimizer);
        check_phase("phase2", phase2.steps, phase2.batch, phase2.optimizer);
        check_phase("phase3", phase3.steps, phase3.batch, phase3.optimizer);
        if (!(phase1.unlock_fraction > 0.0 && phase1.unlock_fraction <= 1.0)
            || !(phase3.unlock_fraction > 0.0 && phase3.unlock_fraction <= 1.0))
            throw ConfigError("unlock fraction must lie in (0, 1]");
        if (phase2.bending_weight < 0.0)
            throw ConfigError("bending weight must be non-negative");
        if (phase2.bending_points < 1 || !(phase2.bending_step > 0.0 && phase2.bending_step < 0.25))
            throw ConfigError("bending energy needs >= 1 probe point and a step in (0, 0.25)");
        if (phase2.batch < 2)
            throw ConfigError("phase2: NCC needs a batch of at least 2");
        if (!(phase3.coronal_weight >= 0.0 && phase3.coronal_weight <= 1.0))
            throw ConfigError("phase3: coronal weight must lie in [0, 1]");
        if (inference.chunk < 1 || !(inference.memory_budget_mb > 0.0))
            throw ConfigError("inference chunk and memory budget must be positive");
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adamw, "adamw"}, {OptimizerKind::adam, "adam"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ScheduleKind, {{ScheduleKind::constant, "constant"}, {ScheduleKind::cosine, "cosine"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LossKind, {{LossKind::mse, "mse"}, {LossKind::l1, "l1"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EncoderKind, {{EncoderKind::hash, "hash"}, {EncoderKind::fourier, "fourier"}})

// Every struct reads with its current values as defaults, so partial JSON
// documents override only the keys they name.
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerSpec, kind, lr, weight_decay, beta1, beta2, epsilon,
                                                schedule, lr_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HashGridConfig, levels, features, log2_table, min_res, max_res,
                                                init_range)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IntensityNetConfig, encoder, grid, fourier_scale, hidden,
                                                hidden_layers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DisplacementNetConfig, hidden, hidden_layers, omega0)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Phase1Config, steps, batch, optimizer, progressive, unlock_fraction,
                                                loss)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Phase2Config, steps, batch, optimizer, bending_weight,
                                                bending_points, bending_step)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Phase3Config, steps, batch, optimizer, coronal_weight, progressive,
                                                unlock_fraction, loss)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InferenceConfig, chunk, memory_budget_mb)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NormalizationOptions, percentile_clip)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, seed, intensity, displacement, phase1, phase2, phase3,
                                                inference, normalization)

/// Applies a (possibly partial) JSON document on top of `base`.
inline PipelineConfig merge_config(PipelineConfig base, const json& overrides)
{
    json merged = base;
    merged.merge_patch(overrides);
    try {
        PipelineConfig out = merged.get<PipelineConfig>();
        return out;
    }
    catch (const json::exception& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
}

} // namespace sims
