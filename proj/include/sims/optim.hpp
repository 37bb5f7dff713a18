#pragma once

#include "tensor.hpp"

#include <cmath>
#include <cstdint>

namespace sims {

enum class OptimizerKind {
    adamw, ///< Adam with decoupled weight decay
    adam,  ///< plain Adam; weight decay (if any) is added to the gradient
};

enum class ScheduleKind { constant, cosine };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::adamw;
    double lr = 1.2e-3;
    double weight_decay = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    ScheduleKind schedule = ScheduleKind::cosine;
    double lr_floor = 0.0;

    void validate() const
    {
        if (!(beta1 > 0.0 && beta1 < 1.0))
            throw ConfigError("beta1 must lie in (0, 1)");
        if (!(beta2 > 0.0 && beta2 < 1.0))
            throw ConfigError("beta2 must lie in (0, 1)");
        if (!(epsilon > 0.0))
            throw ConfigError("epsilon must be positive");
        if (!(lr > 0.0))
            throw ConfigError("learning rate must be positive");
        if (weight_decay < 0.0)
            throw ConfigError("weight decay must be non-negative");
        if (lr_floor < 0.0)
            throw ConfigError("learning-rate floor must be non-negative");
    }
};

/// Learning rate at `step` of a run lasting `total_steps`.
inline double scheduled_lr(const OptimizerSpec& spec, std::int64_t step, std::int64_t total_steps)
{
    if (total_steps <= 0)
        throw ConfigError("schedule requires total_steps > 0");
    if (step < 0 || step > total_steps)
        throw ConfigError("schedule step out of range");
    if (spec.schedule == ScheduleKind::constant)
        return spec.lr;
    const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
    return spec.lr_floor + (spec.lr - spec.lr_floor) * 0.5 * (1.0 + std::cos(phase));
}

/// One bias-corrected Adam/AdamW update at learning rate `lr` over every
/// non-frozen parameter. Advances the store's step counter.
template <class T>
void optimizer_step(ParamStore<T>& store, const OptimizerSpec& spec, double lr)
{
    for (const auto& p : store) {
        if (p.frozen)
            continue;
        if (!p.grad.allFinite())
            throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
    }
    store.step += 1;
    const double t = static_cast<double>(store.step);
    const double bc1 = 1.0 - std::pow(spec.beta1, t);
    const double bc2 = 1.0 - std::pow(spec.beta2, t);
    const T b1 = static_cast<T>(spec.beta1);
    const T b2 = static_cast<T>(spec.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(spec.epsilon);
    const bool decoupled = spec.kind == OptimizerKind::adamw;
    const T decay_factor = static_cast<T>(1.0 - lr * spec.weight_decay);
    const T l2 = static_cast<T>(spec.weight_decay);

    for (auto& p : store) {
        if (p.frozen)
            continue;
        T* w = p.value.data();
        const T* g = p.grad.data();
        T* m = p.m.data();
        T* v = p.v.data();
        const Eigen::Index n = p.value.size();
        for (Eigen::Index i = 0; i < n; ++i) {
            T gi = g[i];
            if (decoupled)
                w[i] *= decay_factor;
            else if (l2 != T(0))
                gi += l2 * w[i];
            m[i] = b1 * m[i] + (T(1) - b1) * gi;
            v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
            const T denom = std::sqrt(v[i]) * inv_sqrt_bc2 + eps;
            w[i] -= step_size * m[i] / denom;
        }
    }
}

} // namespace sims
