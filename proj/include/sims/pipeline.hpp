#pragma once

// The three training phases and isotropic grid inference.
//
// Phase 1 fits f_theta to the axial view; phase 2 freezes f_theta and fits
// the displacement net so that f_theta(x + g(x)) correlates with the coronal
// view; phase 3 refines f_theta on both views through the frozen g.

#include "config.hpp"
#include "losses.hpp"
#include "networks.hpp"
#include "optim.hpp"
#include "volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sims {

struct TrainBatch {
    Matrix<double> coords; // n x 3, normalized
    Matrix<float> target;  // n x 1, normalized
    std::vector<std::uint8_t> mask;

    Eigen::Index size() const { return coords.rows(); }
};

/// n voxels drawn uniformly with replacement; coordinates are voxel centers
/// mapped through the frame.
inline TrainBatch sample_batch(const Volume& view, const NormalizationFrame& frame, int n, Rng& rng)
{
    if (n < 1)
        throw ConfigError("batch size must be >= 1");
    TrainBatch b;
    b.coords.resize(n, 3);
    b.target.resize(n, 1);
    b.mask.assign(static_cast<std::size_t>(n), 1);
    const std::uint64_t total = view.size();
    const auto nx = static_cast<std::uint64_t>(view.dims[0]);
    const auto ny = static_cast<std::uint64_t>(view.dims[1]);
    for (int r = 0; r < n; ++r) {
        const std::uint64_t flat = rng.below(total);
        const Vec3 idx(static_cast<double>(flat % nx), static_cast<double>((flat / nx) % ny),
                       static_cast<double>(flat / (nx * ny)));
        b.coords.row(r) = frame.to_normalized(voxel_to_world(view, idx)).transpose();
        b.target(r, 0) = static_cast<float>(frame.normalize_intensity(view.data[flat]));
    }
    return b;
}

/// Number of hash levels unlocked at `step`: a linear ramp reaching all
/// levels at unlock_fraction * total_steps.
inline int active_levels(std::int64_t step, std::int64_t total_steps, double unlock_fraction, int levels)
{
    if (total_steps < 1 || step < 0 || step > total_steps)
        throw ConfigError("active_levels: step out of range");
    if (!(unlock_fraction > 0.0 && unlock_fraction <= 1.0))
        throw ConfigError("active_levels: unlock fraction must lie in (0, 1]");
    const double ramp = unlock_fraction * static_cast<double>(total_steps);
    const double k = std::ceil(static_cast<double>(levels) * static_cast<double>(step) / ramp);
    return static_cast<int>(std::clamp(k, 1.0, static_cast<double>(levels)));
}

struct StepRecord {
    int phase = 0;
    std::int64_t step = 0;
    double loss = 0.0;
    /// Phase 2 only: the correlation term and the unweighted bending energy.
    double ncc = 0.0;
    double bending = 0.0;
    double lr = 0.0;
    int active_levels = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

inline json to_json_record(const StepRecord& r)
{
    json j{{"phase", r.phase}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}};
    if (r.phase == 2) {
        j["ncc"] = r.ncc;
        j["bending"] = r.bending;
    }
    else {
        j["active_levels"] = r.active_levels;
    }
    return j;
}

/// Clears moments and the step counter so a phase starts a fresh optimizer.
template <class T>
void reset_optimizer(ParamStore<T>& store)
{
    for (auto& p : store) {
        p.m.setZero();
        p.v.setZero();
        p.grad.setZero();
    }
    store.step = 0;
}

namespace detail {

inline Matrix<float> to_float(const Matrix<double>& m) { return m.cast<float>(); }

inline void check_loss(double loss, int phase, std::int64_t step)
{
    if (!std::isfinite(loss))
        throw NumericalError("phase " + std::to_string(phase) + ": non-finite loss at step " + std::to_string(step));
}

template <class Fn>
auto with_context(int phase, std::int64_t step, Fn&& fn)
{
    try {
        return fn();
    }
    catch (const NumericalError& e) {
        const std::string what = e.what();
        if (what.rfind("phase ", 0) == 0)
            throw;
        throw NumericalError("phase " + std::to_string(phase) + ", step " + std::to_string(step) + ": " + what);
    }
}

/// One reconstruction step on an assembled batch; returns the loss.
inline double fit_step(IntensityNet& net, const TrainBatch& batch, int levels, LossKind loss_kind,
                       const OptimizerSpec& opt, double lr)
{
    Tape<float> tape;
    auto x = tape.constant(to_float(batch.coords));
    auto pred = net.forward(tape, x, levels);
    auto loss = reconstruction_loss(tape, pred, batch.target, batch.mask, loss_kind);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value))
        throw NumericalError("non-finite loss");
    net.params().zero_grad();
    tape.backward(loss);
    optimizer_step(net.params(), opt, lr);
    return value;
}

} // namespace detail

/// Phase 1: fit f_theta to the reference (axial) view. Starts a fresh
/// optimizer; returns the per-step history.
inline std::vector<StepRecord> phase1_train(IntensityNet& net, const Volume& axial, const NormalizationFrame& frame,
                                            const Phase1Config& cfg, Rng& rng, const StepCallback& on_step = {})
{
    frame.validate();
    reset_optimizer(net.params());
    std::vector<StepRecord> history;
    history.reserve(static_cast<std::size_t>(cfg.steps));
    for (std::int64_t s = 0; s < cfg.steps; ++s) {
        StepRecord rec;
        rec.phase = 1;
        rec.step = s;
        rec.lr = scheduled_lr(cfg.optimizer, s, cfg.steps);
        rec.active_levels = cfg.progressive ? active_levels(s, cfg.steps, cfg.unlock_fraction, net.levels())
                                            : net.levels();
        const TrainBatch batch = sample_batch(axial, frame, cfg.batch, rng);
        rec.loss = detail::with_context(1, s, [&] {
            return detail::fit_step(net, batch, rec.active_levels, cfg.loss, cfg.optimizer, rec.lr);
        });
        history.push_back(rec);
        if (on_step)
            on_step(rec);
    }
    return history;
}

/// Phase 2: fit g_phi with f_theta frozen. Loss = -NCC(f(x + g(x)), I_cor(x))
/// + alpha * bending energy. A batch with constant signal is redrawn once.
inline std::vector<StepRecord> phase2_train(IntensityNet& net, DisplacementNet& reg, const Volume& coronal,
                                            const NormalizationFrame& frame, const Phase2Config& cfg, Rng& rng,
                                            const StepCallback& on_step = {})
{
    frame.validate();
    FreezeGuard<float> freeze(net.params());
    reset_optimizer(reg.params());
    std::vector<StepRecord> history;
    history.reserve(static_cast<std::size_t>(cfg.steps));
    const double h = cfg.bending_step;

    for (std::int64_t s = 0; s < cfg.steps; ++s) {
        StepRecord rec;
        rec.phase = 2;
        rec.step = s;
        rec.lr = scheduled_lr(cfg.optimizer, s, cfg.steps);
        rec.active_levels = net.levels();

        std::unique_ptr<Tape<double>> tape;
        Tape<double>::Var xp;
        Matrix<double> dncc; // d(ncc)/d(x')
        for (int attempt = 0;; ++attempt) {
            const TrainBatch batch = sample_batch(coronal, frame, cfg.batch, rng);
            tape = std::make_unique<Tape<double>>();
            auto x = tape->constant(batch.coords);
            xp = tape->add(x, reg.forward(*tape, x));

            Tape<float> ftape;
            auto xpf = ftape.variable(detail::to_float(tape->value(xp)));
            auto pred = net.forward(ftape, xpf, net.levels());
            try {
                auto r = ncc_loss(ftape, pred, batch.target);
                rec.ncc = ftape.value(r)(0, 0);
                ftape.backward(r);
                dncc = ftape.grad(xpf).cast<double>();
                break;
            }
            catch (const NumericalError& e) {
                if (attempt >= 1)
                    throw NumericalError("phase 2, step " + std::to_string(s) + ": " + e.what()
                                         + " (repeated after resampling)");
            }
        }

        Tape<double>& dtape = *tape;
        Matrix<double> points(cfg.bending_points, 3);
        for (Eigen::Index i = 0; i < points.size(); ++i)
            points.data()[i] = rng.uniform(-1.0, 1.0);
        auto field = [&reg](Tape<double>& t, Tape<double>::Var c) { return reg.forward(t, c); };
        auto bend = bending_energy(dtape, field, points, h);
        rec.bending = dtape.value(bend)(0, 0);

        auto sim = dtape.dot_constant(xp, -dncc);
        auto total = dtape.add(sim, dtape.scale(bend, cfg.bending_weight));
        rec.loss = -rec.ncc + cfg.bending_weight * rec.bending;
        detail::check_loss(rec.loss, 2, s);

        reg.params().zero_grad();
        dtape.backward(total);
        detail::with_context(2, s, [&] {
            optimizer_step(reg.params(), cfg.optimizer, rec.lr);
            return 0;
        });
        history.push_back(rec);
        if (on_step)
            on_step(rec);
    }
    return history;
}

/// Maps normalized coronal-space coordinates into the reference space;
/// a null registration is the identity.
inline Matrix<double> register_coords(DisplacementNet* reg, const Matrix<double>& coords)
{
    return reg ? reg->transform(coords) : coords;
}

/// Phase 3: refine f_theta on both views. A fraction `coronal_weight` of each
/// batch comes from the coronal view, supervised at its registered position;
/// registered points leaving [-1, 1]^3 are masked out. `reg` may be null
/// (identity alignment).
inline std::vector<StepRecord> phase3_train(IntensityNet& net, DisplacementNet* reg, const Volume& axial,
                                            const Volume& coronal, const NormalizationFrame& frame,
                                            const Phase3Config& cfg, Rng& rng, const StepCallback& on_step = {})
{
    frame.validate();
    std::optional<FreezeGuard<double>> freeze;
    if (reg)
        freeze.emplace(reg->params());
    reset_optimizer(net.params());
    const int n_cor = static_cast<int>(std::lround(cfg.coronal_weight * cfg.batch));
    const int n_ax = cfg.batch - n_cor;

    std::vector<StepRecord> history;
    history.reserve(static_cast<std::size_t>(cfg.steps));
    for (std::int64_t s = 0; s < cfg.steps; ++s) {
        StepRecord rec;
        rec.phase = 3;
        rec.step = s;
        rec.lr = scheduled_lr(cfg.optimizer, s, cfg.steps);
        rec.active_levels = cfg.progressive ? active_levels(s, cfg.steps, cfg.unlock_fraction, net.levels())
                                            : net.levels();

        TrainBatch batch;
        if (n_ax > 0)
            batch = sample_batch(axial, frame, n_ax, rng);
        if (n_cor > 0) {
            TrainBatch cor = sample_batch(coronal, frame, n_cor, rng);
            cor.coords = register_coords(reg, cor.coords);
            for (Eigen::Index i = 0; i < cor.size(); ++i)
                if (cor.coords.row(i).cwiseAbs().maxCoeff() > 1.0)
                    cor.mask[static_cast<std::size_t>(i)] = 0;
            if (n_ax == 0) {
                batch = std::move(cor);
            }
            else {
                Matrix<double> coords(batch.size() + cor.size(), 3);
                coords << batch.coords, cor.coords;
                Matrix<float> target(batch.size() + cor.size(), 1);
                target << batch.target, cor.target;
                batch.coords = std::move(coords);
                batch.target = std::move(target);
                batch.mask.insert(batch.mask.end(), cor.mask.begin(), cor.mask.end());
            }
        }
        rec.loss = detail::with_context(3, s, [&] {
            return detail::fit_step(net, batch, rec.active_levels, cfg.loss, cfg.optimizer, rec.lr);
        });
        history.push_back(rec);
        if (on_step)
            on_step(rec);
    }
    return history;
}

/// Isotropic grid over the axial view's world box at its finest in-plane
/// spacing.
inline Volume default_grid(const Volume& axial)
{
    const Vec3 spacing = axial.spacing();
    const double s = std::min(spacing[0], spacing[1]);
    const auto [lo, hi] = world_bounds(axial);
    return make_grid(lo, hi, s);
}

/// Evaluates f_theta at every voxel center of `grid` (its geometry is kept,
/// its data overwritten) and returns intensities in input units.
inline Volume infer_grid(IntensityNet& net, const NormalizationFrame& frame, Volume grid, const InferenceConfig& cfg = {})
{
    frame.validate();
    if (cfg.chunk < 1)
        throw ConfigError("inference chunk must be >= 1");
    const double budget = cfg.memory_budget_mb * 1024.0 * 1024.0;
    const double out_bytes = static_cast<double>(grid.size()) * sizeof(float);
    if (out_bytes > budget)
        throw ConfigError("inference grid of " + std::to_string(grid.size()) + " voxels exceeds the "
                          + std::to_string(cfg.memory_budget_mb) + " MB budget; use a coarser spacing or a smaller box");
    const auto& icfg = net.config();
    const double per_row = sizeof(float) * 2.0 * (icfg.input_width() + icfg.hidden * (icfg.hidden_layers + 1) + 3);
    if (out_bytes + per_row * cfg.chunk > budget) {
        const auto fit = static_cast<long long>(std::max(0.0, (budget - out_bytes) / per_row));
        throw ConfigError("inference chunk of " + std::to_string(cfg.chunk) + " points exceeds the memory budget; "
                          + "set inference.chunk to at most " + std::to_string(fit));
    }

    const std::size_t total = grid.size();
    const auto nx = static_cast<std::size_t>(grid.dims[0]);
    const auto ny = static_cast<std::size_t>(grid.dims[1]);
    for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(cfg.chunk)) {
        const std::size_t count = std::min(total - start, static_cast<std::size_t>(cfg.chunk));
        Matrix<float> coords(static_cast<Eigen::Index>(count), 3);
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t flat = start + r;
            const Vec3 idx(static_cast<double>(flat % nx), static_cast<double>((flat / nx) % ny),
                           static_cast<double>(flat / (nx * ny)));
            coords.row(static_cast<Eigen::Index>(r)) =
                frame.to_normalized(voxel_to_world(grid, idx)).cast<float>().transpose();
        }
        const Matrix<float> out = net.predict(coords);
        for (std::size_t r = 0; r < count; ++r)
            grid.data[start + r] = static_cast<float>(frame.denormalize_intensity(out(static_cast<Eigen::Index>(r), 0)));
    }
    return grid;
}

/// World-space displacement (mm) of the registration, x' - x, sampled at the
/// voxel centers of `grid`; one volume per component.
inline std::array<Volume, 3> sample_displacement(DisplacementNet& reg, const NormalizationFrame& frame,
                                                 const Volume& grid)
{
    const std::size_t total = grid.size();
    const auto nx = static_cast<std::size_t>(grid.dims[0]);
    const auto ny = static_cast<std::size_t>(grid.dims[1]);
    Matrix<double> coords(static_cast<Eigen::Index>(total), 3);
    for (std::size_t flat = 0; flat < total; ++flat) {
        const Vec3 idx(static_cast<double>(flat % nx), static_cast<double>((flat / nx) % ny),
                       static_cast<double>(flat / (nx * ny)));
        coords.row(static_cast<Eigen::Index>(flat)) = frame.to_normalized(voxel_to_world(grid, idx)).transpose();
    }
    const Matrix<double> d = reg.displacement(coords);
    const Vec3 half = frame.half_extent();
    std::array<Volume, 3> out{Volume(grid.dims, grid.affine), Volume(grid.dims, grid.affine),
                              Volume(grid.dims, grid.affine)};
    for (std::size_t flat = 0; flat < total; ++flat)
        for (int c = 0; c < 3; ++c)
            out[static_cast<std::size_t>(c)].data[flat] =
                static_cast<float>(d(static_cast<Eigen::Index>(flat), c) * half[c]);
    return out;
}

/// Mean world-space distance (mm) between the registered position of each
/// foreground voxel of `view` and its true position `truth * p`, where p is
/// the voxel's header world position. Foreground: intensity above
/// `threshold` of the view's range. A null registration is the identity.
inline double mean_alignment_error(DisplacementNet* reg, const NormalizationFrame& frame, const Volume& view,
                                   const Affine& truth, double threshold = 0.05)
{
    const auto [mn, mx] = std::minmax_element(view.data.begin(), view.data.end());
    const double cut = *mn + threshold * (*mx - *mn);
    std::vector<Vec3> world;
    const auto nx = static_cast<std::size_t>(view.dims[0]);
    const auto ny = static_cast<std::size_t>(view.dims[1]);
    for (std::size_t flat = 0; flat < view.size(); ++flat) {
        if (view.data[flat] <= cut)
            continue;
        const Vec3 idx(static_cast<double>(flat % nx), static_cast<double>((flat / nx) % ny),
                       static_cast<double>(flat / (nx * ny)));
        world.push_back(voxel_to_world(view, idx));
    }
    if (world.empty())
        throw DataError("alignment error: no foreground voxels");
    Matrix<double> coords(static_cast<Eigen::Index>(world.size()), 3);
    for (std::size_t i = 0; i < world.size(); ++i)
        coords.row(static_cast<Eigen::Index>(i)) = frame.to_normalized(world[i]).transpose();
    const Matrix<double> moved = register_coords(reg, coords);
    double acc = 0.0;
    for (std::size_t i = 0; i < world.size(); ++i) {
        const Vec3 got = frame.to_world(moved.row(static_cast<Eigen::Index>(i)).transpose());
        const Vec3 want = (truth * world[i].homogeneous()).head<3>();
        acc += (got - want).norm();
    }
    return acc / static_cast<double>(world.size());
}

} // namespace sims
