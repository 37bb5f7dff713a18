#pragma once

// Whole-pipeline driver: phases 1 -> 2 -> 3 with a checkpoint after each,
// resumable from any phase boundary.

#include "checkpoint.hpp"
#include "pipeline.hpp"

#include <functional>
#include <vector>

namespace sims {

struct RunOptions {
    /// Skip phase 2; phase 3 then uses identity alignment.
    bool skip_registration = false;
    /// Stop after this phase (1..3).
    int last_phase = 3;
    StepCallback on_step;
    std::function<void(const Checkpoint&)> on_phase_end;
};

/// Fresh state: frame built jointly from both views, networks initialized
/// from the config seed.
inline Checkpoint start_run(const PipelineConfig& cfg, const Volume& axial, const Volume& coronal)
{
    cfg.validate();
    Checkpoint st;
    st.config = cfg;
    st.frame = build_normalization({&axial, &coronal}, cfg.normalization);
    st.net = IntensityNet(cfg.intensity, cfg.seed);
    st.reg = DisplacementNet(cfg.displacement, cfg.seed);
    st.rng_state = Rng(derive_seed(cfg.seed, 303)).state();
    st.completed_phase = 0;
    return st;
}

/// Runs the phases after `st.completed_phase` up to `opts.last_phase`,
/// updating `st` in place. Returns the step history of the phases run.
inline std::vector<StepRecord> run_phases(Checkpoint& st, const Volume& axial, const Volume& coronal,
                                          const RunOptions& opts = {})
{
    st.config.validate();
    Rng rng;
    rng.restore(st.rng_state);
    std::vector<StepRecord> history;
    auto keep = [&history](std::vector<StepRecord> h) { history.insert(history.end(), h.begin(), h.end()); };

    for (int phase = st.completed_phase + 1; phase <= opts.last_phase && phase <= 3; ++phase) {
        switch (phase) {
        case 1:
            keep(phase1_train(st.net, axial, st.frame, st.config.phase1, rng, opts.on_step));
            break;
        case 2:
            if (!opts.skip_registration)
                keep(phase2_train(st.net, st.reg, coronal, st.frame, st.config.phase2, rng, opts.on_step));
            break;
        case 3:
            keep(phase3_train(st.net, opts.skip_registration ? nullptr : &st.reg, axial, coronal, st.frame,
                              st.config.phase3, rng, opts.on_step));
            break;
        }
        st.completed_phase = phase;
        st.rng_state = rng.state();
        if (opts.on_phase_end)
            opts.on_phase_end(st);
    }
    return history;
}

} // namespace sims
