#pragma once

// Subcommand implementations behind the `sims` executable. Each returns a
// process exit code; errors propagate as sims::Error subclasses and are
// mapped to codes by exit_code_for().

#include "metrics.hpp"
#include "nifti.hpp"
#include "run.hpp"
#include "simulate.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifndef SIMS_VERSION
#define SIMS_VERSION "dev"
#endif

namespace sims {

namespace fs = std::filesystem;

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_config = 2,
    exit_data = 3,
    exit_numerical = 4,
    exit_no_metrics = 5,
};

inline int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e))
        return exit_config;
    if (dynamic_cast<const DataError*>(&e))
        return exit_data;
    if (dynamic_cast<const NumericalError*>(&e))
        return exit_numerical;
    return exit_failure;
}

NLOHMANN_JSON_SERIALIZE_ENUM(SliceModel, {{SliceModel::block_mean, "block_mean"}, {SliceModel::subsample, "subsample"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomSpec, size, seed, structures, texture_octaves, texture_strength,
                                                contrast_lo, contrast_hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DegradationSpec, factor, rotation, slice_model, noise_sigma,
                                                noise_seed)

namespace detail {

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw DataError("cannot write '" + path.string() + "'");
    os << text;
    if (!os)
        throw DataError("write failed for '" + path.string() + "'");
}

inline void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

} // namespace detail

// ---- simulate -------------------------------------------------------------

struct SimulateOptions {
    fs::path out_dir = "sim";
    PhantomSpec phantom;
    DegradationSpec degradation;
};

/// Writes phantom.nii.gz, axial.nii.gz, coronal.nii.gz and provenance.json.
inline int cmd_simulate(const SimulateOptions& o, std::ostream& log = std::cout)
{
    o.phantom.validate();
    o.degradation.validate();
    detail::ensure_dir(o.out_dir);
    const Volume truth = make_phantom(o.phantom);
    const SimulatedPair pair = simulate_pair(truth, o.degradation);
    write_volume(pair.truth, (o.out_dir / "phantom.nii.gz").string());
    write_volume(pair.axial, (o.out_dir / "axial.nii.gz").string());
    write_volume(pair.coronal, (o.out_dir / "coronal.nii.gz").string());
    const json prov{{"tool", "sims simulate"},
                    {"version", SIMS_VERSION},
                    {"phantom", o.phantom},
                    {"degradation", o.degradation},
                    {"files", {{"truth", "phantom.nii.gz"}, {"axial", "axial.nii.gz"}, {"coronal", "coronal.nii.gz"}}}};
    detail::write_text(o.out_dir / "provenance.json", prov.dump(2) + "\n");
    log << "wrote phantom, axial and coronal volumes to " << o.out_dir.string() << "\n";
    return exit_ok;
}

// ---- superres -------------------------------------------------------------

struct SuperresOptions {
    fs::path axial;
    fs::path coronal;
    fs::path out_dir = "run";
    PipelineConfig config = PipelineConfig::phantom();
    bool skip_registration = false;
    std::optional<fs::path> resume;
    /// Spacing (mm) of the grid the displacement field is written on.
    double displacement_spacing = 4.0;
    /// Print a progress line every this many steps (0 = silent).
    int progress_every = 500;
};

/// Runs the pipeline and writes config.json (before any compute),
/// checkpoint_phase{1,2,3}.ckpt, run_log.jsonl, reconstruction.nii.gz and
/// displacement_{x,y,z}.nii.gz.
inline int cmd_superres(const SuperresOptions& o, std::ostream& log = std::cout)
{
    o.config.validate();
    detail::ensure_dir(o.out_dir);
    const json snapshot{{"version", SIMS_VERSION},
                        {"axial", o.axial.string()},
                        {"coronal", o.coronal.string()},
                        {"skip_registration", o.skip_registration},
                        {"resume", o.resume ? o.resume->string() : ""},
                        {"deterministic", true},
                        {"pipeline", o.config}};
    detail::write_text(o.out_dir / "config.json", snapshot.dump(2) + "\n");

    const Volume axial = read_volume(o.axial.string());
    const Volume coronal = read_volume(o.coronal.string());

    Checkpoint st;
    if (o.resume) {
        st = load_checkpoint(o.resume->string());
        if (!same_architecture(st.config, o.config))
            throw ConfigError("checkpoint '" + o.resume->string()
                              + "' was written with a different network architecture");
        // Training settings for the remaining phases come from the current config.
        st.config = o.config;
        log << "resuming after phase " << st.completed_phase << "\n";
    }
    else {
        st = start_run(o.config, axial, coronal);
    }

    const fs::path log_path = o.out_dir / "run_log.jsonl";
    std::ofstream run_log(log_path, o.resume ? std::ios::app : std::ios::trunc);
    if (!run_log)
        throw DataError("cannot write '" + log_path.string() + "'");

    RunOptions ro;
    ro.skip_registration = o.skip_registration;
    ro.on_step = [&](const StepRecord& r) {
        run_log << to_json_record(r).dump() << "\n";
        if (o.progress_every > 0 && (r.step + 1) % o.progress_every == 0)
            log << "phase " << r.phase << " step " << r.step + 1 << " loss " << r.loss << "\n";
    };
    ro.on_phase_end = [&](const Checkpoint& c) {
        run_log.flush();
        const fs::path p = o.out_dir / ("checkpoint_phase" + std::to_string(c.completed_phase) + ".ckpt");
        save_checkpoint(p.string(), c);
        log << "phase " << c.completed_phase << " done; checkpoint " << p.string() << "\n";
    };
    run_phases(st, axial, coronal, ro);
    run_log.close();

    const Volume recon = infer_grid(st.net, st.frame, default_grid(axial), st.config.inference);
    write_volume(recon, (o.out_dir / "reconstruction.nii.gz").string());

    const auto [lo, hi] = world_bounds(coronal);
    const auto field = sample_displacement(st.reg, st.frame, make_grid(lo, hi, o.displacement_spacing));
    const char* axes[3] = {"x", "y", "z"};
    for (int c = 0; c < 3; ++c)
        write_volume(field[static_cast<std::size_t>(c)],
                     (o.out_dir / (std::string("displacement_") + axes[c] + ".nii.gz")).string());
    log << "wrote " << (o.out_dir / "reconstruction.nii.gz").string() << "\n";
    return exit_ok;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateOptions {
    fs::path reconstruction;
    std::optional<fs::path> truth;
    /// Both views, for the trilinear-fusion baseline comparison.
    std::optional<fs::path> axial;
    std::optional<fs::path> coronal;
    bool foreground = false;
    fs::path out_dir = "eval";
};

/// Writes report.txt (key=value) and metrics.csv. Exits with exit_no_metrics
/// when no ground truth is given.
inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    detail::ensure_dir(o.out_dir);
    Volume recon = read_volume(o.reconstruction.string());
    if (!o.truth) {
        err << "warning: no ground truth given; metrics skipped\n";
        detail::write_text(o.out_dir / "report.txt", "test=" + o.reconstruction.string() + "\nmetrics=skipped\n");
        return exit_no_metrics;
    }
    const Volume truth = read_volume(o.truth->string());
    const auto [rlo, rhi] = world_bounds(recon);
    const auto [tlo, thi] = world_bounds(truth);
    const double tol = 0.5 * truth.spacing().minCoeff();
    if ((rlo - tlo).cwiseAbs().maxCoeff() > tol || (rhi - thi).cwiseAbs().maxCoeff() > tol)
        throw DataError("reconstruction and ground truth cover different world boxes");
    if (recon.dims != truth.dims || !recon.affine.isApprox(truth.affine, 1e-9))
        recon = resample(recon, Volume(truth.dims, truth.affine));

    const Mask mask = o.foreground ? foreground_mask(truth) : Mask{};
    MetricReport r = evaluate(recon, truth, mask);
    r.test_id = o.reconstruction.string();
    r.truth_id = o.truth->string();
    std::string text = r.text();
    std::string csv = MetricReport::csv_header() + "\n" + r.csv_row() + "\n";

    if (o.axial && o.coronal) {
        const Volume axial = read_volume(o.axial->string());
        const Volume coronal = read_volume(o.coronal->string());
        const FusedVolume base = fuse_baseline(axial, coronal, Volume(truth.dims, truth.affine));
        MetricReport b = evaluate(base.volume, truth, mask);
        b.test_id = "baseline:trilinear-fusion";
        b.truth_id = r.truth_id;
        const bool beats = r.mae < b.mae && r.ssim > b.ssim && r.psnr > b.psnr;
        text += "baseline_mae=" + MetricReport::format(b.mae) + "\n" + "baseline_ssim=" + MetricReport::format(b.ssim)
                + "\n" + "baseline_psnr=" + MetricReport::format(b.psnr) + "\n"
                + "beats_baseline=" + (beats ? "PASS" : "FAIL") + "\n";
        csv += b.csv_row() + "\n";
        log << "baseline ordering: " << (beats ? "PASS" : "FAIL") << " (psnr " << MetricReport::format(r.psnr)
            << " vs " << MetricReport::format(b.psnr) << ")\n";
    }
    detail::write_text(o.out_dir / "report.txt", text);
    detail::write_text(o.out_dir / "metrics.csv", csv);
    log << text;
    return exit_ok;
}

} // namespace sims
