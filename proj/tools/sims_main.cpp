// sims: two-view MRI super-resolution from the command line.
//
//   sims simulate --out sim/
//   sims superres --axial sim/axial.nii.gz --coronal sim/coronal.nii.gz --out run/
//   sims evaluate --recon run/reconstruction.nii.gz --truth sim/phantom.nii.gz
//                 --axial sim/axial.nii.gz --coronal sim/coronal.nii.gz --out eval/

#include <sims/commands.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

sims::json read_json_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw sims::ConfigError("cannot open config file '" + path + "'");
    try {
        return sims::json::parse(is);
    }
    catch (const sims::json::exception& e) {
        throw sims::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Two-view anisotropic MRI super-resolution with implicit networks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SIMS_VERSION);

    // simulate
    sims::SimulateOptions sim;
    std::string slice_model = "block_mean";
    auto* simulate = app.add_subcommand("simulate", "Generate a phantom and its two degraded views");
    simulate->add_option("--out", sim.out_dir, "Output directory")->capture_default_str();
    simulate->add_option("--size", sim.phantom.size, "Phantom edge length (voxels)")->capture_default_str();
    simulate->add_option("--seed", sim.phantom.seed, "Phantom seed")->capture_default_str();
    simulate->add_option("--structures", sim.phantom.structures, "Number of ellipsoids")->capture_default_str();
    simulate->add_option("--texture-octaves", sim.phantom.texture_octaves, "Texture octaves (0 = none)")
        ->capture_default_str();
    simulate->add_option("--texture-strength", sim.phantom.texture_strength, "Texture amplitude")
        ->capture_default_str();
    simulate->add_option("--factor", sim.degradation.factor, "Through-plane downsampling factor")
        ->capture_default_str();
    simulate->add_option("--rotation", sim.degradation.rotation, "Second-view rotation about x (rad)")
        ->capture_default_str();
    simulate->add_option("--slice-model", slice_model, "block_mean | subsample")
        ->check(CLI::IsMember({"block_mean", "subsample"}))
        ->capture_default_str();
    simulate->add_option("--noise", sim.degradation.noise_sigma, "Additive Gaussian noise sigma")
        ->capture_default_str();
    simulate->add_option("--noise-seed", sim.degradation.noise_seed, "Noise seed")->capture_default_str();

    // superres
    sims::SuperresOptions sr;
    std::string config_file, preset = "phantom", encoder, loss, resume;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> p1_steps, p2_steps, p3_steps;
    std::optional<int> batch;
    std::optional<double> bending_weight, coronal_weight;
    auto* superres = app.add_subcommand("superres", "Run the three-phase reconstruction");
    superres->add_option("--axial", sr.axial, "Reference (axial) view")->required()->check(CLI::ExistingFile);
    superres->add_option("--coronal", sr.coronal, "Second (coronal) view")->required()->check(CLI::ExistingFile);
    superres->add_option("--out", sr.out_dir, "Output directory")->capture_default_str();
    superres->add_option("--preset", preset, "Base settings: phantom | paper")
        ->check(CLI::IsMember({"phantom", "paper"}))
        ->capture_default_str();
    superres->add_option("--config", config_file, "JSON config applied over the preset")->check(CLI::ExistingFile);
    superres->add_option("--seed", seed, "Pipeline seed");
    superres->add_option("--phase1-steps", p1_steps, "Phase-1 steps");
    superres->add_option("--phase2-steps", p2_steps, "Phase-2 steps");
    superres->add_option("--phase3-steps", p3_steps, "Phase-3 steps");
    superres->add_option("--batch", batch, "Batch size for all phases");
    superres->add_option("--encoder", encoder, "hash | fourier")->check(CLI::IsMember({"hash", "fourier"}));
    superres->add_option("--loss", loss, "Reconstruction loss: mse | l1")->check(CLI::IsMember({"mse", "l1"}));
    superres->add_option("--bending-weight", bending_weight, "Bending-energy weight alpha");
    superres->add_option("--coronal-weight", coronal_weight, "Phase-3 coronal batch fraction");
    superres->add_flag("--skip-registration", sr.skip_registration, "Skip phase 2 (identity alignment)");
    superres->add_option("--resume", resume, "Resume from a phase checkpoint")->check(CLI::ExistingFile);
    superres->add_option("--progress-every", sr.progress_every, "Progress line interval (0 = silent)")
        ->capture_default_str();

    // evaluate
    sims::EvaluateOptions ev;
    std::string truth, ev_axial, ev_coronal;
    auto* evaluate = app.add_subcommand("evaluate", "Compare a reconstruction with ground truth");
    evaluate->add_option("--recon", ev.reconstruction, "Reconstruction volume")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--truth", truth, "Ground-truth volume")->check(CLI::ExistingFile);
    evaluate->add_option("--axial", ev_axial, "Axial view (enables the baseline comparison)")
        ->check(CLI::ExistingFile);
    evaluate->add_option("--coronal", ev_coronal, "Coronal view (enables the baseline comparison)")
        ->check(CLI::ExistingFile);
    evaluate->add_flag("--foreground", ev.foreground, "Restrict metrics to ground truth above 5% of range");
    evaluate->add_option("--out", ev.out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : sims::exit_config;
    }

    try {
        if (*simulate) {
            sim.degradation.slice_model =
                slice_model == "subsample" ? sims::SliceModel::subsample : sims::SliceModel::block_mean;
            return sims::cmd_simulate(sim);
        }
        if (*superres) {
            sims::PipelineConfig cfg = preset == "paper" ? sims::PipelineConfig::paper() : sims::PipelineConfig::phantom();
            if (!config_file.empty())
                cfg = sims::merge_config(cfg, read_json_file(config_file));
            if (seed)
                cfg.seed = *seed;
            if (p1_steps)
                cfg.phase1.steps = *p1_steps;
            if (p2_steps)
                cfg.phase2.steps = *p2_steps;
            if (p3_steps)
                cfg.phase3.steps = *p3_steps;
            if (batch)
                cfg.phase1.batch = cfg.phase2.batch = cfg.phase3.batch = *batch;
            if (!encoder.empty())
                cfg.intensity.encoder = encoder == "fourier" ? sims::EncoderKind::fourier : sims::EncoderKind::hash;
            if (!loss.empty())
                cfg.phase1.loss = cfg.phase3.loss = loss == "l1" ? sims::LossKind::l1 : sims::LossKind::mse;
            if (bending_weight)
                cfg.phase2.bending_weight = *bending_weight;
            if (coronal_weight)
                cfg.phase3.coronal_weight = *coronal_weight;
            sr.config = cfg;
            if (!resume.empty())
                sr.resume = resume;
            return sims::cmd_superres(sr);
        }
        if (*evaluate) {
            if (!truth.empty())
                ev.truth = truth;
            if (!ev_axial.empty())
                ev.axial = ev_axial;
            if (!ev_coronal.empty())
                ev.coronal = ev_coronal;
            return sims::cmd_evaluate(ev);
        }
    }
    catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return sims::exit_code_for(e);
    }
    return sims::exit_failure;
}
