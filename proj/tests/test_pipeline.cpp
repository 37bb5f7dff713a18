#include <sims/metrics.hpp>
#include <sims/run.hpp>
#include <sims/simulate.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace sims;
namespace fs = std::filesystem;

namespace {

/// Small architecture for fast property checks.
PipelineConfig tiny_config()
{
    PipelineConfig c = PipelineConfig::phantom();
    c.intensity.grid.levels = 4;
    c.intensity.grid.features = 2;
    c.intensity.grid.log2_table = 12;
    c.intensity.grid.min_res = 4;
    c.intensity.grid.max_res = 16;
    c.intensity.hidden = 16;
    c.intensity.hidden_layers = 2;
    c.displacement.hidden = 16;
    c.displacement.hidden_layers = 2;
    c.phase1.steps = 20;
    c.phase1.batch = 256;
    c.phase2.steps = 5;
    c.phase2.batch = 256;
    c.phase2.bending_points = 16;
    c.phase3.steps = 20;
    c.phase3.batch = 256;
    return c;
}

SimulatedPair phantom_pair(int size, double rotation)
{
    PhantomSpec ps;
    ps.size = size;
    DegradationSpec d;
    d.rotation = rotation;
    return simulate_pair(make_phantom(ps), d);
}

/// NCC of f(x + g(x)) against the coronal intensities over every coronal voxel.
double full_view_ncc(IntensityNet& net, DisplacementNet* reg, const NormalizationFrame& frame, const Volume& view)
{
    const auto nx = static_cast<std::size_t>(view.dims[0]);
    const auto ny = static_cast<std::size_t>(view.dims[1]);
    Matrix<double> x(static_cast<Eigen::Index>(view.size()), 3);
    Matrix<double> target(static_cast<Eigen::Index>(view.size()), 1);
    for (std::size_t f = 0; f < view.size(); ++f) {
        const Vec3 idx(static_cast<double>(f % nx), static_cast<double>((f / nx) % ny), static_cast<double>(f / (nx * ny)));
        x.row(static_cast<Eigen::Index>(f)) = frame.to_normalized(voxel_to_world(view, idx)).transpose();
        target(static_cast<Eigen::Index>(f), 0) = view.data[f];
    }
    const Matrix<float> pred = net.predict(register_coords(reg, x).cast<float>());
    return ncc(pred.cast<double>(), target);
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "sims_test_pipeline";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

// ---- batches and schedules ------------------------------------------------

TEST(SampleBatch, SingleVoxel)
{
    Volume v({1, 1, 1}, Affine::Identity(), 5.0f);
    NormalizationFrame f;
    f.box_min = Vec3::Constant(-1);
    f.box_max = Vec3::Constant(3);
    f.lo = 0;
    f.hi = 10;
    Rng rng(1);
    const TrainBatch b = sample_batch(v, f, 1, rng);
    EXPECT_EQ(b.coords.row(0), Eigen::RowVector3d(-0.5, -0.5, -0.5));
    EXPECT_EQ(b.target(0, 0), 0.0f);
    EXPECT_EQ(b.mask, std::vector<std::uint8_t>{1});
    EXPECT_THROW(sample_batch(v, f, 0, rng), ConfigError);
}

TEST(SampleBatch, DeterministicPerSeed)
{
    const auto p = phantom_pair(16, 0.0);
    const auto f = build_normalization({&p.axial, &p.coronal});
    Rng a(3), b(3);
    const TrainBatch x = sample_batch(p.axial, f, 100, a);
    const TrainBatch y = sample_batch(p.axial, f, 100, b);
    EXPECT_EQ(x.coords, y.coords);
    EXPECT_EQ(x.target, y.target);
}

TEST(SampleBatch, MeanMatchesVolumeMeanWithinThreeSigma)
{
    const auto p = phantom_pair(32, 0.0);
    const auto f = build_normalization({&p.axial});
    std::vector<double> norm(p.axial.size());
    for (std::size_t i = 0; i < norm.size(); ++i)
        norm[i] = f.normalize_intensity(p.axial.data[i]);
    const double mu = std::accumulate(norm.begin(), norm.end(), 0.0) / static_cast<double>(norm.size());
    double var = 0.0;
    for (double x : norm)
        var += (x - mu) * (x - mu);
    var /= static_cast<double>(norm.size());
    const int n = 1000000;
    Rng rng(4);
    const TrainBatch b = sample_batch(p.axial, f, n, rng);
    const double got = b.target.cast<double>().mean();
    EXPECT_LT(std::abs(got - mu), 3.0 * std::sqrt(var / n));
}

TEST(ActiveLevels, Examples)
{
    EXPECT_EQ(active_levels(0, 1000, 0.5, 16), 1);
    EXPECT_EQ(active_levels(500, 1000, 0.5, 16), 16);
    EXPECT_EQ(active_levels(1000, 1000, 0.5, 16), 16);
    EXPECT_EQ(active_levels(250, 1000, 0.5, 16), 8);
    EXPECT_THROW(active_levels(-1, 1000, 0.5, 16), ConfigError);
    EXPECT_THROW(active_levels(1001, 1000, 0.5, 16), ConfigError);
    EXPECT_THROW(active_levels(1, 1000, 0.0, 16), ConfigError);
}

TEST(ActiveLevels, MonotoneAndReachesAll)
{
    for (double frac : {0.1, 0.5, 1.0})
        for (std::int64_t total : {1, 7, 1000}) {
            int prev = 1;
            for (std::int64_t s = 0; s <= total; ++s) {
                const int k = active_levels(s, total, frac, 8);
                EXPECT_GE(k, prev);
                EXPECT_GE(k, 1);
                EXPECT_LE(k, 8);
                prev = k;
            }
            EXPECT_EQ(prev, 8);
        }
}

TEST(ReconstructionLoss, TrivialOracles)
{
    Rng rng(5);
    Matrix<float> t(50, 1);
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t(i) = static_cast<float>(rng.uniform(-1, 1));
    Tape<float> tape;
    EXPECT_EQ(tape.value(reconstruction_loss<float>(tape, tape.constant(t), t))(0, 0), 0.0f);
    const Matrix<float> shifted = (t.array() + 1.0f).matrix();
    EXPECT_NEAR(tape.value(reconstruction_loss<float>(tape, tape.constant(shifted), t))(0, 0), 1.0f, 1e-6f);
    Matrix<float> p(50, 1);
    for (Eigen::Index i = 0; i < p.size(); ++i)
        p(i) = static_cast<float>(rng.uniform(-1, 1));
    double two_pass = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        two_pass += (static_cast<double>(p(i)) - t(i)) * (static_cast<double>(p(i)) - t(i));
    two_pass /= 50.0;
    EXPECT_NEAR(tape.value(reconstruction_loss<float>(tape, tape.constant(p), t))(0, 0), two_pass, 1e-6);
}

// ---- phases ---------------------------------------------------------------

TEST(Phase1, FitsSmallPhantomBelowTolerance)
{
    const auto p = phantom_pair(32, 0.1);
    PipelineConfig cfg = PipelineConfig::phantom();
    cfg.phase1.steps = 2000;
    Checkpoint st = start_run(cfg, p.axial, p.coronal);
    RunOptions ro;
    ro.last_phase = 1;
    const auto hist = run_phases(st, p.axial, p.coronal, ro);
    ASSERT_EQ(hist.size(), 2000u);
    EXPECT_EQ(hist.front().active_levels, 1);
    EXPECT_EQ(hist.back().active_levels, cfg.intensity.grid.levels);

    // Training MSE in normalized units over every axial voxel.
    const Volume pred = infer_grid(st.net, st.frame, Volume(p.axial.dims, p.axial.affine));
    double mse = 0.0, mae_v = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = st.frame.normalize_intensity(pred.data[i]) - st.frame.normalize_intensity(p.axial.data[i]);
        mse += d * d;
        mae_v += std::abs(d);
    }
    mse /= static_cast<double>(pred.size());
    mae_v /= static_cast<double>(pred.size());
    EXPECT_LT(mse, 1e-3);
    // Querying the training voxel centers: MAE below twice the root of the
    // converged loss (last 100 steps).
    double tail = 0.0;
    for (std::size_t i = hist.size() - 100; i < hist.size(); ++i)
        tail += hist[i].loss;
    tail /= 100.0;
    EXPECT_LT(mae_v, 2.0 * std::sqrt(tail));
}

TEST(Phase1, NonFiniteLossAbortsWithStep)
{
    const auto p = phantom_pair(16, 0.0);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    st.net.params().find("mlp.2.bias").value(0, 0) = std::nanf("");
    Rng rng(1);
    try {
        phase1_train(st.net, p.axial, st.frame, st.config.phase1, rng);
        FAIL() << "expected NumericalError";
    }
    catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("phase 1"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
}

TEST(Phase2, NeverModifiesIntensityNet)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    Rng rng(2);
    phase1_train(st.net, p.axial, st.frame, st.config.phase1, rng);
    const auto theta = st.net.params().checksum();
    const auto phi = st.reg.params().checksum();
    const auto hist = phase2_train(st.net, st.reg, p.coronal, st.frame, st.config.phase2, rng);
    EXPECT_EQ(st.net.params().checksum(), theta);
    EXPECT_NE(st.reg.params().checksum(), phi);
    for (const auto& r : hist) {
        EXPECT_EQ(r.phase, 2);
        EXPECT_GE(r.bending, 0.0);
        EXPECT_NEAR(r.loss, -r.ncc + st.config.phase2.bending_weight * r.bending, 1e-12);
    }
    for (const auto& prm : st.net.params())
        EXPECT_FALSE(prm.frozen);
}

TEST(Phase2, ConstantCoronalBatchAbortsAfterRetry)
{
    const auto p = phantom_pair(16, 0.0);
    Volume flat = p.coronal;
    std::fill(flat.data.begin(), flat.data.end(), 0.5f);
    Checkpoint st = start_run(tiny_config(), p.axial, flat);
    Rng rng(3);
    try {
        phase2_train(st.net, st.reg, flat, st.frame, st.config.phase2, rng);
        FAIL() << "expected NumericalError";
    }
    catch (const NumericalError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("constant signal"), std::string::npos) << what;
        EXPECT_NE(what.find("phase 2"), std::string::npos) << what;
    }
}

TEST(Phase2, AlignedViewsStayNearIdentity)
{
    const auto p = phantom_pair(32, 0.0);
    PipelineConfig cfg = PipelineConfig::phantom();
    cfg.phase1.steps = 1000;
    cfg.phase2.steps = 300;
    Checkpoint st = start_run(cfg, p.axial, p.coronal);
    RunOptions ro;
    ro.last_phase = 2;
    run_phases(st, p.axial, p.coronal, ro);
    // Mean |delta| over the foreground, in fine-grid voxels (1 mm).
    const double err = mean_alignment_error(&st.reg, st.frame, p.coronal, Affine::Identity());
    EXPECT_LT(err, 0.5);
}

TEST(Phase2, HugeBendingWeightKeepsFieldAffineAndImprovesNcc)
{
    const auto p = phantom_pair(32, 0.1);
    PipelineConfig cfg = PipelineConfig::phantom();
    cfg.phase1.steps = 1000;
    cfg.phase2.steps = 200;
    cfg.phase2.bending_weight = 1e9;
    Checkpoint st = start_run(cfg, p.axial, p.coronal);
    RunOptions ro;
    ro.last_phase = 1;
    run_phases(st, p.axial, p.coronal, ro);
    const double before = full_view_ncc(st.net, nullptr, st.frame, p.coronal);
    Rng rng(4);
    const auto hist = phase2_train(st.net, st.reg, p.coronal, st.frame, cfg.phase2, rng);
    const double after = full_view_ncc(st.net, &st.reg, st.frame, p.coronal);
    EXPECT_GT(after, before);
    EXPECT_LT(hist.back().bending, 1e-6);
}

TEST(Phase3, NeverModifiesDisplacementNet)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    RunOptions ro;
    ro.last_phase = 2;
    run_phases(st, p.axial, p.coronal, ro);
    const auto phi = st.reg.params().checksum();
    const auto theta = st.net.params().checksum();
    Rng rng(5);
    phase3_train(st.net, &st.reg, p.axial, p.coronal, st.frame, st.config.phase3, rng);
    EXPECT_EQ(st.reg.params().checksum(), phi);
    EXPECT_NE(st.net.params().checksum(), theta);
}

TEST(Phase3, ZeroCoronalWeightMatchesAxialOnlyTraining)
{
    const auto p = phantom_pair(16, 0.1);
    PipelineConfig cfg = tiny_config();
    cfg.phase3.coronal_weight = 0.0;
    Checkpoint a = start_run(cfg, p.axial, p.coronal);
    Checkpoint b = start_run(cfg, p.axial, p.coronal);
    Rng ra(6), rb(6);
    const auto h3 = phase3_train(a.net, &a.reg, p.axial, p.coronal, a.frame, cfg.phase3, ra);
    Phase1Config axial_only;
    axial_only.steps = cfg.phase3.steps;
    axial_only.batch = cfg.phase3.batch;
    axial_only.optimizer = cfg.phase3.optimizer;
    axial_only.progressive = false;
    const auto h1 = phase1_train(b.net, p.axial, b.frame, axial_only, rb);
    ASSERT_EQ(h1.size(), h3.size());
    for (std::size_t i = 0; i < h1.size(); ++i)
        EXPECT_EQ(h1[i].loss, h3[i].loss) << i;
    EXPECT_EQ(a.net.params().checksum(), b.net.params().checksum());
}

TEST(Phase3, RegisteredPointsOutsideTheBoxAreMasked)
{
    const auto p = phantom_pair(16, 0.1);
    PipelineConfig cfg = tiny_config();
    cfg.phase3.coronal_weight = 1.0;
    Checkpoint st = start_run(cfg, p.axial, p.coronal);
    // A constant shift of half the box pushes a quarter of the points out.
    st.reg.params()[st.reg.output_layer().second].value << 0.5, 0.0, 0.0;
    Rng rng(7);
    EXPECT_NO_THROW(phase3_train(st.net, &st.reg, p.axial, p.coronal, st.frame, cfg.phase3, rng));
    // Everything pushed out: the whole batch is masked.
    st.reg.params()[st.reg.output_layer().second].value << 5.0, 0.0, 0.0;
    EXPECT_THROW(phase3_train(st.net, &st.reg, p.axial, p.coronal, st.frame, cfg.phase3, rng), NumericalError);
}

// ---- inference ------------------------------------------------------------

TEST(InferGrid, GeometryCases)
{
    const auto p = phantom_pair(16, 0.0);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    const Volume g = default_grid(p.axial);
    EXPECT_EQ(g.dims, (std::array<int, 3>{16, 16, 16}));
    EXPECT_EQ(g.spacing(), Vec3(1, 1, 1));

    const auto [lo, hi] = world_bounds(p.axial);
    const Volume coarse = make_grid(lo, hi, p.axial.spacing()[2]);
    EXPECT_EQ(coarse.dims[2], p.axial.dims[2]);
    Volume iso({4, 4, 4}, Affine::Identity());
    iso.affine.diagonal().head<3>() = Vec3::Constant(4.0);
    const auto [ilo, ihi] = world_bounds(iso);
    EXPECT_EQ(make_grid(ilo, ihi, 4.0).dims, iso.dims);

    const Volume one = infer_grid(st.net, st.frame, make_grid(Vec3(3, 3, 3), Vec3(4, 4, 4), 1.0));
    EXPECT_EQ(one.dims, (std::array<int, 3>{1, 1, 1}));
    EXPECT_TRUE(std::isfinite(one.data[0]));
}

TEST(InferGrid, ChunkingDoesNotChangeValues)
{
    const auto p = phantom_pair(16, 0.0);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    InferenceConfig small;
    small.chunk = 97;
    const Volume a = infer_grid(st.net, st.frame, default_grid(p.axial));
    const Volume b = infer_grid(st.net, st.frame, default_grid(p.axial), small);
    EXPECT_EQ(a.data, b.data);
}

TEST(InferGrid, MemoryBudgetErrorSuggestsChunk)
{
    const auto p = phantom_pair(16, 0.0);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    InferenceConfig c;
    c.memory_budget_mb = 0.1;
    c.chunk = 1 << 20;
    try {
        infer_grid(st.net, st.frame, default_grid(p.axial), c);
        FAIL() << "expected ConfigError";
    }
    catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("inference.chunk"), std::string::npos) << e.what();
    }
    c.memory_budget_mb = 1e-3;
    EXPECT_THROW(infer_grid(st.net, st.frame, default_grid(p.axial), c), ConfigError);
}

TEST(SampleDisplacement, ZeroAtInitialization)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    const auto field = sample_displacement(st.reg, st.frame, default_grid(p.axial));
    for (const auto& v : field)
        for (float x : v.data)
            EXPECT_EQ(x, 0.0f);
}

TEST(AlignmentError, IdentityVersusKnownRotation)
{
    const auto p = phantom_pair(64, 0.1);
    const auto f = build_normalization({&p.axial, &p.coronal});
    // True mapping of coronal header positions back to the reference frame.
    const Affine truth = rotation_about_x(-0.1);
    EXPECT_GE(mean_alignment_error(nullptr, f, p.coronal, truth), 2.0);
    EXPECT_LT(mean_alignment_error(nullptr, f, p.coronal, Affine::Identity()), 1e-9);
}

// ---- whole runs, checkpoints ----------------------------------------------

TEST(Run, DeterministicAcrossRuns)
{
    const auto p = phantom_pair(16, 0.1);
    auto once = [&] {
        Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
        const auto h = run_phases(st, p.axial, p.coronal);
        return std::make_tuple(st.net.params().checksum(), st.reg.params().checksum(), h.back().loss,
                               infer_grid(st.net, st.frame, default_grid(p.axial)).data);
    };
    EXPECT_EQ(once(), once());
}

TEST(Run, ResumeFromEachPhaseMatchesUninterrupted)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint full = start_run(tiny_config(), p.axial, p.coronal);
    run_phases(full, p.axial, p.coronal);
    for (int stop = 1; stop <= 2; ++stop) {
        Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
        RunOptions ro;
        ro.last_phase = stop;
        run_phases(st, p.axial, p.coronal, ro);
        const auto path = scratch("resume.ckpt");
        save_checkpoint(path.string(), st);
        Checkpoint back = load_checkpoint(path.string());
        EXPECT_EQ(back.completed_phase, stop);
        run_phases(back, p.axial, p.coronal);
        EXPECT_EQ(back.net.params().checksum(), full.net.params().checksum()) << stop;
        EXPECT_EQ(back.reg.params().checksum(), full.reg.params().checksum()) << stop;
    }
}

TEST(Run, SkipRegistrationLeavesIdentity)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    RunOptions ro;
    ro.skip_registration = true;
    std::vector<int> phases;
    ro.on_step = [&](const StepRecord& r) {
        if (phases.empty() || phases.back() != r.phase)
            phases.push_back(r.phase);
    };
    run_phases(st, p.axial, p.coronal, ro);
    EXPECT_EQ(phases, (std::vector<int>{1, 3}));
    EXPECT_EQ(st.completed_phase, 3);
    Matrix<double> x = Matrix<double>::Random(10, 3);
    EXPECT_EQ(st.reg.transform(x), x);
}

TEST(Checkpoint, RoundTripIsExact)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    RunOptions ro;
    ro.last_phase = 2;
    run_phases(st, p.axial, p.coronal, ro);
    const auto path = scratch("rt.ckpt");
    save_checkpoint(path.string(), st);
    const Checkpoint back = load_checkpoint(path.string());
    EXPECT_EQ(back.completed_phase, 2);
    EXPECT_EQ(json(back.config), json(st.config));
    EXPECT_EQ(back.frame.box_min, st.frame.box_min);
    EXPECT_EQ(back.frame.box_max, st.frame.box_max);
    EXPECT_EQ(back.frame.lo, st.frame.lo);
    EXPECT_EQ(back.frame.hi, st.frame.hi);
    EXPECT_EQ(back.rng_state, st.rng_state);
    EXPECT_EQ(back.net.params().checksum(), st.net.params().checksum());
    EXPECT_EQ(back.reg.params().checksum(), st.reg.params().checksum());
    EXPECT_EQ(back.net.params().step, st.net.params().step);
    EXPECT_TRUE(same_architecture(back.config, st.config));
}

TEST(Checkpoint, ArchitectureMismatchAndCorruptionRejected)
{
    const auto p = phantom_pair(16, 0.1);
    Checkpoint st = start_run(tiny_config(), p.axial, p.coronal);
    st.config.intensity.hidden = 8; // config disagrees with the stored tensors
    const auto path = scratch("bad.ckpt");
    save_checkpoint(path.string(), st);
    try {
        load_checkpoint(path.string());
        FAIL() << "expected ConfigError";
    }
    catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("architecture mismatch"), std::string::npos);
    }
    PipelineConfig other = tiny_config();
    other.displacement.omega0 = 30.0;
    EXPECT_FALSE(same_architecture(other, tiny_config()));
    other = tiny_config();
    other.phase1.steps = 99; // training settings are not architecture
    EXPECT_TRUE(same_architecture(other, tiny_config()));

    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "NOTACKPT";
    }
    EXPECT_THROW(load_checkpoint(path.string()), DataError);
}

// ---- configuration --------------------------------------------------------

TEST(Config, PartialOverridesMerge)
{
    const PipelineConfig base = PipelineConfig::phantom();
    const PipelineConfig c =
        merge_config(base, json::parse(R"({"phase2": {"bending_weight": 5, "optimizer": {"lr": 0.002}}})"));
    EXPECT_EQ(c.phase2.bending_weight, 5.0);
    EXPECT_EQ(c.phase2.optimizer.lr, 0.002);
    EXPECT_EQ(c.phase2.optimizer.kind, base.phase2.optimizer.kind);
    EXPECT_EQ(c.phase2.steps, base.phase2.steps);
    EXPECT_EQ(json(c.phase1), json(base.phase1));
    EXPECT_THROW(merge_config(base, json::parse(R"({"phase1": {"steps": "many"}})")), ConfigError);
}

TEST(Config, PaperDefaults)
{
    const PipelineConfig c = PipelineConfig::paper();
    EXPECT_EQ(c.intensity.input_width(), 515);
    EXPECT_EQ(c.intensity.hidden, 1024);
    EXPECT_EQ(c.intensity.hidden_layers, 4);
    EXPECT_EQ(c.displacement.hidden, 256);
    EXPECT_EQ(c.displacement.hidden_layers, 3);
    EXPECT_EQ(c.displacement.omega0, 32.0);
    EXPECT_EQ(c.phase1.batch, 50000);
    EXPECT_EQ(c.phase1.optimizer.lr, 1.2e-3);
    EXPECT_EQ(c.phase1.optimizer.weight_decay, 5e-5);
    EXPECT_EQ(c.phase2.optimizer.lr, 1e-5);
    EXPECT_EQ(c.phase2.optimizer.kind, OptimizerKind::adam);
    EXPECT_EQ(c.phase2.bending_weight, 1000.0);
    EXPECT_EQ(c.phase3.coronal_weight, 0.5);
    EXPECT_NO_THROW(c.validate());
    EXPECT_NO_THROW(PipelineConfig::phantom().validate());
}

TEST(Config, ValidationRejectsBadValues)
{
    PipelineConfig c = PipelineConfig::phantom();
    c.phase2.bending_weight = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PipelineConfig::phantom();
    c.phase1.batch = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PipelineConfig::phantom();
    c.phase3.coronal_weight = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PipelineConfig::phantom();
    c.phase1.unlock_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}
