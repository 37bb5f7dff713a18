#include <sims/losses.hpp>
#include <sims/networks.hpp>

#include <gtest/gtest.h>

using namespace sims;
using Vec3d = Eigen::Vector3d;

namespace {

Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1, double hi = 1)
{
    Matrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.uniform(lo, hi);
    return m;
}

/// Field given by a plain function of one coordinate row.
template <class F>
auto pointwise(F f)
{
    return [f](Tape<double>& tape, Tape<double>::Var c) {
        const Matrix<double>& x = tape.value(c);
        Matrix<double> u(x.rows(), 3);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            u.row(i) = f(Vec3d(x(i, 0), x(i, 1), x(i, 2))).transpose();
        return tape.constant(std::move(u));
    };
}

} // namespace

// ---- reconstruction loss --------------------------------------------------

TEST(ReconstructionLoss, MseAndL1Values)
{
    Tape<double> tape;
    Matrix<double> p(4, 1), t(4, 1);
    p << 1, 2, 3, 4;
    t << 1, 0, 3, 1;
    auto pv = tape.variable(p);
    EXPECT_DOUBLE_EQ(tape.value(reconstruction_loss<double>(tape, pv, t))(0, 0), (4.0 + 9.0) / 4.0);
    EXPECT_DOUBLE_EQ(tape.value(reconstruction_loss<double>(tape, pv, t, {}, LossKind::l1))(0, 0), 5.0 / 4.0);
    // mask drops the second row
    EXPECT_DOUBLE_EQ(tape.value(reconstruction_loss<double>(tape, pv, t, {1, 0, 1, 1}))(0, 0), 9.0 / 3.0);
}

TEST(ReconstructionLoss, GradientsAndMaskedRowsGetNothing)
{
    Tape<double> tape;
    Matrix<double> p(3, 1), t(3, 1);
    p << 1, 2, 3;
    t << 0, 0, 0;
    auto pv = tape.variable(p);
    tape.backward(reconstruction_loss<double>(tape, pv, t, {1, 0, 1}));
    EXPECT_DOUBLE_EQ(tape.grad(pv)(0, 0), 2.0 * 1 / 2);
    EXPECT_DOUBLE_EQ(tape.grad(pv)(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(tape.grad(pv)(2, 0), 2.0 * 3 / 2);
}

TEST(ReconstructionLoss, Errors)
{
    Tape<double> tape;
    auto pv = tape.variable(Matrix<double>::Ones(2, 1));
    EXPECT_THROW(reconstruction_loss<double>(tape, pv, Matrix<double>::Ones(3, 1)), ConfigError);
    EXPECT_THROW(reconstruction_loss<double>(tape, pv, Matrix<double>::Ones(2, 1), {1}), ConfigError);
    EXPECT_THROW(reconstruction_loss<double>(tape, pv, Matrix<double>::Ones(2, 1), {0, 0}), NumericalError);
}

// ---- NCC ------------------------------------------------------------------

TEST(Ncc, InvariancesAndSign)
{
    Rng rng(1);
    const Matrix<double> a = random_matrix(500, 1, rng);
    EXPECT_NEAR(ncc(a, a), 1.0, 1e-6);
    EXPECT_NEAR(ncc(a, (3.0 * a.array() + 5.0).matrix()), 1.0, 1e-6);
    EXPECT_NEAR(ncc(a, (-a).eval()), -1.0, 1e-6);
}

TEST(Ncc, MatchesTextbookPearson)
{
    Rng rng(2);
    const Matrix<double> a = random_matrix(200, 1, rng);
    const Matrix<double> b = (a.array() + 0.7 * random_matrix(200, 1, rng).array()).matrix();
    const double ma = a.mean(), mb = b.mean();
    double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        sab += (a(i) - ma) * (b(i) - mb);
        saa += (a(i) - ma) * (a(i) - ma);
        sbb += (b(i) - mb) * (b(i) - mb);
    }
    EXPECT_NEAR(ncc(a, b), sab / std::sqrt(saa * sbb), 1e-12);
}

TEST(Ncc, ConstantSignalRaises)
{
    Rng rng(3);
    const Matrix<double> a = random_matrix(10, 1, rng);
    EXPECT_THROW(ncc(a, Matrix<double>::Constant(10, 1, 2.0)), NumericalError);
    EXPECT_THROW(ncc(Matrix<double>::Constant(10, 1, -4.0), a), NumericalError);
    EXPECT_THROW(ncc(a, random_matrix(11, 1, rng)), ConfigError);
}

TEST(Ncc, MaskRestrictsSamples)
{
    Matrix<double> a(4, 1), b(4, 1);
    a << 1, 2, 3, 100;
    b << 2, 4, 6, -50;
    EXPECT_NEAR(ncc(a, b, {1, 1, 1, 0}), 1.0, 1e-12);
    EXPECT_LT(ncc(a, b), 0.0);
}

TEST(NccLoss, GradientMatchesFiniteDifferences)
{
    Rng rng(4);
    const Matrix<double> p = random_matrix(40, 1, rng);
    const Matrix<double> t = (p.array() * 0.5 + random_matrix(40, 1, rng).array()).matrix();
    const std::vector<std::uint8_t> mask = [] {
        std::vector<std::uint8_t> m(40, 1);
        m[3] = m[17] = 0;
        return m;
    }();
    Tape<double> tape;
    auto pv = tape.variable(p);
    auto r = ncc_loss<double>(tape, pv, t, mask);
    EXPECT_NEAR(tape.value(r)(0, 0), ncc(p, t, mask), 1e-12);
    tape.backward(r);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        Matrix<double> hi = p, lo = p;
        hi(i) += 1e-6;
        lo(i) -= 1e-6;
        const double numeric = (ncc(hi, t, mask) - ncc(lo, t, mask)) / 2e-6;
        EXPECT_NEAR(tape.grad(pv)(i), numeric, 1e-7);
    }
    EXPECT_EQ(tape.grad(pv)(3), 0.0);
}

// ---- bending energy -------------------------------------------------------

TEST(Bending, StencilShape)
{
    const auto s = bending_stencil();
    EXPECT_EQ(s[0], (std::array<int, 3>{0, 0, 0}));
    int axis = 0, diag = 0;
    for (std::size_t k = 1; k < s.size(); ++k) {
        const int nz = (s[k][0] != 0) + (s[k][1] != 0) + (s[k][2] != 0);
        axis += nz == 1;
        diag += nz == 2;
    }
    EXPECT_EQ(axis, 6);
    EXPECT_EQ(diag, 12);
}

TEST(Bending, ZeroInitializedNetworkHasNoEnergy)
{
    DisplacementNet net(DisplacementNetConfig{}, 3);
    Rng rng(5);
    Tape<double> tape;
    auto e = bending_energy<double>(
        tape, [&](Tape<double>& t, Tape<double>::Var c) { return net.forward(t, c); }, random_matrix(64, 3, rng),
        1e-3);
    EXPECT_LT(tape.value(e)(0, 0), 1e-8);
}

TEST(Bending, AffineFieldHasNoEnergy)
{
    Rng rng(6);
    const Matrix<double> A = random_matrix(3, 3, rng, -0.2, 0.2);
    const Vec3d b(0.1, -0.05, 0.02);
    Tape<double> tape;
    auto e = bending_energy<double>(tape, pointwise([&](const Vec3d& x) { return Vec3d(A * x + b); }),
                                    random_matrix(64, 3, rng), 1e-3);
    EXPECT_LT(tape.value(e)(0, 0), 1e-8);

    // Also through the network: zero hidden-to-output weights, affine bias.
    DisplacementNet net(DisplacementNetConfig{}, 4);
    net.params()[net.output_layer().second].value << 0.3, -0.1, 0.2;
    Tape<double> t2;
    auto e2 = bending_energy<double>(
        t2, [&](Tape<double>& t, Tape<double>::Var c) { return net.forward(t, c); }, random_matrix(64, 3, rng), 1e-3);
    EXPECT_LT(t2.value(e2)(0, 0), 1e-8);
}

TEST(Bending, QuadraticFieldMatchesAnalyticCurvature)
{
    // u = (c x^2, 0, 0): d2u/dx2 = 2c everywhere, all else zero -> (2c)^2.
    Rng rng(7);
    for (double c : {0.05, 0.3, -1.2}) {
        Tape<double> tape;
        auto e = bending_energy<double>(tape, pointwise([c](const Vec3d& x) { return Vec3d(c * x[0] * x[0], 0, 0); }),
                                        random_matrix(32, 3, rng), 1e-3);
        EXPECT_NEAR(tape.value(e)(0, 0), 4 * c * c, 1e-4);
    }
    // A mixed term: u = (0, c x y, 0): d2/dxdy = c, counted twice -> 2 c^2.
    Tape<double> tape;
    auto e = bending_energy<double>(tape, pointwise([](const Vec3d& x) { return Vec3d(0, 0.5 * x[0] * x[1], 0); }),
                                    random_matrix(32, 3, rng), 1e-3);
    EXPECT_NEAR(tape.value(e)(0, 0), 2 * 0.25, 1e-4);
}

TEST(Bending, GradientMatchesFiniteDifferencesInFieldValues)
{
    // Field: u = x W (linear in W) + 0.5 * x^2 elementwise, gradient into W.
    Rng rng(8);
    const Matrix<double> pts = random_matrix(5, 3, rng, -0.8, 0.8);
    Matrix<double> W = random_matrix(3, 3, rng);
    auto energy = [&](const Matrix<double>& w, Matrix<double>* grad) {
        Tape<double> tape;
        auto wv = tape.variable(w);
        auto field = [&](Tape<double>& t, Tape<double>::Var c) {
            const Matrix<double> x = t.value(c);
            const Matrix<double> sq = x.array().square().matrix() * 0.5;
            // u = x w + sin(x w) to make the energy depend on w
            const Matrix<double> xw = x * t.value(wv);
            Matrix<double> u = xw + xw.array().sin().matrix() + sq;
            const Matrix<double> cosxw = xw.array().cos().matrix();
            return t.custom(std::move(u), true, [wv, x, cosxw](Tape<double>& tt, const Matrix<double>& up) {
                tt.accumulate(wv, x.transpose() * (up + up.cwiseProduct(cosxw)));
            });
        };
        auto e = bending_energy<double>(tape, field, pts, 1e-2);
        if (grad) {
            tape.backward(e);
            *grad = tape.grad(wv);
        }
        return tape.value(e)(0, 0);
    };
    Matrix<double> g;
    energy(W, &g);
    for (Eigen::Index i = 0; i < W.size(); ++i) {
        Matrix<double> hi = W, lo = W;
        hi(i) += 1e-6;
        lo(i) -= 1e-6;
        const double numeric = (energy(hi, nullptr) - energy(lo, nullptr)) / 2e-6;
        EXPECT_NEAR(g(i), numeric, 1e-5 * std::max(1.0, std::abs(numeric)));
    }
}

TEST(Bending, Errors)
{
    Tape<double> tape;
    auto f = pointwise([](const Vec3d& x) { return x; });
    EXPECT_THROW(bending_energy<double>(tape, f, Matrix<double>::Zero(4, 3), 0.0), ConfigError);
    EXPECT_THROW(bending_energy<double>(tape, f, Matrix<double>::Zero(4, 2), 1e-3), ConfigError);
    EXPECT_THROW(bending_energy<double>(tape, f, Matrix<double>::Zero(0, 3), 1e-3), ConfigError);
}
