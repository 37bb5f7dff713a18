#pragma once

// Training objectives: masked reconstruction loss, batch-global normalized
// cross-correlation, and finite-difference bending energy of a displacement
// field.

#include "tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace sims {

enum class LossKind { mse, l1 };

/// Mean of squared (or absolute) residuals over entries with mask != 0.
/// An empty mask means "all valid".
template <class T>
typename Tape<T>::Var reconstruction_loss(Tape<T>& tape, typename Tape<T>::Var pred, const Matrix<T>& target,
                                          const std::vector<std::uint8_t>& mask = {},
                                          LossKind kind = LossKind::mse)
{
    const Matrix<T>& p = tape.value(pred);
    if (p.rows() != target.rows() || p.cols() != target.cols())
        throw ConfigError("reconstruction loss: prediction and target shapes differ");
    if (!mask.empty() && mask.size() != static_cast<std::size_t>(p.rows()))
        throw ConfigError("reconstruction loss: mask length differs from batch size");
    const Eigen::Index n = p.rows();
    std::size_t valid = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (mask.empty() || mask[static_cast<std::size_t>(i)])
            ++valid;
    if (valid == 0)
        throw NumericalError("reconstruction loss over an all-masked batch");

    Matrix<T> resid = p - target;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) {
            resid.row(i).setZero();
            continue;
        }
        for (Eigen::Index c = 0; c < resid.cols(); ++c) {
            const double r = resid(i, c);
            acc += kind == LossKind::mse ? r * r : std::abs(r);
        }
    }
    const double denom = static_cast<double>(valid) * static_cast<double>(p.cols());
    Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(acc / denom);
    return tape.custom(std::move(out), tape.needs_grad(pred),
                       [pred, resid = std::move(resid), denom, kind](Tape<T>& t, const Matrix<T>& up) {
                           const T s = static_cast<T>(up(0, 0) / denom);
                           if (kind == LossKind::mse)
                               t.accumulate(pred, resid * (T(2) * s));
                           else
                               t.accumulate(pred, (resid.array().sign() * s).matrix());
                       });
}

namespace detail {

struct NccStats {
    double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
    std::size_t n = 0;
};

template <class DA, class DB>
NccStats ncc_stats(const DA& a, const DB& b, const std::vector<std::uint8_t>& mask)
{
    NccStats s;
    const auto len = static_cast<std::size_t>(a.size());
    for (std::size_t i = 0; i < len; ++i) {
        if (!mask.empty() && !mask[i])
            continue;
        s.mean_a += a(static_cast<Eigen::Index>(i));
        s.mean_b += b(static_cast<Eigen::Index>(i));
        ++s.n;
    }
    if (s.n < 2)
        throw NumericalError("NCC needs at least two valid samples");
    s.mean_a /= static_cast<double>(s.n);
    s.mean_b /= static_cast<double>(s.n);
    for (std::size_t i = 0; i < len; ++i) {
        if (!mask.empty() && !mask[i])
            continue;
        const double da = a(static_cast<Eigen::Index>(i)) - s.mean_a;
        const double db = b(static_cast<Eigen::Index>(i)) - s.mean_b;
        s.var_a += da * da;
        s.var_b += db * db;
        s.cov += da * db;
    }
    s.var_a /= static_cast<double>(s.n);
    s.var_b /= static_cast<double>(s.n);
    s.cov /= static_cast<double>(s.n);
    // Relative threshold: variance indistinguishable from rounding noise.
    auto flat = [](double var, double mean) { return var <= 1e-24 + 1e-12 * mean * mean; };
    if (flat(s.var_a, s.mean_a) || flat(s.var_b, s.mean_b))
        throw NumericalError("constant signal under NCC");
    return s;
}

} // namespace detail

/// Pearson correlation of two equally long signals, in [-1, 1].
template <class DA, class DB>
double ncc(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, const std::vector<std::uint8_t>& mask = {})
{
    if (a.size() != b.size())
        throw ConfigError("NCC inputs differ in length");
    const auto s = detail::ncc_stats(a.derived().reshaped(), b.derived().reshaped(), mask);
    return std::clamp(s.cov / std::sqrt(s.var_a * s.var_b), -1.0, 1.0);
}

/// NCC between a recorded prediction (n x 1) and a fixed target, with
/// gradient into the prediction.
template <class T>
typename Tape<T>::Var ncc_loss(Tape<T>& tape, typename Tape<T>::Var pred, const Matrix<T>& target,
                               const std::vector<std::uint8_t>& mask = {})
{
    const Matrix<T>& p = tape.value(pred);
    if (p.size() != target.size())
        throw ConfigError("NCC inputs differ in length");
    const auto s = detail::ncc_stats(p.reshaped(), target.reshaped(), mask);
    const double sa = std::sqrt(s.var_a), sb = std::sqrt(s.var_b);
    const double r = s.cov / (sa * sb);
    Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(r);

    // dr/da_i = ((b_i - mb) / (sa sb) - r (a_i - ma) / sa^2) / n
    Matrix<T> g = Matrix<T>::Zero(p.rows(), p.cols());
    const double inv_n = 1.0 / static_cast<double>(s.n);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(i)])
            continue;
        const double da = p.data()[i] - s.mean_a;
        const double db = target.data()[i] - s.mean_b;
        g.data()[i] = static_cast<T>(inv_n * (db / (sa * sb) - r * da / s.var_a));
    }
    return tape.custom(std::move(out), tape.needs_grad(pred), [pred, g = std::move(g)](Tape<T>& t, const Matrix<T>& up) {
        t.accumulate(pred, g * up(0, 0));
    });
}

/// Number of field evaluations per curvature probe point.
inline constexpr int bending_stencil_size = 19;

/// Stencil offsets in units of h: center, +-e_i, and (+-e_i +- e_j) for i<j.
inline std::array<std::array<int, 3>, bending_stencil_size> bending_stencil()
{
    std::array<std::array<int, 3>, bending_stencil_size> s{};
    int k = 1; // s[0] = center
    for (int i = 0; i < 3; ++i) {
        s[k][i] = 1;
        ++k;
        s[k][i] = -1;
        ++k;
    }
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            for (int si : {1, -1})
                for (int sj : {1, -1}) {
                    s[k][i] = si;
                    s[k][j] = sj;
                    ++k;
                }
    return s;
}

/// Mean over probe points of sum_c [ sum_i (d2 u_c / dx_i^2)^2 + 2 sum_{i<j} (d2 u_c / dx_i dx_j)^2 ],
/// with second derivatives from central differences of step h. Points are
/// pulled inward to keep the stencil inside [-1, 1]^3.
///
/// `field` maps a tape variable of n x 3 coordinates to n x 3 displacements.
template <class T, class Field>
typename Tape<T>::Var bending_energy(Tape<T>& tape, Field&& field, const Matrix<T>& points, T h)
{
    if (!(h > T(0)))
        throw ConfigError("bending energy step must be positive");
    if (points.cols() != 3)
        throw ConfigError("bending energy expects n x 3 probe points");
    const Eigen::Index n = points.rows();
    if (n == 0)
        throw ConfigError("bending energy needs at least one probe point");
    const T limit = std::max(T(0), T(1) - T(2) * h);
    const auto stencil = bending_stencil();

    Matrix<T> probes(n * bending_stencil_size, 3);
    for (Eigen::Index p = 0; p < n; ++p)
        for (int s = 0; s < bending_stencil_size; ++s)
            for (int d = 0; d < 3; ++d) {
                const T c = std::clamp(points(p, d), -limit, limit);
                probes(p * bending_stencil_size + s, d) = c + static_cast<T>(stencil[static_cast<std::size_t>(s)][static_cast<std::size_t>(d)]) * h;
            }

    auto coords = tape.constant(std::move(probes));
    auto u = field(tape, coords);
    const Matrix<T>& uv = tape.value(u);
    if (uv.rows() != n * bending_stencil_size)
        throw ConfigError("bending energy: field returned the wrong number of rows");
    const Eigen::Index comps = uv.cols();

    // Second-derivative estimates per (point, component): 3 pure + 3 mixed.
    const T inv_h2 = T(1) / (h * h);
    const T inv_4h2 = T(1) / (T(4) * h * h);
    Matrix<T> d2(n * comps, 6);
    for (Eigen::Index p = 0; p < n; ++p) {
        const Eigen::Index base = p * bending_stencil_size;
        for (Eigen::Index c = 0; c < comps; ++c) {
            const T center = uv(base, c);
            for (int i = 0; i < 3; ++i)
                d2(p * comps + c, i) = (uv(base + 1 + 2 * i, c) - T(2) * center + uv(base + 2 + 2 * i, c)) * inv_h2;
            for (int m = 0; m < 3; ++m) {
                const Eigen::Index q = base + 7 + 4 * m; // (+,+), (+,-), (-,+), (-,-)
                d2(p * comps + c, 3 + m) = (uv(q, c) - uv(q + 1, c) - uv(q + 2, c) + uv(q + 3, c)) * inv_4h2;
            }
        }
    }
    double acc = 0.0;
    for (Eigen::Index r = 0; r < d2.rows(); ++r) {
        for (int i = 0; i < 3; ++i)
            acc += static_cast<double>(d2(r, i)) * d2(r, i);
        for (int m = 3; m < 6; ++m)
            acc += 2.0 * static_cast<double>(d2(r, m)) * d2(r, m);
    }
    Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(acc / static_cast<double>(n));

    return tape.custom(std::move(out), tape.needs_grad(u),
                       [u, d2 = std::move(d2), n, comps, inv_h2, inv_4h2](Tape<T>& t, const Matrix<T>& up) {
                           const T s = up(0, 0) / static_cast<T>(n);
                           Matrix<T> gu = Matrix<T>::Zero(n * bending_stencil_size, comps);
                           for (Eigen::Index p = 0; p < n; ++p) {
                               const Eigen::Index base = p * bending_stencil_size;
                               for (Eigen::Index c = 0; c < comps; ++c) {
                                   const Eigen::Index r = p * comps + c;
                                   for (int i = 0; i < 3; ++i) {
                                       const T g = T(2) * d2(r, i) * s * inv_h2;
                                       gu(base + 1 + 2 * i, c) += g;
                                       gu(base + 2 + 2 * i, c) += g;
                                       gu(base, c) -= T(2) * g;
                                   }
                                   for (int m = 0; m < 3; ++m) {
                                       const T g = T(4) * d2(r, 3 + m) * s * inv_4h2;
                                       const Eigen::Index q = base + 7 + 4 * m;
                                       gu(q, c) += g;
                                       gu(q + 1, c) -= g;
                                       gu(q + 2, c) -= g;
                                       gu(q + 3, c) += g;
                                   }
                               }
                           }
                           t.accumulate(u, gu);
                       });
}

} // namespace sims
