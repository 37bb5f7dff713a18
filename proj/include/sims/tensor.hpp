#pragma once

// Reverse-mode differentiation over fixed-topology feedforward graphs.
//
// A Tape records the forward computation of one batch as a list of nodes.
// Each node holds its value (a row-major batch matrix) and a closure that
// pushes the upstream gradient into its inputs and into any trainable
// parameters it references. Parameters live in a ParamStore and accumulate
// gradients across backward() calls until zeroed.

#include "core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sims {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    // Adam moments, same shape as value.
    Matrix<T> m;
    Matrix<T> v;
    bool frozen = false;

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
};

/// Named parameter arrays with gradient and optimizer state. Entries have
/// stable addresses for the lifetime of the store.
template <class T>
class ParamStore {
public:
    using Scalar = T;

    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols)
    {
        if (rows <= 0 || cols <= 0)
            throw ConfigError("parameter '" + name + "' must have positive shape");
        for (const auto& p : params_)
            if (p.name == name)
                throw ConfigError("duplicate parameter name '" + name + "'");
        Parameter<T> p;
        p.name = std::move(name);
        p.value = Matrix<T>::Zero(rows, cols);
        p.grad = Matrix<T>::Zero(rows, cols);
        p.m = Matrix<T>::Zero(rows, cols);
        p.v = Matrix<T>::Zero(rows, cols);
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    Parameter<T>& operator[](std::size_t i) { return params_.at(i); }
    const Parameter<T>& operator[](std::size_t i) const { return params_.at(i); }

    Parameter<T>& find(std::string_view name)
    {
        for (auto& p : params_)
            if (p.name == name)
                return p;
        throw UsageError("no parameter named '" + std::string(name) + "'");
    }

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad()
    {
        for (auto& p : params_)
            p.grad.setZero();
    }

    void set_frozen(bool frozen)
    {
        for (auto& p : params_)
            p.frozen = frozen;
    }

    std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_)
            n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    /// Fingerprint of all parameter values.
    std::uint64_t checksum() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_)
            h = fnv1a(p.value.data(), sizeof(T) * static_cast<std::size_t>(p.value.size()), h);
        return h;
    }

    /// Optimizer step counter, shared by all entries.
    std::int64_t step = 0;

private:
    std::deque<Parameter<T>> params_;
};

/// Sets every parameter's frozen flag for the guard's lifetime, restoring
/// the previous flags afterwards.
template <class T>
class FreezeGuard {
public:
    explicit FreezeGuard(ParamStore<T>& store, bool frozen = true) : store_(store)
    {
        for (auto& p : store_) {
            saved_.push_back(p.frozen);
            p.frozen = frozen;
        }
    }
    ~FreezeGuard()
    {
        std::size_t i = 0;
        for (auto& p : store_)
            p.frozen = saved_[i++];
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    ParamStore<T>& store_;
    std::vector<bool> saved_;
};

template <class T>
class Tape {
public:
    using Scalar = T;

    struct Var {
        std::size_t id = static_cast<std::size_t>(-1);
    };

    /// Backward closure: receives the tape and this node's upstream gradient.
    using BackwardFn = std::function<void(Tape&, const Matrix<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }

    Var constant(Matrix<T> value) { return push(std::move(value), false, {}); }

    /// Leaf whose gradient is kept and readable via grad() after backward().
    Var variable(Matrix<T> value) { return push(std::move(value), true, {}); }

    const Matrix<T>& value(Var v) const { return node(v).value; }

    const Matrix<T>& grad(Var v) const
    {
        const Node& n = node(v);
        if (n.grad.size() == 0)
            throw UsageError("no gradient recorded for this node");
        return n.grad;
    }

    bool needs_grad(Var v) const { return node(v).needs_grad; }

    /// Adds delta into the gradient of v (no-op for nodes that need none).
    void accumulate(Var v, const Matrix<T>& delta)
    {
        Node& n = node(v);
        if (!n.needs_grad)
            return;
        if (n.grad.size() == 0)
            n.grad = delta;
        else
            n.grad += delta;
    }

    Var custom(Matrix<T> value, bool needs_grad, BackwardFn fn)
    {
        return push(std::move(value), needs_grad, std::move(fn));
    }

    /// out = x * W^T + b, with W stored as (out_features x in_features)
    /// and b as (1 x out_features).
    Var linear(Var x, Parameter<T>& w, Parameter<T>& b)
    {
        const Matrix<T>& xv = value(x);
        if (xv.cols() != w.cols())
            throw ConfigError("linear layer '" + w.name + "' expects width " + std::to_string(w.cols())
                              + ", got " + std::to_string(xv.cols()));
        if (b.rows() != 1 || b.cols() != w.rows())
            throw ConfigError("bias '" + b.name + "' does not match weights '" + w.name + "'");
        Matrix<T> out(xv.rows(), w.rows());
        out.noalias() = xv * w.value.transpose();
        out.rowwise() += b.value.row(0);
        const bool ng = needs_grad(x) || !w.frozen || !b.frozen;
        Parameter<T>* wp = &w;
        Parameter<T>* bp = &b;
        return push(std::move(out), ng, [x, wp, bp](Tape& t, const Matrix<T>& up) {
            if (!wp->frozen)
                wp->grad.noalias() += up.transpose() * t.value(x);
            if (!bp->frozen)
                bp->grad.row(0) += up.colwise().sum();
            if (t.needs_grad(x)) {
                Matrix<T> dx(up.rows(), wp->cols());
                dx.noalias() = up * wp->value;
                t.accumulate(x, dx);
            }
        });
    }

    Var relu(Var x)
    {
        Matrix<T> out = value(x).cwiseMax(T(0));
        return push(std::move(out), needs_grad(x), [x](Tape& t, const Matrix<T>& up) {
            const Matrix<T>& xv = t.value(x);
            Matrix<T> dx = (xv.array() > T(0)).select(up, T(0));
            t.accumulate(x, dx);
        });
    }

    /// sin(omega0 * x)
    Var sine(Var x, T omega0)
    {
        if (!(omega0 > T(0)))
            throw ConfigError("sine activation requires omega0 > 0");
        Matrix<T> out = (value(x).array() * omega0).sin().matrix();
        return push(std::move(out), needs_grad(x), [x, omega0](Tape& t, const Matrix<T>& up) {
            Matrix<T> dx = (up.array() * (t.value(x).array() * omega0).cos() * omega0).matrix();
            t.accumulate(x, dx);
        });
    }

    Var add(Var a, Var b)
    {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(b);
        if (av.rows() != bv.rows() || av.cols() != bv.cols())
            throw ConfigError("add: shape mismatch");
        Matrix<T> out = av + bv;
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, const Matrix<T>& up) {
            t.accumulate(a, up);
            t.accumulate(b, up);
        });
    }

    Var scale(Var a, T s)
    {
        Matrix<T> out = value(a) * s;
        return push(std::move(out), needs_grad(a), [a, s](Tape& t, const Matrix<T>& up) {
            t.accumulate(a, up * s);
        });
    }

    /// Elementwise product.
    Var mul(Var a, Var b)
    {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(b);
        if (av.rows() != bv.rows() || av.cols() != bv.cols())
            throw ConfigError("mul: shape mismatch");
        Matrix<T> out = av.cwiseProduct(bv);
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, const Matrix<T>& up) {
            if (t.needs_grad(a))
                t.accumulate(a, up.cwiseProduct(t.value(b)));
            if (t.needs_grad(b))
                t.accumulate(b, up.cwiseProduct(t.value(a)));
        });
    }

    /// Horizontal concatenation [a | b].
    Var concat_cols(Var a, Var b)
    {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(b);
        if (av.rows() != bv.rows())
            throw ConfigError("concat: row mismatch");
        Matrix<T> out(av.rows(), av.cols() + bv.cols());
        out << av, bv;
        const Eigen::Index ac = av.cols();
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b, ac](Tape& t, const Matrix<T>& up) {
            if (t.needs_grad(a))
                t.accumulate(a, up.leftCols(ac));
            if (t.needs_grad(b))
                t.accumulate(b, up.rightCols(up.cols() - ac));
        });
    }

    /// Vertical concatenation of row blocks.
    Var concat_rows(Var a, Var b)
    {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(b);
        if (av.cols() != bv.cols())
            throw ConfigError("concat: column mismatch");
        Matrix<T> out(av.rows() + bv.rows(), av.cols());
        out << av, bv;
        const Eigen::Index ar = av.rows();
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b, ar](Tape& t, const Matrix<T>& up) {
            if (t.needs_grad(a))
                t.accumulate(a, up.topRows(ar));
            if (t.needs_grad(b))
                t.accumulate(b, up.bottomRows(up.rows() - ar));
        });
    }

    /// Scalar sum of all entries.
    Var sum(Var a)
    {
        Matrix<T> out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), needs_grad(a), [a](Tape& t, const Matrix<T>& up) {
            const Matrix<T>& av = t.value(a);
            t.accumulate(a, Matrix<T>::Constant(av.rows(), av.cols(), up(0, 0)));
        });
    }

    /// Scalar sum(a .* c) for a constant c; injects an externally computed
    /// gradient c into a.
    Var dot_constant(Var a, Matrix<T> c)
    {
        const Matrix<T>& av = value(a);
        if (av.rows() != c.rows() || av.cols() != c.cols())
            throw ConfigError("dot_constant: shape mismatch");
        Matrix<T> out(1, 1);
        out(0, 0) = av.cwiseProduct(c).sum();
        return push(std::move(out), needs_grad(a), [a, c = std::move(c)](Tape& t, const Matrix<T>& up) {
            t.accumulate(a, c * up(0, 0));
        });
    }

    /// Propagates d(root)/d(.) through the recorded graph. The root must be a
    /// 1x1 node. Parameter gradients accumulate across calls; node gradients
    /// are recomputed each call.
    void backward(Var root)
    {
        if (nodes_.empty())
            throw UsageError("backward() called before any forward computation");
        if (root.id >= nodes_.size())
            throw UsageError("backward() root is not a node of this tape");
        if (nodes_[root.id].value.rows() != 1 || nodes_[root.id].value.cols() != 1)
            throw UsageError("backward() root must be a scalar");
        for (auto& n : nodes_)
            n.grad.resize(0, 0);
        if (!nodes_[root.id].needs_grad)
            return;
        nodes_[root.id].grad = Matrix<T>::Ones(1, 1);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.size() == 0)
                continue;
            // Closures only write to lower-indexed nodes.
            n.backward(*this, n.grad);
        }
    }

private:
    struct Node {
        Matrix<T> value;
        Matrix<T> grad;
        bool needs_grad = false;
        BackwardFn backward;
    };

    Var push(Matrix<T> value, bool needs_grad, BackwardFn fn)
    {
        nodes_.push_back(Node{std::move(value), Matrix<T>(), needs_grad, needs_grad ? std::move(fn) : BackwardFn{}});
        return Var{nodes_.size() - 1};
    }

    Node& node(Var v)
    {
        if (v.id >= nodes_.size())
            throw UsageError("variable does not belong to this tape");
        return nodes_[v.id];
    }
    const Node& node(Var v) const
    {
        if (v.id >= nodes_.size())
            throw UsageError("variable does not belong to this tape");
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
};

/// Dense affine map without a tape, used by tests and inference helpers.
template <class T>
Matrix<T> linear_forward(const Matrix<T>& input, const Matrix<T>& weights, const Matrix<T>& bias)
{
    if (input.cols() != weights.cols())
        throw ConfigError("linear_forward: input width " + std::to_string(input.cols())
                          + " does not match weight input dimension " + std::to_string(weights.cols()));
    if (bias.size() != weights.rows())
        throw ConfigError("linear_forward: bias length does not match output dimension");
    Matrix<T> out(input.rows(), weights.rows());
    out.noalias() = input * weights.transpose();
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index c = 0; c < out.cols(); ++c)
            out(r, c) += bias(c);
    return out;
}

enum class Activation { relu, sine };

template <class T>
Matrix<T> activation(Activation kind, const Matrix<T>& input, T omega0 = T(1))
{
    if (kind == Activation::relu)
        return input.cwiseMax(T(0));
    if (!(omega0 > T(0)))
        throw ConfigError("sine activation requires omega0 > 0");
    return (input.array() * omega0).sin().matrix();
}

} // namespace sims
