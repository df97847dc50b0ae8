// Tape-based reverse-mode automatic differentiation over gar::Tensor.
//
// A Graph owns every node created while evaluating an expression. Nodes are
// appended in evaluation order, so the tape order is already a topological
// order and backward() simply walks it in reverse. Var is a cheap handle
// (graph pointer + index); it is only valid while its Graph is alive.
//
// Broadcasting is limited to scalar <-> tensor. Anything richer (adding a
// bias row to every row of a matrix) has a dedicated op.
#pragma once

#include "gar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gar::ad {

class Graph;

class Var {
public:
    Var() = default;
    Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

    const Tensor& value() const;
    /// Gradient of the last backward() root with respect to this node.
    Tensor grad() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    double item() const { return value().item(); }

    Graph& graph() const { return *g_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return g_ != nullptr; }

private:
    Graph* g_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    /// Propagates the output gradient of a node into its parents.
    using BackwardFn =
        std::function<void(Graph&, std::size_t self, std::span<const double> out_grad)>;

    Graph() { nodes_.reserve(64); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf whose gradient is tracked.
    Var variable(Tensor value) { return push(std::move(value), true, {}); }

    /// Leaf excluded from differentiation.
    Var constant(Tensor value) { return push(std::move(value), false, {}); }
    Var constant(double v) { return constant(Tensor::scalar(v)); }

    /// Records an op result. The node tracks gradients iff any parent does;
    /// otherwise the backward rule is dropped.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn)
    {
        bool track = false;
        for (const auto& p : parents)
            track = track || nodes_[p.id()].requires_grad;
        return push(std::move(value), track, track ? std::move(fn) : BackwardFn{});
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    Tensor gradient(std::size_t id) const
    {
        const auto& n = nodes_.at(id);
        if (n.grad.empty())
            return Tensor::zeros(n.value.shape());
        return Tensor(n.value.shape(), n.grad);
    }

    /// Mutable gradient buffer, zero-initialised on first touch. Returns an
    /// empty span for nodes that do not track gradients.
    std::span<double> grad_buffer(std::size_t id)
    {
        auto& n = nodes_[id];
        if (!n.requires_grad)
            return {};
        if (n.grad.empty())
            n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse accumulation from a scalar root. Gradients from a previous
    /// call are discarded first.
    void backward(Var root)
    {
        if (root.id() >= nodes_.size() || &root.graph() != this)
            throw std::invalid_argument("backward: root does not belong to this graph");
        if (nodes_[root.id()].value.size() != 1)
            throw ShapeError("backward: root must be scalar, got shape " +
                             shape_string(nodes_[root.id()].value.shape()));
        for (auto& n : nodes_)
            n.grad.clear();
        if (!nodes_[root.id()].requires_grad)
            return;
        grad_buffer(root.id())[0] = 1.0;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.grad.empty() || !n.backward)
                continue;
            n.backward(*this, i, n.grad);
        }
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn fn)
    {
        nodes_.push_back(Node{std::move(value), {}, std::move(fn), requires_grad});
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return g_->value(id_); }
inline Tensor Var::grad() const { return g_->gradient(id_); }

namespace detail {

inline void check_same_graph(const Var& a, const Var& b)
{
    if (&a.graph() != &b.graph())
        throw std::invalid_argument("operands belong to different graphs");
}

/// Output shape for scalar<->tensor broadcasting.
inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() == b.shape())
        return a.shape();
    if (b.size() == 1)
        return a.shape();
    if (a.size() == 1)
        return b.shape();
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
}

// f(x, y) -> z; da(x, y) = dz/dx; db(x, y) = dz/dy
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* name, F f, DA da, DB db)
{
    check_same_graph(a, b);
    auto& g = a.graph();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Shape shape = broadcast_shape(x, y, name);
    const std::size_t n = shape_size(shape);
    const bool xs = x.size() == 1 && n != 1;
    const bool ys = y.size() == 1 && n != 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = f(x[xs ? 0 : i], y[ys ? 0 : i]);
    const auto ia = a.id(), ib = b.id();
    return g.record(Tensor(std::move(shape), std::move(out)), {a, b},
                    [ia, ib, xs, ys, da, db](Graph& gr, std::size_t, std::span<const double> go) {
                        const Tensor& x = gr.value(ia);
                        const Tensor& y = gr.value(ib);
                        auto ga = gr.grad_buffer(ia);
                        if (!ga.empty()) {
                            for (std::size_t i = 0; i < go.size(); ++i) {
                                const double xv = x[xs ? 0 : i], yv = y[ys ? 0 : i];
                                ga[xs ? 0 : i] += go[i] * da(xv, yv);
                            }
                        }
                        auto gb = gr.grad_buffer(ib);
                        if (!gb.empty()) {
                            for (std::size_t i = 0; i < go.size(); ++i) {
                                const double xv = x[xs ? 0 : i], yv = y[ys ? 0 : i];
                                gb[ys ? 0 : i] += go[i] * db(xv, yv);
                            }
                        }
                    });
}

} // namespace detail

/// Elementwise map with a user-supplied derivative; df(x, f(x)).
template <class F, class DF>
Var unary(Var a, F f, DF df)
{
    auto& g = a.graph();
    const Tensor& x = a.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = f(x[i]);
    const auto ia = a.id();
    return g.record(Tensor(x.shape(), std::move(out)), {a},
                    [ia, df](Graph& gr, std::size_t self, std::span<const double> go) {
                        const Tensor& x = gr.value(ia);
                        const Tensor& z = gr.value(self);
                        auto ga = gr.grad_buffer(ia);
                        for (std::size_t i = 0; i < go.size(); ++i)
                            ga[i] += go[i] * df(x[i], z[i]);
                    });
}

inline Var add(Var a, Var b)
{
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b)
{
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b)
{
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Var div(Var a, Var b)
{
    for (double v : b.value().values())
        if (v == 0.0)
            throw DomainError("div: division by zero");
    return detail::binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

inline Var neg(Var a)
{
    return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

/// Subgradient 0 at exactly 0.
inline Var abs(Var a)
{
    return unary(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var a)
{
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a)
{
    for (double v : a.value().values())
        if (v < 0.0)
            throw DomainError("sqrt of negative value");
    return unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double z) { return 0.5 / z; });
}

inline Var log(Var a)
{
    for (double v : a.value().values())
        if (!(v > 0.0))
            throw DomainError("log of non-positive value");
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(Var a)
{
    return unary(a, [](double x) { return std::exp(x); }, [](double, double z) { return z; });
}

/// x for x > 0, exp(x) - 1 otherwise. Derivative at 0 is taken as 1.
inline Var elu(Var a)
{
    return unary(
        a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
        [](double x, double) { return x >= 0.0 ? 1.0 : std::exp(x); });
}

/// max(x, floor); no gradient flows where the floor is active.
inline Var clamp_min(Var a, double floor)
{
    return unary(
        a, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

/// Value copy with no gradient path back to a.
inline Var detach(Var a) { return a.graph().constant(a.value()); }

namespace detail {

inline void require_nonempty(const Var& a, const char* op)
{
    if (a.value().empty())
        throw ShapeError(std::string(op) + " of empty tensor");
}

/// max/min reduction; the gradient goes to the first attaining index.
template <class Better>
Var arg_reduce(Var a, const char* name, Better better)
{
    require_nonempty(a, name);
    const Tensor& x = a.value();
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (better(x[i], x[best]))
            best = i;
    const auto ia = a.id();
    return a.graph().record(Tensor::scalar(x[best]), {a},
                            [ia, best](Graph& gr, std::size_t, std::span<const double> go) {
                                gr.grad_buffer(ia)[best] += go[0];
                            });
}

} // namespace detail

inline Var sum(Var a)
{
    detail::require_nonempty(a, "sum");
    double s = 0.0;
    for (double v : a.value().values())
        s += v;
    const auto ia = a.id();
    return a.graph().record(Tensor::scalar(s), {a}, [ia](Graph& gr, std::size_t, std::span<const double> go) {
        for (auto& v : gr.grad_buffer(ia))
            v += go[0];
    });
}

inline Var mean(Var a)
{
    detail::require_nonempty(a, "mean");
    const auto n = static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.value().values())
        s += v;
    const auto ia = a.id();
    return a.graph().record(Tensor::scalar(s / n), {a},
                            [ia, n](Graph& gr, std::size_t, std::span<const double> go) {
                                const double d = go[0] / n;
                                for (auto& v : gr.grad_buffer(ia))
                                    v += d;
                            });
}

inline Var max(Var a)
{
    return detail::arg_reduce(a, "max", [](double x, double best) { return x > best; });
}

inline Var min(Var a)
{
    return detail::arg_reduce(a, "min", [](double x, double best) { return x < best; });
}

namespace detail {

/// C[m x n] += A[m x k] . B[k x n] with A read as a[i * rs + p * cs], so a
/// transposed left operand needs no copy. Four output rows share each load
/// of a B row.
inline void gemm_acc(const double* a, std::size_t rs, std::size_t cs, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n)
{
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* __restrict c0 = c + i * n;
        double* __restrict c1 = c0 + n;
        double* __restrict c2 = c1 + n;
        double* __restrict c3 = c2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a0 = a[i * rs + p * cs], a1 = a[(i + 1) * rs + p * cs];
            const double a2 = a[(i + 2) * rs + p * cs], a3 = a[(i + 3) * rs + p * cs];
            const double* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* __restrict row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * rs + p * cs];
            const double* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                row[j] += aip * brow[j];
        }
    }
}

} // namespace detail

/// [m x k] . [k x n] -> [m x n]
inline Var matmul(Var a, Var b)
{
    detail::check_same_graph(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_string(A.shape()) + " and " +
                         shape_string(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    std::vector<double> out(m * n, 0.0);
    detail::gemm_acc(A.values().data(), k, 1, B.values().data(), out.data(), m, k, n);
    const auto ia = a.id(), ib = b.id();
    return a.graph().record(
        Tensor({m, n}, std::move(out)), {a, b},
        [ia, ib, m, k, n](Graph& gr, std::size_t, std::span<const double> go) {
            const Tensor& A = gr.value(ia);
            const Tensor& B = gr.value(ib);
            // dA = G . B^T, with B^T materialised so the kernel streams rows.
            auto ga = gr.grad_buffer(ia);
            if (!ga.empty()) {
                std::vector<double> bt(n * k);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j)
                        bt[j * k + p] = B[p * n + j];
                detail::gemm_acc(go.data(), n, 1, bt.data(), ga.data(), m, n, k);
            }
            // dB = A^T . G
            auto gb = gr.grad_buffer(ib);
            if (!gb.empty())
                detail::gemm_acc(A.values().data(), 1, k, go.data(), gb.data(), k, m, n);
        });
}

/// Adds bias [n] (or [1 x n]) to every row of a [m x n].
inline Var add_bias(Var a, Var bias)
{
    detail::check_same_graph(a, bias);
    const Tensor& A = a.value();
    const Tensor& b = bias.value();
    if (A.rank() != 2 || b.size() != A.cols())
        throw ShapeError("add_bias: bias of shape " + shape_string(b.shape()) +
                         " does not fit rows of " + shape_string(A.shape()));
    const std::size_t m = A.rows(), n = A.cols();
    std::vector<double> out(A.values().begin(), A.values().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] += b[j];
    const auto ia = a.id(), ib = bias.id();
    return a.graph().record(Tensor(A.shape(), std::move(out)), {a, bias},
                            [ia, ib, m, n](Graph& gr, std::size_t, std::span<const double> go) {
                                auto ga = gr.grad_buffer(ia);
                                for (std::size_t i = 0; i < ga.size(); ++i)
                                    ga[i] += go[i];
                                auto gb = gr.grad_buffer(ib);
                                if (!gb.empty())
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < n; ++j)
                                            gb[j] += go[i * n + j];
                            });
}

/// Column c of a rank-2 node as a rank-1 node.
inline Var column(Var a, std::size_t c)
{
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = A.column_of(c);
    const auto ia = a.id();
    return a.graph().record(std::move(out), {a},
                            [ia, m, n, c](Graph& gr, std::size_t, std::span<const double> go) {
                                auto ga = gr.grad_buffer(ia);
                                for (std::size_t i = 0; i < m; ++i)
                                    ga[i * n + c] += go[i];
                            });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

inline Var operator+(Var a, double c) { return add(a, a.graph().constant(c)); }
inline Var operator+(double c, Var a) { return add(a.graph().constant(c), a); }
inline Var operator-(Var a, double c) { return sub(a, a.graph().constant(c)); }
inline Var operator-(double c, Var a) { return sub(a.graph().constant(c), a); }
inline Var operator*(Var a, double c) { return mul(a, a.graph().constant(c)); }
inline Var operator*(double c, Var a) { return mul(a.graph().constant(c), a); }
inline Var operator/(Var a, double c) { return div(a, a.graph().constant(c)); }
inline Var operator/(double c, Var a) { return div(a.graph().constant(c), a); }

} // namespace gar::ad
