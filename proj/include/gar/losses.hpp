// Pointwise and pairwise regression losses.
//
// The pairwise label-difference losses come in two forms:
//
//   * a quadratic form that literally compares every pair (i, j), kept
//     value-only as a test oracle;
//   * a linear-time differentiable form: the biased variance of the
//     prediction errors for the plain pairwise loss, and one minus the
//     Pearson correlation for the normalised (p = 2) pairwise loss.
//
// Multi-target batches are handled per target column and then averaged.
#pragma once

#include "gar/autodiff.hpp"
#include "gar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace gar {

/// Predictions [N x T] (a graph node) aligned with targets [N x T].
struct Batch {
    ad::Var predictions;
    Tensor targets;
};

struct LossBreakdown {
    double l_mae = 0.0;
    double l_diff = 0.0;
    double l_diffnorm = 0.0;
    double mean_error = 0.0;
    double error_variance = 0.0;
    double pearson = 0.0;
};

struct MseDecomposition {
    double variance = 0.0;
    double squared_mean = 0.0;
};

inline constexpr double kDiffnormEps = 1e-12;

namespace detail {

/// Rank-1 or rank-2 shape, interpreted as [N x T].
inline void check_pair(const Tensor& pred, const Tensor& target, std::size_t min_rows)
{
    if (pred.rank() > 2 || target.rank() > 2 || pred.rows() != target.rows() ||
        pred.cols() != target.cols() || pred.size() != target.size())
        throw ShapeError("batch shape mismatch: predictions " + shape_string(pred.shape()) +
                         " vs targets " + shape_string(target.shape()));
    if (pred.rows() < min_rows)
        throw ShapeError("batch needs at least " + std::to_string(min_rows) + " rows, got " +
                         std::to_string(pred.rows()));
    if (!pred.all_finite() || !target.all_finite())
        throw DomainError("batch contains non-finite values");
}

inline void check_batch(const Batch& b, std::size_t min_rows)
{
    check_pair(b.predictions.value(), b.targets, min_rows);
}

struct ColumnStats {
    double mean = 0.0;
    double var = 0.0; // biased
};

inline ColumnStats column_stats(const Tensor& t, std::size_t c)
{
    const std::size_t n = t.rows(), m = t.cols();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        s += t[i * m + c];
    const double mu = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = t[i * m + c] - mu;
        v += d * d;
    }
    return {mu, v / static_cast<double>(n)};
}

/// Prediction column c as a rank-1 node (the node itself when T == 1).
inline ad::Var pred_column(const Batch& b, std::size_t c)
{
    if (b.targets.cols() == 1)
        return b.predictions;
    return ad::column(b.predictions, c);
}

inline Tensor target_column(const Batch& b, std::size_t c)
{
    if (b.targets.cols() == 1)
        return b.targets.reshaped(b.predictions.shape());
    return b.targets.column_of(c);
}

/// Averages a per-column scalar loss over the target columns.
template <class PerColumn>
ad::Var average_columns(const Batch& b, PerColumn per_column)
{
    const std::size_t cols = b.targets.cols();
    ad::Var total = per_column(pred_column(b, 0), target_column(b, 0));
    for (std::size_t c = 1; c < cols; ++c)
        total = total + per_column(pred_column(b, c), target_column(b, c));
    if (cols == 1)
        return total;
    return total * (1.0 / static_cast<double>(cols));
}

inline ad::Var targets_like(const Batch& b)
{
    return b.predictions.graph().constant(b.targets.reshaped(b.predictions.shape()));
}

} // namespace detail

/// Mean absolute error over all N*T entries.
inline ad::Var mae(const Batch& b)
{
    detail::check_batch(b, 1);
    return ad::mean(ad::abs(b.predictions - detail::targets_like(b)));
}

inline ad::Var mse(const Batch& b)
{
    detail::check_batch(b, 1);
    return ad::mean(ad::square(b.predictions - detail::targets_like(b)));
}

/// Mean Huber loss: 0.5 e^2 when |e| <= delta, delta (|e| - 0.5 delta) otherwise.
inline ad::Var huber(const Batch& b, double delta)
{
    if (!(delta > 0.0))
        throw std::invalid_argument("huber: delta must be positive");
    detail::check_batch(b, 1);
    auto err = b.predictions - detail::targets_like(b);
    auto elem = ad::unary(
        err,
        [delta](double e) {
            const double a = std::fabs(e);
            return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
        },
        [delta](double e, double) {
            if (std::fabs(e) <= delta)
                return e;
            return e > 0.0 ? delta : -delta;
        });
    return ad::mean(elem);
}

/// Biased variance of the prediction errors, per target and then averaged.
/// Equals the all-pairs half-squared label-difference loss.
inline ad::Var loss_diff(const Batch& b)
{
    detail::check_batch(b, 1);
    return detail::average_columns(b, [](ad::Var f, const Tensor& y) {
        auto err = f - f.graph().constant(y);
        auto centered = err - ad::mean(err);
        return ad::mean(ad::square(centered));
    });
}

/// 1 - Cov(f, y) / sqrt((Var f + eps)(Var y + eps)), per target and then
/// averaged. eps = 0 gives the exact normalised pairwise loss.
inline ad::Var loss_diffnorm(const Batch& b, double eps = kDiffnormEps)
{
    if (eps < 0.0)
        throw std::invalid_argument("loss_diffnorm: eps must be non-negative");
    detail::check_batch(b, 2);
    return detail::average_columns(b, [eps](ad::Var f, const Tensor& y) {
        auto& g = f.graph();
        const double n = static_cast<double>(y.size());
        double mu = 0.0;
        for (double v : y.values())
            mu += v;
        mu /= n;
        std::vector<double> yc(y.size());
        double vy = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            yc[i] = y[i] - mu;
            vy += yc[i] * yc[i];
        }
        vy /= n;
        auto fc = f - ad::mean(f);
        auto cov = ad::mean(fc * g.constant(Tensor(f.shape(), std::move(yc))));
        auto vf = ad::mean(ad::square(fc));
        auto denom = ad::sqrt((vf + eps) * (vy + eps));
        return 1.0 - cov / denom;
    });
}

/// Value-only diagnostics for a batch of predictions and targets.
inline LossBreakdown breakdown(const Tensor& pred, const Tensor& target,
                               double eps = kDiffnormEps)
{
    detail::check_pair(pred, target, 1);
    const std::size_t n = pred.rows(), cols = pred.cols();
    LossBreakdown out;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        abs_sum += std::fabs(pred[i] - target[i]);
    out.l_mae = abs_sum / static_cast<double>(pred.size());
    for (std::size_t c = 0; c < cols; ++c) {
        const auto fs = detail::column_stats(pred, c);
        const auto ys = detail::column_stats(target, c);
        double cov = 0.0, err_mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cov += (pred[i * cols + c] - fs.mean) * (target[i * cols + c] - ys.mean);
            err_mean += pred[i * cols + c] - target[i * cols + c];
        }
        cov /= static_cast<double>(n);
        err_mean /= static_cast<double>(n);
        double err_var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred[i * cols + c] - target[i * cols + c] - err_mean;
            err_var += d * d;
        }
        err_var /= static_cast<double>(n);
        const double rho = cov / std::sqrt((fs.var + eps) * (ys.var + eps));
        out.mean_error += err_mean;
        out.error_variance += err_var;
        out.pearson += rho;
    }
    const double t = static_cast<double>(cols);
    out.mean_error /= t;
    out.error_variance /= t;
    out.pearson /= t;
    out.l_diff = out.error_variance;
    out.l_diffnorm = 1.0 - out.pearson;
    return out;
}

/// MSE = Var(error) + mean(error)^2, each averaged over targets.
inline MseDecomposition mse_decomposition(const Tensor& pred, const Tensor& target)
{
    detail::check_pair(pred, target, 1);
    const std::size_t n = pred.rows(), cols = pred.cols();
    MseDecomposition out;
    for (std::size_t c = 0; c < cols; ++c) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mu += pred[i * cols + c] - target[i * cols + c];
        mu /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred[i * cols + c] - target[i * cols + c] - mu;
            v += d * d;
        }
        out.variance += v / static_cast<double>(n);
        out.squared_mean += mu * mu;
    }
    out.variance /= static_cast<double>(cols);
    out.squared_mean /= static_cast<double>(cols);
    return out;
}

inline MseDecomposition mse_decomposition(const Batch& b)
{
    return mse_decomposition(b.predictions.value(), b.targets);
}

/// beta * MAE + (1 - beta) * L_diffnorm, with beta the current Pearson
/// correlation clamped to [0, 1] and held constant for differentiation.
inline ad::Var mae_pearson_fused(const Batch& b, double eps = kDiffnormEps)
{
    detail::check_batch(b, 2);
    const double rho = breakdown(b.predictions.value(), b.targets, eps).pearson;
    const double beta = std::clamp(rho, 0.0, 1.0);
    auto l_mae = mae(b);
    auto l_dn = loss_diffnorm(b, eps);
    if (beta == 0.0)
        return l_dn;
    if (beta == 1.0)
        return l_mae;
    return beta * l_mae + (1.0 - beta) * l_dn;
}

// Quadratic reference forms. O(N^2) per target, value only.

/// (1/N^2) sum_ij 0.5 [(f_i - f_j) - (y_i - y_j)]^2, averaged over targets.
inline double pairwise_diff_quadratic(const Tensor& pred, const Tensor& target)
{
    detail::check_pair(pred, target, 1);
    const std::size_t n = pred.rows(), cols = pred.cols();
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fi = pred[i * cols + c], yi = target[i * cols + c];
            for (std::size_t j = 0; j < n; ++j) {
                const double d = (fi - pred[j * cols + c]) - (yi - target[j * cols + c]);
                s += 0.5 * d * d;
            }
        }
        total += s / (static_cast<double>(n) * static_cast<double>(n));
    }
    return total / static_cast<double>(cols);
}

/// 0.5 || df/||df|| - dy/||dy|| ||_2^2 over the N^2 pairwise-difference
/// vectors, averaged over targets. The half makes it equal 1 - rho, so
/// antipodal vectors score 2. Throws DegenerateBatch if either vector is zero.
inline double pairwise_diffnorm_quadratic(const Tensor& pred, const Tensor& target)
{
    detail::check_pair(pred, target, 2);
    const std::size_t n = pred.rows(), cols = pred.cols();
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
        double nf = 0.0, ny = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double df = pred[i * cols + c] - pred[j * cols + c];
                const double dy = target[i * cols + c] - target[j * cols + c];
                nf += df * df;
                ny += dy * dy;
            }
        if (nf == 0.0 || ny == 0.0)
            throw DegenerateBatch("pairwise differences are identically zero");
        nf = std::sqrt(nf);
        ny = std::sqrt(ny);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double d = (pred[i * cols + c] - pred[j * cols + c]) / nf -
                                 (target[i * cols + c] - target[j * cols + c]) / ny;
                s += d * d;
            }
        total += 0.5 * s;
    }
    return total / static_cast<double>(cols);
}

inline double pairwise_diff_quadratic(const Batch& b)
{
    return pairwise_diff_quadratic(b.predictions.value(), b.targets);
}

inline double pairwise_diffnorm_quadratic(const Batch& b)
{
    return pairwise_diffnorm_quadratic(b.predictions.value(), b.targets);
}

} // namespace gar
