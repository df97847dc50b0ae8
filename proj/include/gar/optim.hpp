// Optimizers, the stage-wise learning-rate schedule and the mini-batch
// training loop.
#pragma once

#include "gar/aggregate.hpp"
#include "gar/datasets.hpp"
#include "gar/losses.hpp"
#include "gar/network.hpp"
#include "gar/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gar {

// Optimizer steps ---------------------------------------------------------------

struct SgdMomentumState {
    std::vector<double> velocity;
};

/// v <- m v + (g + wd theta); theta <- theta - lr v
inline void sgd_momentum_step(std::span<double> params, std::span<const double> grads, SgdMomentumState& state,
                              double lr, double momentum, double weight_decay)
{
    if (grads.size() != params.size())
        throw ShapeError("sgd: gradient size does not match parameters");
    if (state.velocity.empty())
        state.velocity.assign(params.size(), 0.0);
    if (state.velocity.size() != params.size())
        throw ShapeError("sgd: state size does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + weight_decay * params[i];
        state.velocity[i] = momentum * state.velocity[i] + g;
        params[i] -= lr * state.velocity[i];
    }
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
/// `step` is the 1-based update count.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      double beta1, double beta2, double eps, double weight_decay, std::uint64_t step)
{
    if (step < 1)
        throw std::invalid_argument("adam: step index starts at 1");
    if (grads.size() != params.size())
        throw ShapeError("adam: gradient size does not match parameters");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + weight_decay * params[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

// Configuration ------------------------------------------------------------------

enum class OptimizerKind { sgd_momentum, adam };
enum class LossKind { mae, mse, huber, mae_pearson, gar };

/// Sub-loss slots of the GAR objective, in mask order.
enum GarTerm : std::size_t { kMaeTerm = 0, kDiffTerm = 1, kDiffnormTerm = 2 };

struct LossSpec {
    LossKind kind = LossKind::gar;
    double huber_delta = 1.0;
    /// alpha, floor and the three-way sub-loss mask.
    GarConfig gar{1.0, 1e-12, {true, true, true}};
    double diffnorm_eps = kDiffnormEps;

    bool pairwise() const
    {
        if (kind == LossKind::mae_pearson)
            return true;
        if (kind != LossKind::gar)
            return false;
        return gar.is_enabled(kDiffTerm) || gar.is_enabled(kDiffnormTerm);
    }
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double lr0 = 1e-2;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    std::vector<std::size_t> lr_decay_epochs{50, 75};
    double lr_decay_factor = 0.1;
    std::uint64_t seed = 123;
    LossSpec loss;

    void validate() const
    {
        if (!(lr0 > 0.0))
            throw std::invalid_argument("train: lr0 must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("train: momentum must be in [0, 1)");
        if (batch_size == 0)
            throw std::invalid_argument("train: batch_size must be positive");
        if (loss.pairwise() && batch_size < 2)
            throw std::invalid_argument("train: pairwise losses need batch_size >= 2");
        if (loss.kind == LossKind::huber && !(loss.huber_delta > 0.0))
            throw std::invalid_argument("train: huber delta must be positive");
        if (loss.kind == LossKind::gar)
            loss.gar.validate(3);
    }
};

/// lr0 * factor^k where k counts the milestones already reached by the
/// 0-based epoch index.
inline double learning_rate(const TrainConfig& cfg, std::size_t epoch)
{
    double lr = cfg.lr0;
    for (auto m : cfg.lr_decay_epochs)
        if (epoch >= m)
            lr *= cfg.lr_decay_factor;
    return lr;
}

/// Builds the training objective for one batch.
inline ad::Var build_loss(const Batch& b, const LossSpec& spec)
{
    switch (spec.kind) {
    case LossKind::mae: return mae(b);
    case LossKind::mse: return mse(b);
    case LossKind::huber: return huber(b, spec.huber_delta);
    case LossKind::mae_pearson: return mae_pearson_fused(b, spec.diffnorm_eps);
    case LossKind::gar: {
        // Disabled terms are still evaluated so that the aggregate sees a
        // fixed-size list; they contribute no gradient.
        std::array<ad::Var, 3> terms;
        terms[kMaeTerm] = mae(b);
        terms[kDiffTerm] = spec.gar.is_enabled(kDiffTerm) ? loss_diff(b) : b.predictions.graph().constant(1.0);
        terms[kDiffnormTerm] =
            spec.gar.is_enabled(kDiffnormTerm) ? loss_diffnorm(b, spec.diffnorm_eps) : b.predictions.graph().constant(1.0);
        return gar_kl(terms, spec.gar);
    }
    }
    throw std::logic_error("unknown loss kind");
}

// Training -----------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0; // mean objective over the epoch's batches
    double lr = 0.0;
    double mean_error = 0.0; // batch-averaged mean prediction error
    double error_variance = 0.0; // batch-averaged error variance
    double error_std = 0.0;      // batch-averaged error standard deviation
};

struct TrainingTrace {
    std::vector<EpochStats> epochs;
    std::size_t skipped_batches = 0;
    /// Epoch in which a prediction, loss or gradient first went non-finite.
    std::optional<std::size_t> diverged_at;
};

inline std::string trace_csv(const TrainingTrace& t)
{
    std::string out = "epoch,train_loss,lr,mean_error,error_std,error_variance\n";
    char buf[256];
    for (const auto& e : t.epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss, e.lr,
                      e.mean_error, e.error_std, e.error_variance);
        out += buf;
    }
    return out;
}

struct TrainResult {
    ParameterStore params;
    TrainingTrace trace;
};

/// Called after every epoch with the 0-based epoch index and current weights.
using EpochCallback = std::function<void(std::size_t epoch, const ParameterStore&)>;

/// Mini-batch training. Each epoch visits a fresh seeded permutation of the
/// rows; the last partial batch is kept. Batches of one row are skipped when
/// the objective contains a pairwise term. Training stops at the first
/// non-finite prediction, loss or gradient: the trace records the epoch and
/// holds no stats for it, and on_epoch is not called again.
inline TrainResult train(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {})
{
    data.validate();
    cfg.validate();
    if (spec.input_dim != data.feature_dim() || spec.output_dim != data.target_dim())
        throw ShapeError("train: network dims do not match dataset");

    TrainResult result{init(spec, cfg.seed), {}};
    auto& params = result.params;
    SgdMomentumState sgd;
    AdamState adam;
    std::uint64_t step = 0;
    const std::size_t n = data.rows();
    const bool pairwise = cfg.loss.pairwise();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = stream_rng(cfg.seed, epoch);
        const auto order = permutation(n, rng);
        const double lr = learning_rate(cfg, epoch);
        EpochStats stats{epoch, 0.0, lr, 0.0, 0.0, 0.0};
        std::size_t used = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            if (pairwise && stop - start < 2) {
                ++result.trace.skipped_batches;
                continue;
            }
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Tensor x = data.features.gather_rows(idx);
            Tensor y = data.targets.gather_rows(idx);

            ad::Graph g;
            const auto bound = bind(g, params);
            const auto pred = forward(bound, x);
            if (!pred.value().all_finite()) {
                result.trace.diverged_at = epoch;
                return result;
            }
            const Batch batch{pred, std::move(y)};
            const auto loss = build_loss(batch, cfg.loss);
            g.backward(loss);
            const auto grads = gather_gradients(bound, params);
            if (!std::isfinite(loss.item()) ||
                !std::all_of(grads.begin(), grads.end(), [](double v) { return std::isfinite(v); })) {
                result.trace.diverged_at = epoch;
                return result;
            }

            const auto diag = breakdown(pred.value(), batch.targets);
            stats.train_loss += loss.item();
            stats.mean_error += diag.mean_error;
            stats.error_variance += diag.error_variance;
            stats.error_std += std::sqrt(diag.error_variance);
            ++used;

            ++step;
            if (cfg.optimizer == OptimizerKind::sgd_momentum)
                sgd_momentum_step(params.values(), grads, sgd, lr, cfg.momentum, cfg.weight_decay);
            else
                adam_step(params.values(), grads, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                          cfg.weight_decay, step);
        }
        if (used > 0) {
            stats.train_loss /= static_cast<double>(used);
            stats.mean_error /= static_cast<double>(used);
            stats.error_variance /= static_cast<double>(used);
            stats.error_std /= static_cast<double>(used);
        }
        result.trace.epochs.push_back(stats);
        if (on_epoch)
            on_epoch(epoch, params);
    }
    return result;
}

} // namespace gar
