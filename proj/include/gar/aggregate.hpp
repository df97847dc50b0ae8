// Distributionally robust aggregation of M non-negative sub-losses under a
// KL penalty towards the uniform weighting:
//
//   L(alpha) = alpha * log( (1/M) * sum_i L_i^(1/alpha) )
//
// exp(L) is the power mean of order 1/alpha: the geometric mean as
// alpha -> inf, the arithmetic mean at alpha = 1 and the maximum as
// alpha -> 0.
#pragma once

#include "gar/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace gar {

struct GarConfig {
    double alpha = 1.0;
    /// Losses are floored here before entering the log domain.
    double loss_floor = 1e-12;
    /// One flag per sub-loss; empty means all enabled.
    std::vector<bool> enabled;

    bool is_enabled(std::size_t i) const { return enabled.empty() || enabled.at(i); }

    void validate(std::size_t count) const
    {
        if (!(alpha > 0.0) || !std::isfinite(alpha))
            throw std::invalid_argument("gar: alpha must be positive and finite");
        if (!(loss_floor > 0.0))
            throw std::invalid_argument("gar: loss_floor must be positive");
        if (!enabled.empty() && enabled.size() != count)
            throw std::invalid_argument("gar: mask size does not match number of losses");
        std::size_t on = 0;
        for (std::size_t i = 0; i < count; ++i)
            on += is_enabled(i) ? 1 : 0;
        if (on == 0)
            throw std::invalid_argument("gar: no sub-loss enabled");
    }
};

/// Overflow-safe differentiable aggregate of scalar loss nodes.
///
/// Losses are expressed relative to a detached anchor: the largest enabled
/// loss when alpha < 1 and the smallest when alpha >= 1. On top of the anchor
/// the exponents are shifted by their (detached) maximum, which is zero in
/// the max-anchored branch and keeps the min-anchored branch finite when the
/// loss ratio exceeds exp(709 * alpha).
inline ad::Var gar_kl(std::span<const ad::Var> losses, const GarConfig& cfg)
{
    cfg.validate(losses.size());
    std::vector<std::size_t> on;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const double v = losses[i].item();
        if (std::isnan(v))
            throw DomainError("gar: NaN sub-loss");
        if (cfg.is_enabled(i))
            on.push_back(i);
    }
    const double alpha = cfg.alpha;

    std::vector<double> floored;
    floored.reserve(on.size());
    for (auto i : on)
        floored.push_back(std::max(losses[i].item(), cfg.loss_floor));

    std::size_t anchor = 0;
    for (std::size_t k = 1; k < floored.size(); ++k) {
        const bool better = alpha < 1.0 ? floored[k] > floored[anchor] : floored[k] < floored[anchor];
        if (better)
            anchor = k;
    }
    const double log_anchor = std::log(floored[anchor]);
    double shift = 0.0;
    for (double v : floored)
        shift = std::max(shift, (std::log(v) - log_anchor) / alpha);
    const double offset = log_anchor + alpha * shift;

    ad::Var total;
    for (auto i : on) {
        auto logl = ad::log(ad::clamp_min(losses[i], cfg.loss_floor));
        auto term = ad::exp((logl - offset) * (1.0 / alpha));
        total = total.valid() ? total + term : term;
    }
    const double inv_m = 1.0 / static_cast<double>(on.size());
    return alpha * ad::log(total * inv_m) + offset;
}

inline ad::Var gar_kl(std::initializer_list<ad::Var> losses, const GarConfig& cfg)
{
    return gar_kl(std::span<const ad::Var>(losses.begin(), losses.size()), cfg);
}

/// alpha * log((1/M) sum L_i^(1/alpha)) via log-sum-exp. Value only.
inline double gar_kl_reference(std::span<const double> losses, double alpha)
{
    if (losses.empty())
        throw std::invalid_argument("gar_kl_reference: no losses");
    if (!(alpha > 0.0))
        throw std::invalid_argument("gar_kl_reference: alpha must be positive");
    std::vector<double> z;
    z.reserve(losses.size());
    for (double l : losses) {
        if (!(l > 0.0))
            throw DomainError("gar_kl_reference: losses must be positive");
        z.push_back(std::log(l) / alpha);
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z)
        s += std::exp(v - zmax);
    return alpha * (zmax + std::log(s) - std::log(static_cast<double>(losses.size())));
}

inline double gar_kl_reference(std::initializer_list<double> losses, double alpha)
{
    return gar_kl_reference(std::span<const double>(losses.begin(), losses.size()), alpha);
}

struct LimitsReport {
    double maximum = 0.0;
    double arithmetic_mean = 0.0;
    double geometric_mean = 0.0;
    double at_small_alpha = 0.0; // exp(L) at alpha = 1e-3
    double at_unit_alpha = 0.0;  // exp(L) at alpha = 1
    double at_large_alpha = 0.0; // exp(L) at alpha = 1e3
    // Relative deviations of the three evaluations from their limits.
    double max_deviation = 0.0;
    double arithmetic_deviation = 0.0;
    double geometric_deviation = 0.0;
};

inline LimitsReport gar_limits_check(std::span<const double> losses)
{
    if (losses.empty())
        throw std::invalid_argument("gar_limits_check: no losses");
    LimitsReport r;
    double log_sum = 0.0, sum = 0.0;
    r.maximum = losses[0];
    for (double l : losses) {
        if (!(l > 0.0))
            throw DomainError("gar_limits_check: losses must be positive");
        r.maximum = std::max(r.maximum, l);
        sum += l;
        log_sum += std::log(l);
    }
    const double m = static_cast<double>(losses.size());
    r.arithmetic_mean = sum / m;
    r.geometric_mean = std::exp(log_sum / m);
    r.at_small_alpha = std::exp(gar_kl_reference(losses, 1e-3));
    r.at_unit_alpha = std::exp(gar_kl_reference(losses, 1.0));
    r.at_large_alpha = std::exp(gar_kl_reference(losses, 1e3));
    r.max_deviation = std::fabs(r.at_small_alpha - r.maximum) / r.maximum;
    r.arithmetic_deviation = std::fabs(r.at_unit_alpha - r.arithmetic_mean) / r.arithmetic_mean;
    r.geometric_deviation = std::fabs(r.at_large_alpha - r.geometric_mean) / r.geometric_mean;
    return r;
}

inline LimitsReport gar_limits_check(std::initializer_list<double> losses)
{
    return gar_limits_check(std::span<const double>(losses.begin(), losses.size()));
}

} // namespace gar
