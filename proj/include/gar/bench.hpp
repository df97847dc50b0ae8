// Loss timing harness: forward + backward of the linear-time losses and the
// value-only quadratic oracles, reported as median and 10th/90th
// percentiles over repeats.
#pragma once

#include "gar/aggregate.hpp"
#include "gar/heap.hpp"
#include "gar/losses.hpp"
#include "gar/random.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gar {

struct TimingRow {
    std::size_t batch_size = 0;
    std::string loss_name;
    std::int64_t median_ns = 0;
    std::int64_t p10_ns = 0;
    std::int64_t p90_ns = 0;
    std::size_t repeats = 0;
};

inline constexpr std::size_t kMinRepeats = 20;
inline constexpr std::size_t kWarmupRepeats = 3;

/// Loss names in the order they are timed.
inline const std::vector<std::string>& timed_loss_names()
{
    static const std::vector<std::string> names = {
        "mae", "loss_diff", "loss_diffnorm", "gar", "pairwise_diff_quadratic", "pairwise_diffnorm_quadratic",
    };
    return names;
}

namespace detail {

// Accumulated results land here so the timed calls cannot be elided.
inline volatile double bench_sink = 0.0;

/// Nearest-rank percentile of sorted samples.
inline std::int64_t percentile(const std::vector<std::int64_t>& sorted, double q)
{
    const auto n = sorted.size();
    auto idx = static_cast<std::size_t>(q * static_cast<double>(n - 1) + 0.5);
    return sorted[std::min(idx, n - 1)];
}

/// Runs one timed unit of work and returns a value so the call cannot be
/// optimised away.
using TimedFn = std::function<double()>;

inline TimingRow time_one(std::size_t n, const std::string& name, const TimedFn& fn, std::size_t repeats,
                          double& sink)
{
    for (std::size_t i = 0; i < kWarmupRepeats; ++i)
        sink += fn();
    std::vector<std::int64_t> ns;
    ns.reserve(repeats);
    for (std::size_t i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink += fn();
        const auto t1 = std::chrono::steady_clock::now();
        ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    std::sort(ns.begin(), ns.end());
    return TimingRow{n, name, percentile(ns, 0.5), percentile(ns, 0.1), percentile(ns, 0.9), repeats};
}

/// Forward + backward of a graph loss on fresh leaf predictions.
template <class LossFn>
double forward_backward(const Tensor& pred, const Tensor& target, LossFn loss)
{
    ad::Graph g;
    auto f = g.variable(pred);
    auto l = loss(Batch{f, target});
    g.backward(l);
    return l.item() + f.grad()[0];
}

inline ad::Var gar_all_three(const Batch& b)
{
    static const GarConfig cfg{1.0, 1e-12, {}};
    return gar_kl({mae(b), loss_diff(b), loss_diffnorm(b)}, cfg);
}

} // namespace detail

/// Times every loss in timed_loss_names() at each batch size. Inputs are
/// uniform in [-10, 10] from the seed. `only` restricts the set of losses.
/// Calls keep_heap_resident() for the rest of the process.
inline std::vector<TimingRow> time_losses(const std::vector<std::size_t>& sizes, std::size_t repeats,
                                          std::uint64_t seed, const std::vector<std::string>& only = {})
{
    if (repeats < kMinRepeats)
        throw std::invalid_argument("bench: repeats must be at least " + std::to_string(kMinRepeats));
    for (auto n : sizes)
        if (n < 2)
            throw std::invalid_argument("bench: batch sizes must be at least 2");
    for (const auto& name : only)
        if (std::find(timed_loss_names().begin(), timed_loss_names().end(), name) == timed_loss_names().end())
            throw std::invalid_argument("bench: unknown loss '" + name + "'");
    auto wanted = [&](const std::string& name) {
        return only.empty() || std::find(only.begin(), only.end(), name) != only.end();
    };

    keep_heap_resident();
    std::vector<TimingRow> rows;
    double sink = 0.0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const std::size_t n = sizes[k];
        auto rng = stream_rng(seed, k);
        std::vector<double> f(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            f[i] = uniform(rng, -10, 10);
            y[i] = uniform(rng, -10, 10);
        }
        const Tensor pred = Tensor::matrix(n, 1, std::move(f));
        const Tensor target = Tensor::matrix(n, 1, std::move(y));

        const std::vector<std::pair<std::string, detail::TimedFn>> work = {
            {"mae", [&] { return detail::forward_backward(pred, target, [](const Batch& b) { return mae(b); }); }},
            {"loss_diff",
             [&] { return detail::forward_backward(pred, target, [](const Batch& b) { return loss_diff(b); }); }},
            {"loss_diffnorm",
             [&] { return detail::forward_backward(pred, target, [](const Batch& b) { return loss_diffnorm(b); }); }},
            {"gar", [&] { return detail::forward_backward(pred, target, detail::gar_all_three); }},
            {"pairwise_diff_quadratic", [&] { return pairwise_diff_quadratic(pred, target); }},
            {"pairwise_diffnorm_quadratic", [&] { return pairwise_diffnorm_quadratic(pred, target); }},
        };
        for (const auto& [name, fn] : work)
            if (wanted(name))
                rows.push_back(detail::time_one(n, name, fn, repeats, sink));
    }
    detail::bench_sink = sink;
    return rows;
}

inline std::string timing_csv(const std::vector<TimingRow>& rows)
{
    std::string out = "batch_size,loss_name,median_ns,p10_ns,p90_ns,repeats\n";
    for (const auto& r : rows)
        out += std::to_string(r.batch_size) + "," + r.loss_name + "," + std::to_string(r.median_ns) + "," +
               std::to_string(r.p10_ns) + "," + std::to_string(r.p90_ns) + "," + std::to_string(r.repeats) + "\n";
    return out;
}

/// Median for (batch_size, loss_name); throws if absent.
inline std::int64_t median_of(const std::vector<TimingRow>& rows, std::size_t n, const std::string& name)
{
    for (const auto& r : rows)
        if (r.batch_size == n && r.loss_name == name)
            return r.median_ns;
    throw std::out_of_range("bench: no timing for " + name + " at N=" + std::to_string(n));
}

} // namespace gar
