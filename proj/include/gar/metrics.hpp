// Evaluation metrics: MAE, RMSE, Pearson, Spearman (average ranks for ties)
// and R^2, per target and averaged across targets.
#pragma once

#include "gar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gar {

/// 1-based ranks; tied values share the mean of their rank range.
inline std::vector<double> rank_average_ties(std::span<const double> values)
{
    if (values.empty())
        throw std::invalid_argument("rank_average_ties: empty input");
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]])
            ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j); // mean of i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

/// Pearson correlation; NaN when either side is constant.
inline double pearson(std::span<const double> a, std::span<const double> b)
{
    // Checked exactly: the rounded mean of a constant column can differ from
    // its entries and leave a spurious non-zero variance.
    const auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(a) || constant(b))
        return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double spearman(std::span<const double> a, std::span<const double> b)
{
    const auto ra = rank_average_ties(a);
    const auto rb = rank_average_ties(b);
    return pearson(ra, rb);
}

struct MetricReport {
    // Per target.
    std::vector<double> mae, rmse, pearson, spearman, r2;
    // Unweighted averages across targets.
    double mae_avg = 0.0, rmse_avg = 0.0, pearson_avg = 0.0, spearman_avg = 0.0, r2_avg = 0.0;
    /// False when some target had zero truth variance; the correlation and
    /// R^2 entries for that target are NaN.
    bool correlations_defined = true;
};

inline MetricReport evaluate(const Tensor& pred, const Tensor& truth)
{
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || pred.size() != truth.size())
        throw ShapeError("evaluate: prediction shape " + shape_string(pred.shape()) + " vs truth " +
                         shape_string(truth.shape()));
    if (truth.rows() < 2)
        throw std::invalid_argument("evaluate: need at least 2 rows");
    const std::size_t n = truth.rows(), t = truth.cols();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    MetricReport r;
    for (std::size_t c = 0; c < t; ++c) {
        const Tensor pc = pred.column_of(c), tc = truth.column_of(c);
        double abs_sum = 0.0, sq_sum = 0.0, mean_t = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = pc[i] - tc[i];
            abs_sum += std::fabs(e);
            sq_sum += e * e;
            mean_t += tc[i];
        }
        mean_t /= static_cast<double>(n);
        double sst = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sst += (tc[i] - mean_t) * (tc[i] - mean_t);
        r.mae.push_back(abs_sum / static_cast<double>(n));
        r.rmse.push_back(std::sqrt(sq_sum / static_cast<double>(n)));
        if (sst == 0.0) {
            r.correlations_defined = false;
            r.pearson.push_back(nan);
            r.spearman.push_back(nan);
            r.r2.push_back(nan);
            continue;
        }
        r.pearson.push_back(gar::pearson(pc.values(), tc.values()));
        r.spearman.push_back(gar::spearman(pc.values(), tc.values()));
        r.r2.push_back(1.0 - sq_sum / sst);
    }
    auto avg = [t](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(t);
    };
    r.mae_avg = avg(r.mae);
    r.rmse_avg = avg(r.rmse);
    r.pearson_avg = avg(r.pearson);
    r.spearman_avg = avg(r.spearman);
    r.r2_avg = avg(r.r2);
    return r;
}

enum class Metric { mae, rmse, pearson, spearman, r2 };

inline constexpr Metric kReportedMetrics[] = {Metric::mae, Metric::rmse, Metric::pearson, Metric::spearman};

inline const char* metric_name(Metric m)
{
    switch (m) {
    case Metric::mae: return "mae";
    case Metric::rmse: return "rmse";
    case Metric::pearson: return "pearson";
    case Metric::spearman: return "spearman";
    case Metric::r2: return "r2";
    }
    return "?";
}

inline Metric parse_metric(const std::string& s)
{
    for (auto m : {Metric::mae, Metric::rmse, Metric::pearson, Metric::spearman, Metric::r2})
        if (s == metric_name(m))
            return m;
    throw std::invalid_argument("unknown metric '" + s + "'");
}

/// True when larger values are better.
inline bool higher_is_better(Metric m) { return m == Metric::pearson || m == Metric::spearman || m == Metric::r2; }

inline double metric_value(const MetricReport& r, Metric m)
{
    switch (m) {
    case Metric::mae: return r.mae_avg;
    case Metric::rmse: return r.rmse_avg;
    case Metric::pearson: return r.pearson_avg;
    case Metric::spearman: return r.spearman_avg;
    case Metric::r2: return r.r2_avg;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

inline std::string metrics_csv_header() { return "mae,rmse,pearson,spearman,r2"; }

inline std::string to_csv_row(const MetricReport& r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%.10g", r.mae_avg, r.rmse_avg, r.pearson_avg,
                  r.spearman_avg, r.r2_avg);
    return buf;
}

inline nlohmann::json to_json(const MetricReport& r)
{
    auto arr = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v)
            a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
        return a;
    };
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    return {
        {"mae", num(r.mae_avg)},
        {"rmse", num(r.rmse_avg)},
        {"pearson", num(r.pearson_avg)},
        {"spearman", num(r.spearman_avg)},
        {"r2", num(r.r2_avg)},
        {"per_target",
         {{"mae", arr(r.mae)}, {"rmse", arr(r.rmse)}, {"pearson", arr(r.pearson)}, {"spearman", arr(r.spearman)},
          {"r2", arr(r.r2)}}},
        {"correlations_defined", r.correlations_defined},
    };
}

} // namespace gar
