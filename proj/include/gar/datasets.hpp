// Regression datasets: synthetic generators, CSV ingestion, splits, k-fold
// partitions and train-statistics standardization.
#pragma once

#include "gar/random.hpp"
#include "gar/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gar {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Tensor features; // [N x d]
    Tensor targets;  // [N x T]
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    /// Set once standardize() has been applied.
    bool standardized = false;

    std::size_t rows() const { return features.rows(); }
    std::size_t feature_dim() const { return features.cols(); }
    std::size_t target_dim() const { return targets.cols(); }

    void validate() const
    {
        if (features.rank() != 2 || targets.rank() != 2)
            throw DatasetError("dataset tensors must be rank 2");
        if (rows() == 0 || feature_dim() == 0 || target_dim() == 0)
            throw DatasetError("dataset must have at least one row, feature and target");
        if (targets.rows() != rows())
            throw DatasetError("feature and target row counts differ");
        if (!features.all_finite() || !targets.all_finite())
            throw DatasetError("dataset contains NaN or Inf");
    }

    Dataset subset(std::span<const std::size_t> idx) const
    {
        return Dataset{features.gather_rows(idx), targets.gather_rows(idx), feature_names, target_names,
                       standardized};
    }
};

namespace detail {

/// Points lo + step * i, keeping the last point if it lies within half a
/// step of hi.
inline std::size_t grid_count(double lo, double hi, double step)
{
    return static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5)) + 1;
}

inline Dataset make_1d(std::vector<double> x, std::vector<double> y)
{
    const auto n = x.size();
    return Dataset{Tensor::matrix(n, 1, std::move(x)), Tensor::matrix(n, 1, std::move(y)), {"x"}, {"y"}};
}

} // namespace detail

/// x on [-10 pi, 10 pi] with step 0.1 (629 points), y = sin(x).
inline Dataset gen_sine()
{
    const double lo = -10.0 * std::numbers::pi, hi = 10.0 * std::numbers::pi, step = 0.1;
    const auto n = detail::grid_count(lo, hi, step);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = lo + step * static_cast<double>(i);
        y[i] = std::sin(x[i]);
    }
    return detail::make_1d(std::move(x), std::move(y));
}

/// t on [-1024, 1024] with step 0.1 (20481 points), x = sign(t) sqrt|t|,
/// y = x^2 sin(x) / mean(x^2).
inline Dataset gen_squared_sine()
{
    const double lo = -1024.0, hi = 1024.0, step = 0.1;
    const auto n = detail::grid_count(lo, hi, step);
    std::vector<double> x(n), y(n);
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = lo + step * static_cast<double>(i);
        x[i] = std::copysign(std::sqrt(std::fabs(t)), t);
        if (t == 0.0)
            x[i] = 0.0;
        sq_sum += x[i] * x[i];
    }
    const double sq_mean = sq_sum / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        y[i] = x[i] * x[i] * std::sin(x[i]) / sq_mean;
    return detail::make_1d(std::move(x), std::move(y));
}

struct HoldoutSplit {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> eval_idx;
};

/// Seeded half/half split used for the synthetic sets; train gets floor(N/2).
inline HoldoutSplit holdout_split(std::size_t n, std::uint64_t seed, double train_fraction = 0.5)
{
    std::mt19937_64 rng(seed);
    auto perm = permutation(n, rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    HoldoutSplit s;
    s.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.eval_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(s.train_idx.begin(), s.train_idx.end());
    std::sort(s.eval_idx.begin(), s.eval_idx.end());
    return s;
}

// CSV ------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_line(std::string_view line, char delim)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cells;
}

inline std::string header_name(std::string_view cell)
{
    cell = trim(cell);
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"')
        cell = cell.substr(1, cell.size() - 2);
    return std::string(cell);
}

} // namespace detail

/// Reads a numeric CSV with a header row. Named target columns become
/// targets, dropped columns are ignored, everything else is a feature.
/// The delimiter is ',' unless the header contains ';' but no ','.
inline Dataset load_csv(const std::string& path, const std::vector<std::string>& target_columns,
                        const std::vector<std::string>& drop_columns = {})
{
    std::ifstream in(path);
    if (!in)
        throw DatasetError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line).empty())
        throw DatasetError(path + ": empty file");
    const char delim = (line.find(',') == std::string::npos && line.find(';') != std::string::npos) ? ';' : ',';
    std::vector<std::string> names;
    for (auto c : detail::split_line(line, delim))
        names.push_back(detail::header_name(c));
    if (target_columns.empty())
        throw DatasetError(path + ": no target columns given");

    enum class Role { feature, target, drop };
    std::vector<Role> role(names.size(), Role::feature);
    std::vector<std::size_t> target_pos;
    for (const auto& t : target_columns) {
        auto it = std::find(names.begin(), names.end(), t);
        if (it == names.end())
            throw DatasetError(path + ": target column '" + t + "' not found");
        role[static_cast<std::size_t>(it - names.begin())] = Role::target;
        target_pos.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    for (const auto& d : drop_columns) {
        auto it = std::find(names.begin(), names.end(), d);
        if (it == names.end())
            throw DatasetError(path + ": column '" + d + "' to drop not found");
        role[static_cast<std::size_t>(it - names.begin())] = Role::drop;
    }

    Dataset ds;
    for (std::size_t c = 0; c < names.size(); ++c)
        if (role[c] == Role::feature)
            ds.feature_names.push_back(names[c]);
    ds.target_names = target_columns;
    if (ds.feature_names.empty())
        throw DatasetError(path + ": no feature columns left");

    std::vector<double> feats, targs;
    std::vector<double> row_values(names.size());
    std::size_t line_no = 1, n = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        const auto cells = detail::split_line(line, delim);
        if (cells.size() != names.size())
            throw DatasetError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(names.size()) +
                               " cells, got " + std::to_string(cells.size()));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (role[c] == Role::drop)
                continue;
            const auto cell = detail::trim(cells[c]);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
                throw DatasetError(path + ": row " + std::to_string(line_no) + ", column '" + names[c] +
                                   "': not a finite number: '" + std::string(cell) + "'");
            row_values[c] = v;
        }
        for (std::size_t c = 0; c < names.size(); ++c)
            if (role[c] == Role::feature)
                feats.push_back(row_values[c]);
        for (auto c : target_pos)
            targs.push_back(row_values[c]);
        ++n;
    }
    if (n == 0)
        throw DatasetError(path + ": no data rows");
    ds.features = Tensor::matrix(n, ds.feature_names.size(), std::move(feats));
    ds.targets = Tensor::matrix(n, ds.target_names.size(), std::move(targs));
    ds.validate();
    return ds;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// Features first, then targets.
inline void write_csv(const Dataset& ds, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw DatasetError("cannot open " + path + " for writing");
    std::string line;
    for (std::size_t c = 0; c < ds.feature_names.size(); ++c)
        line += (c ? "," : "") + ds.feature_names[c];
    for (const auto& t : ds.target_names)
        line += "," + t;
    out << line << '\n';
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        line.clear();
        for (std::size_t c = 0; c < ds.feature_dim(); ++c)
            line += (c ? "," : "") + format_double(ds.features.at(r, c));
        for (std::size_t c = 0; c < ds.target_dim(); ++c)
            line += "," + format_double(ds.targets.at(r, c));
        out << line << '\n';
    }
}

// Presets for the UCI tabular benchmarks (files expected pre-downloaded).

struct DatasetPreset {
    std::string name;
    std::string default_path;
    std::vector<std::string> targets;
    std::vector<std::string> drop;
};

inline std::optional<DatasetPreset> find_preset(std::string_view name)
{
    static const std::vector<DatasetPreset> presets = {
        {"concrete", "data/concrete.csv", {"compressive_strength"}, {}},
        {"wine", "data/winequality-white.csv", {"quality"}, {}},
        {"parkinson", "data/parkinsons_updrs.csv", {"motor_UPDRS", "total_UPDRS"}, {"subject#"}},
        {"parkinson_total", "data/parkinsons_updrs.csv", {"total_UPDRS"}, {"subject#", "motor_UPDRS"}},
        {"parkinson_motor", "data/parkinsons_updrs.csv", {"motor_UPDRS"}, {"subject#", "total_UPDRS"}},
    };
    for (const auto& p : presets)
        if (p.name == name)
            return p;
    return std::nullopt;
}

// Splits -----------------------------------------------------------------------

struct SplitPlan {
    double test_fraction = 0.2;
    std::size_t k_folds = 5;
    std::uint64_t seed = 123;

    void validate() const
    {
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw std::invalid_argument("split: test_fraction must be in (0, 1)");
        if (k_folds < 2)
            throw std::invalid_argument("split: k_folds must be at least 2");
    }
};

struct Fold {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
};

struct SplitResult {
    std::vector<std::size_t> test_idx;
    std::vector<Fold> folds;
};

/// Index-level split: seeded shuffle, first ceil(test_fraction * N) rows to
/// test, the rest cut into k contiguous folds (sizes differ by at most one).
inline SplitResult split_indices(std::size_t n, const SplitPlan& plan)
{
    plan.validate();
    std::mt19937_64 rng(plan.seed);
    const auto perm = permutation(n, rng);
    const auto n_test = static_cast<std::size_t>(std::ceil(plan.test_fraction * static_cast<double>(n)));
    if (n_test >= n)
        throw DatasetError("split: nothing left after taking the test set");
    SplitResult out;
    out.test_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    const std::size_t rest = n - n_test;
    const std::size_t base = rest / plan.k_folds, extra = rest % plan.k_folds;
    if (base < 2)
        throw DatasetError("split: folds would have fewer than 2 validation rows");
    std::vector<std::size_t> bounds{n_test};
    for (std::size_t k = 0; k < plan.k_folds; ++k)
        bounds.push_back(bounds.back() + base + (k < extra ? 1 : 0));
    for (std::size_t k = 0; k < plan.k_folds; ++k) {
        Fold f;
        for (std::size_t i = n_test; i < n; ++i) {
            if (i >= bounds[k] && i < bounds[k + 1])
                f.val_idx.push_back(perm[i]);
            else
                f.train_idx.push_back(perm[i]);
        }
        out.folds.push_back(std::move(f));
    }
    return out;
}

struct FoldData {
    Dataset train;
    Dataset val;
};

struct SplitData {
    Dataset test;
    std::vector<FoldData> folds;
};

inline SplitData split_and_fold(const Dataset& data, const SplitPlan& plan)
{
    const auto idx = split_indices(data.rows(), plan);
    SplitData out{data.subset(idx.test_idx), {}};
    for (const auto& f : idx.folds)
        out.folds.push_back({data.subset(f.train_idx), data.subset(f.val_idx)});
    return out;
}

// Standardization --------------------------------------------------------------

/// Per-column z-score statistics fitted on training data only. Zero-variance
/// columns keep scale 1 so they end up centred but unscaled.
class Standardizer {
public:
    static Standardizer fit(const Dataset& train, bool targets_too)
    {
        train.validate();
        Standardizer s;
        s.targets_too_ = targets_too;
        fit_columns(train.features, s.feature_mean_, s.feature_scale_);
        if (targets_too)
            fit_columns(train.targets, s.target_mean_, s.target_scale_);
        return s;
    }

    Dataset apply(const Dataset& ds) const
    {
        if (ds.standardized)
            throw DatasetError("standardize: dataset is already standardized");
        if (ds.feature_dim() != feature_mean_.size())
            throw DatasetError("standardize: feature count differs from fitted statistics");
        Dataset out = ds;
        transform(out.features, feature_mean_, feature_scale_);
        if (targets_too_) {
            if (ds.target_dim() != target_mean_.size())
                throw DatasetError("standardize: target count differs from fitted statistics");
            transform(out.targets, target_mean_, target_scale_);
        }
        out.standardized = true;
        return out;
    }

    /// Maps standardized targets back to original units.
    Tensor unscale_targets(const Tensor& t) const
    {
        if (!targets_too_)
            return t;
        Tensor out = t;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c)
                out.at(r, c) = out.at(r, c) * target_scale_[c] + target_mean_[c];
        return out;
    }

    bool targets_too() const noexcept { return targets_too_; }
    const std::vector<double>& feature_mean() const noexcept { return feature_mean_; }
    const std::vector<double>& feature_scale() const noexcept { return feature_scale_; }
    const std::vector<double>& target_mean() const noexcept { return target_mean_; }
    const std::vector<double>& target_scale() const noexcept { return target_scale_; }

private:
    static void fit_columns(const Tensor& t, std::vector<double>& mean, std::vector<double>& scale)
    {
        const std::size_t n = t.rows(), m = t.cols();
        mean.assign(m, 0.0);
        scale.assign(m, 1.0);
        for (std::size_t c = 0; c < m; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                s += t.at(r, c);
            mean[c] = s / static_cast<double>(n);
            double v = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                v += (t.at(r, c) - mean[c]) * (t.at(r, c) - mean[c]);
            const double sd = std::sqrt(v / static_cast<double>(n));
            scale[c] = sd > 0.0 ? sd : 1.0;
        }
    }

    static void transform(Tensor& t, const std::vector<double>& mean, const std::vector<double>& scale)
    {
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t c = 0; c < t.cols(); ++c)
                t.at(r, c) = (t.at(r, c) - mean[c]) / scale[c];
    }

    bool targets_too_ = false;
    std::vector<double> feature_mean_, feature_scale_, target_mean_, target_scale_;
};

struct StandardizeResult {
    Dataset train;
    std::vector<Dataset> others;
    Standardizer stats;
};

inline StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others, bool targets_too)
{
    StandardizeResult out;
    out.stats = Standardizer::fit(train, targets_too);
    out.train = out.stats.apply(train);
    for (const auto& d : others)
        out.others.push_back(out.stats.apply(d));
    return out;
}

} // namespace gar
