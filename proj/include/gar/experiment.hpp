// Experiment runner: hyperparameter grids, cross-validation or holdout
// protocols, validation-based model selection, paired comparisons against a
// baseline, ablations over the GAR sub-loss mask and sensitivity sweeps.
//
// Every experiment is a list of method variants (loss, mask, batch size and
// grid). One training run is a (variant, fold, grid point, seed) tuple; runs
// are independent and may execute on worker threads, but the report is
// always assembled in (variant, fold, grid point, seed) order.
#pragma once

#include "gar/datasets.hpp"
#include "gar/metrics.hpp"
#include "gar/network.hpp"
#include "gar/optim.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

namespace gar {

// Configuration --------------------------------------------------------------

struct ExperimentConfig {
    std::string name = "experiment";
    /// sine | squared_sine | csv | a preset name (concrete, wine, ...).
    std::string dataset = "sine";
    std::string csv_path;
    std::vector<std::string> targets;
    std::vector<std::string> drop;
    /// holdout (seeded 50% train, remaining half evaluated) or cv.
    std::string protocol = "holdout";
    double holdout_train_fraction = 0.5;

    /// Empty with auto_hidden set: chosen from the feature dimension.
    std::vector<std::size_t> hidden_dims{100, 100, 100, 100, 100};
    bool auto_hidden = false;

    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 300;
    std::size_t batch_size = 128;
    std::vector<std::size_t> lr_decay_epochs{100, 200};
    double lr_decay_factor = 0.1;

    std::vector<std::string> methods{"mae", "gar"};
    std::string baseline = "mae";
    std::vector<double> lr_grid{1e-1, 1e-2, 1e-3, 1e-4};
    std::vector<double> wd_grid{1e-3, 1e-4, 1e-5, 0.0};
    std::vector<double> alpha_grid{0.5};
    std::vector<double> huber_delta_grid{0.25, 1.0, 4.0};
    std::vector<bool> gar_mask{true, true, true};
    double loss_floor = 1e-12;
    double diffnorm_eps = kDiffnormEps;

    double test_fraction = 0.2;
    std::size_t k_folds = 5;
    std::uint64_t split_seed = 123;
    std::vector<std::uint64_t> seeds{0, 1, 2};

    bool standardize = false;
    bool standardize_targets = false;
    /// per_metric selects separately for every reported metric; otherwise
    /// one of mae, rmse, pearson, spearman, r2.
    std::string selection_metric = "per_metric";
    std::size_t workers = 1;
    bool save_models = false;
    bool prediction_curve = true;

    bool synthetic() const { return dataset == "sine" || dataset == "squared_sine"; }
};

/// Defaults for a dataset: the synthetic protocol for sine / squared_sine,
/// the tabular cross-validation protocol otherwise.
inline ExperimentConfig default_config(const std::string& dataset)
{
    ExperimentConfig c;
    c.dataset = dataset;
    if (c.synthetic())
        return c;
    c.protocol = "cv";
    c.hidden_dims.clear();
    c.auto_hidden = true;
    c.optimizer = OptimizerKind::sgd_momentum;
    c.epochs = 100;
    c.batch_size = 256;
    c.lr_decay_epochs = {50, 75};
    c.lr_grid = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
    c.wd_grid = {1e-3, 1e-4, 1e-5};
    c.alpha_grid = {0.1, 1.0, 10.0};
    c.seeds = {0};
    c.prediction_curve = false;
    return c;
}

/// (16, 32, 16, 8) up to 16 features, (128, 256, 128, 64) above.
inline std::vector<std::size_t> tabular_hidden_dims(std::size_t feature_dim)
{
    if (feature_dim <= 16)
        return {16, 32, 16, 8};
    return {128, 256, 128, 64};
}

namespace detail {

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s)
{
    if (s == "adam")
        return OptimizerKind::adam;
    if (s == "sgd" || s == "sgd_momentum")
        return OptimizerKind::sgd_momentum;
    throw std::invalid_argument("config: unknown optimizer '" + s + "'");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out)
{
    if (!j.contains(key))
        return;
    try {
        j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

} // namespace detail

/// Flat JSON document; "dataset" picks the defaults, other keys override.
/// Unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw std::invalid_argument("config: expected a JSON object");
    static const std::set<std::string> known = {
        "name", "dataset", "csv_path", "targets", "drop", "protocol", "holdout_train_fraction", "hidden_dims",
        "optimizer", "momentum", "adam_beta1", "adam_beta2", "adam_eps", "epochs", "batch_size", "lr_decay_epochs",
        "lr_decay_factor", "methods", "baseline", "lr_grid", "wd_grid", "alpha_grid", "huber_delta_grid",
        "gar_mask", "loss_floor", "diffnorm_eps", "test_fraction", "k_folds", "split_seed", "seeds", "standardize",
        "standardize_targets", "selection_metric", "workers", "save_models", "prediction_curve",
    };
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "'");

    std::string dataset = "sine";
    detail::read(j, "dataset", dataset);
    if (dataset.rfind("csv:", 0) == 0)
        dataset = "csv";
    auto c = default_config(dataset);
    if (j.contains("dataset") && j["dataset"].get<std::string>().rfind("csv:", 0) == 0)
        c.csv_path = j["dataset"].get<std::string>().substr(4);
    detail::read(j, "name", c.name);
    detail::read(j, "csv_path", c.csv_path);
    detail::read(j, "targets", c.targets);
    detail::read(j, "drop", c.drop);
    detail::read(j, "protocol", c.protocol);
    detail::read(j, "holdout_train_fraction", c.holdout_train_fraction);
    if (j.contains("hidden_dims")) {
        if (j["hidden_dims"].is_string() && j["hidden_dims"] == "auto") {
            c.auto_hidden = true;
            c.hidden_dims.clear();
        } else {
            detail::read(j, "hidden_dims", c.hidden_dims);
            c.auto_hidden = false;
        }
    }
    if (j.contains("optimizer"))
        c.optimizer = detail::parse_optimizer(j["optimizer"].get<std::string>());
    detail::read(j, "momentum", c.momentum);
    detail::read(j, "adam_beta1", c.adam_beta1);
    detail::read(j, "adam_beta2", c.adam_beta2);
    detail::read(j, "adam_eps", c.adam_eps);
    detail::read(j, "epochs", c.epochs);
    detail::read(j, "batch_size", c.batch_size);
    detail::read(j, "lr_decay_epochs", c.lr_decay_epochs);
    detail::read(j, "lr_decay_factor", c.lr_decay_factor);
    detail::read(j, "methods", c.methods);
    detail::read(j, "baseline", c.baseline);
    detail::read(j, "lr_grid", c.lr_grid);
    detail::read(j, "wd_grid", c.wd_grid);
    detail::read(j, "alpha_grid", c.alpha_grid);
    detail::read(j, "huber_delta_grid", c.huber_delta_grid);
    detail::read(j, "gar_mask", c.gar_mask);
    detail::read(j, "loss_floor", c.loss_floor);
    detail::read(j, "diffnorm_eps", c.diffnorm_eps);
    detail::read(j, "test_fraction", c.test_fraction);
    detail::read(j, "k_folds", c.k_folds);
    detail::read(j, "split_seed", c.split_seed);
    detail::read(j, "seeds", c.seeds);
    detail::read(j, "standardize", c.standardize);
    detail::read(j, "standardize_targets", c.standardize_targets);
    detail::read(j, "selection_metric", c.selection_metric);
    detail::read(j, "workers", c.workers);
    detail::read(j, "save_models", c.save_models);
    detail::read(j, "prediction_curve", c.prediction_curve);
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json to_json(const ExperimentConfig& c)
{
    return {
        {"name", c.name},
        {"dataset", c.dataset},
        {"csv_path", c.csv_path},
        {"targets", c.targets},
        {"drop", c.drop},
        {"protocol", c.protocol},
        {"holdout_train_fraction", c.holdout_train_fraction},
        {"hidden_dims", c.auto_hidden ? nlohmann::json("auto") : nlohmann::json(c.hidden_dims)},
        {"optimizer", detail::optimizer_name(c.optimizer)},
        {"momentum", c.momentum},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_eps", c.adam_eps},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"lr_decay_epochs", c.lr_decay_epochs},
        {"lr_decay_factor", c.lr_decay_factor},
        {"methods", c.methods},
        {"baseline", c.baseline},
        {"lr_grid", c.lr_grid},
        {"wd_grid", c.wd_grid},
        {"alpha_grid", c.alpha_grid},
        {"huber_delta_grid", c.huber_delta_grid},
        {"gar_mask", c.gar_mask},
        {"loss_floor", c.loss_floor},
        {"diffnorm_eps", c.diffnorm_eps},
        {"test_fraction", c.test_fraction},
        {"k_folds", c.k_folds},
        {"split_seed", c.split_seed},
        {"seeds", c.seeds},
        {"standardize", c.standardize},
        {"standardize_targets", c.standardize_targets},
        {"selection_metric", c.selection_metric},
        {"workers", c.workers},
        {"save_models", c.save_models},
        {"prediction_curve", c.prediction_curve},
    };
}

// Statistics -------------------------------------------------------------------

struct TTestResult {
    double t = 0.0;
    double p_value = 1.0;
    /// Differences have zero variance but are not all zero.
    bool degenerate = false;
};

/// Two-sided paired Student's t-test. Any non-finite sample gives NaN.
inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("paired_ttest: samples differ in length");
    if (a.size() < 2)
        throw std::invalid_argument("paired_ttest: need at least 2 pairs");
    const double n = static_cast<double>(a.size());
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite)) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return TTestResult{nan, nan, false};
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    bool all_zero = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        all_zero = all_zero && d == 0.0;
        ss += (d - mean) * (d - mean);
    }
    TTestResult r;
    if (all_zero)
        return r;
    if (ss == 0.0) {
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p_value = std::numeric_limits<double>::quiet_NaN();
        r.degenerate = true;
        return r;
    }
    const double se = std::sqrt(ss / (n - 1.0) / n);
    r.t = mean / se;
    const boost::math::students_t dist(n - 1.0);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

inline double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double std_of(const std::vector<double>& v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Methods and grids --------------------------------------------------------------

struct GridPoint {
    double lr = 0.0;
    double weight_decay = 0.0;
    /// alpha for gar, delta for huber, unused otherwise.
    double hp = 0.0;
};

struct MethodVariant {
    std::string name;
    LossSpec loss;
    std::size_t batch_size = 0;
    std::vector<GridPoint> grid;
};

inline LossKind parse_loss_kind(const std::string& s)
{
    if (s == "mae")
        return LossKind::mae;
    if (s == "mse")
        return LossKind::mse;
    if (s == "huber")
        return LossKind::huber;
    if (s == "mae_pearson")
        return LossKind::mae_pearson;
    if (s == "gar")
        return LossKind::gar;
    throw std::invalid_argument("unknown method '" + s + "'");
}

/// Builds a variant whose grid is lr x wd x (alphas | deltas | {0}).
inline MethodVariant make_variant(const ExperimentConfig& cfg, const std::string& name, LossKind kind,
                                  std::vector<bool> mask, const std::vector<double>& alphas, std::size_t batch_size)
{
    MethodVariant m;
    m.name = name;
    m.loss.kind = kind;
    m.loss.diffnorm_eps = cfg.diffnorm_eps;
    m.loss.gar = GarConfig{1.0, cfg.loss_floor, std::move(mask)};
    m.batch_size = batch_size;
    std::vector<double> hps{0.0};
    if (kind == LossKind::gar)
        hps = alphas;
    else if (kind == LossKind::huber)
        hps = cfg.huber_delta_grid;
    for (double lr : cfg.lr_grid)
        for (double wd : cfg.wd_grid)
            for (double hp : hps)
                m.grid.push_back({lr, wd, hp});
    return m;
}

inline std::vector<MethodVariant> experiment_variants(const ExperimentConfig& cfg)
{
    std::vector<MethodVariant> out;
    for (const auto& name : cfg.methods)
        out.push_back(make_variant(cfg, name, parse_loss_kind(name), cfg.gar_mask, cfg.alpha_grid, cfg.batch_size));
    return out;
}

inline const std::array<const char*, 3>& gar_term_names()
{
    static const std::array<const char*, 3> names{"mae", "diff", "diffnorm"};
    return names;
}

/// The seven non-empty sub-loss masks, singles first and the full mask last.
inline std::vector<std::vector<bool>> ablation_masks()
{
    return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
            {true, false, true},  {false, true, true},  {true, true, true}};
}

inline std::string mask_name(const std::vector<bool>& mask)
{
    std::string s;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i])
            s += (s.empty() ? "" : "+") + std::string(gar_term_names()[i]);
    return "gar[" + s + "]";
}

// Data preparation -----------------------------------------------------------------

/// Train / validation / test for one fold, already standardized when asked.
struct PreparedFold {
    Dataset train, val, test;
    std::optional<Standardizer> scaler;
    bool test_is_val = false; // holdout: one evaluation half plays both roles
};

struct PreparedData {
    Dataset full;
    std::vector<PreparedFold> folds;
};

inline Dataset load_dataset(const ExperimentConfig& cfg)
{
    if (cfg.dataset == "sine")
        return gen_sine();
    if (cfg.dataset == "squared_sine")
        return gen_squared_sine();
    if (cfg.dataset == "csv") {
        if (cfg.csv_path.empty() || cfg.targets.empty())
            throw std::invalid_argument("config: csv dataset needs csv_path and targets");
        return load_csv(cfg.csv_path, cfg.targets, cfg.drop);
    }
    const auto preset = find_preset(cfg.dataset);
    if (!preset)
        throw std::invalid_argument("config: unknown dataset '" + cfg.dataset + "'");
    const auto& path = cfg.csv_path.empty() ? preset->default_path : cfg.csv_path;
    return load_csv(path, cfg.targets.empty() ? preset->targets : cfg.targets,
                    cfg.drop.empty() ? preset->drop : cfg.drop);
}

inline PreparedData prepare_data(const ExperimentConfig& cfg)
{
    PreparedData out{load_dataset(cfg), {}};
    auto add = [&](Dataset train, Dataset val, Dataset test, bool same) {
        PreparedFold f;
        f.test_is_val = same;
        if (cfg.standardize) {
            auto st = standardize(train, {val, test}, cfg.standardize_targets);
            f.train = std::move(st.train);
            f.val = std::move(st.others[0]);
            f.test = std::move(st.others[1]);
            f.scaler = st.stats;
        } else {
            f.train = std::move(train);
            f.val = std::move(val);
            f.test = std::move(test);
        }
        out.folds.push_back(std::move(f));
    };
    if (cfg.protocol == "holdout") {
        const auto s = holdout_split(out.full.rows(), cfg.split_seed, cfg.holdout_train_fraction);
        const auto eval = out.full.subset(s.eval_idx);
        add(out.full.subset(s.train_idx), eval, eval, true);
    } else if (cfg.protocol == "cv") {
        const auto s = split_and_fold(out.full, SplitPlan{cfg.test_fraction, cfg.k_folds, cfg.split_seed});
        for (const auto& f : s.folds)
            add(f.train, f.val, s.test, false);
    } else {
        throw std::invalid_argument("config: protocol must be 'holdout' or 'cv'");
    }
    return out;
}

inline NetworkSpec network_for(const ExperimentConfig& cfg, const Dataset& data)
{
    return NetworkSpec{data.feature_dim(), cfg.auto_hidden ? tabular_hidden_dims(data.feature_dim()) : cfg.hidden_dims,
                       data.target_dim()};
}

inline TrainConfig train_config(const ExperimentConfig& cfg, const MethodVariant& m, const GridPoint& gp,
                                std::uint64_t seed)
{
    TrainConfig t;
    t.optimizer = cfg.optimizer;
    t.lr0 = gp.lr;
    t.momentum = cfg.momentum;
    t.adam_beta1 = cfg.adam_beta1;
    t.adam_beta2 = cfg.adam_beta2;
    t.adam_eps = cfg.adam_eps;
    t.weight_decay = gp.weight_decay;
    t.epochs = cfg.epochs;
    t.batch_size = m.batch_size;
    t.lr_decay_epochs = cfg.lr_decay_epochs;
    t.lr_decay_factor = cfg.lr_decay_factor;
    t.seed = seed;
    t.loss = m.loss;
    if (m.loss.kind == LossKind::gar)
        t.loss.gar.alpha = gp.hp;
    if (m.loss.kind == LossKind::huber)
        t.loss.huber_delta = gp.hp;
    return t;
}

inline void validate(const ExperimentConfig& cfg, const std::vector<MethodVariant>& variants)
{
    if (variants.empty())
        throw std::invalid_argument("config: no methods");
    if (cfg.seeds.empty())
        throw std::invalid_argument("config: seeds must be non-empty");
    if (cfg.lr_grid.empty() || cfg.wd_grid.empty())
        throw std::invalid_argument("config: lr_grid and wd_grid must be non-empty");
    if (cfg.epochs == 0)
        throw std::invalid_argument("config: epochs must be positive");
    if (cfg.workers == 0)
        throw std::invalid_argument("config: workers must be positive");
    if (cfg.standardize_targets && !cfg.standardize)
        throw std::invalid_argument("config: standardize_targets requires standardize");
    if (cfg.selection_metric != "per_metric")
        parse_metric(cfg.selection_metric);
    std::set<std::string> names;
    for (const auto& m : variants) {
        if (!names.insert(m.name).second)
            throw std::invalid_argument("config: duplicate method '" + m.name + "'");
        if (m.grid.empty())
            throw std::invalid_argument("config: empty grid for method '" + m.name + "'");
        for (const auto& gp : m.grid)
            train_config(cfg, m, gp, 0).validate();
    }
}

// Runs --------------------------------------------------------------------------------

inline constexpr std::array<Metric, 5> kAllMetrics{Metric::mae, Metric::rmse, Metric::pearson, Metric::spearman,
                                                  Metric::r2};
using MetricRow = std::array<double, kAllMetrics.size()>;

inline MetricRow metric_row(const MetricReport& r)
{
    MetricRow row{};
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k)
        row[k] = metric_value(r, kAllMetrics[k]);
    return row;
}

inline std::size_t metric_index(Metric m)
{
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k)
        if (kAllMetrics[k] == m)
            return k;
    throw std::logic_error("metric not tracked");
}

struct RunRecord {
    std::size_t variant = 0, fold = 0, grid = 0, seed_index = 0;
    std::vector<MetricRow> val;  // per epoch
    std::vector<MetricRow> test; // per epoch
    TrainingTrace trace;
};

/// Metrics in original target units.
inline MetricReport evaluate_model(const ParameterStore& p, const Dataset& data,
                                   const std::optional<Standardizer>& scaler)
{
    Tensor pred = predict(p, data.features);
    Tensor truth = data.targets;
    if (scaler && scaler->targets_too()) {
        pred = scaler->unscale_targets(pred);
        truth = scaler->unscale_targets(truth);
    }
    return evaluate(pred, truth);
}

inline RunRecord execute_run(const ExperimentConfig& cfg, const MethodVariant& m, const PreparedFold& fold,
                             const NetworkSpec& spec, std::size_t grid, std::uint64_t seed)
{
    RunRecord rec;
    auto on_epoch = [&](std::size_t, const ParameterStore& p) {
        rec.val.push_back(metric_row(evaluate_model(p, fold.val, fold.scaler)));
        rec.test.push_back(fold.test_is_val ? rec.val.back() : metric_row(evaluate_model(p, fold.test, fold.scaler)));
    };
    rec.trace = train(fold.train, spec, train_config(cfg, m, m.grid[grid], seed), on_epoch).trace;
    // Epochs after a divergence have no model; NaN never wins selection.
    MetricRow missing;
    missing.fill(std::numeric_limits<double>::quiet_NaN());
    rec.val.resize(cfg.epochs, missing);
    rec.test.resize(cfg.epochs, missing);
    return rec;
}

/// Parameters after `epoch` (0-based) for the given run; training is
/// deterministic, so stopping early reproduces the snapshot exactly.
inline ParameterStore refit(const ExperimentConfig& cfg, const MethodVariant& m, const PreparedFold& fold,
                            const NetworkSpec& spec, std::size_t grid, std::uint64_t seed, std::size_t epoch)
{
    auto tc = train_config(cfg, m, m.grid[grid], seed);
    tc.epochs = epoch + 1;
    return train(fold.train, spec, tc).params;
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown after all workers finish (lowest index first).
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn)
{
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(workers, n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto& th : pool)
            th.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

// Report -----------------------------------------------------------------------------

struct Selection {
    std::size_t variant = 0, fold = 0;
    Metric metric = Metric::mae; // metric the choice was made on
    std::size_t grid = 0, epoch = 0;
    double val_value = 0.0; // seed-averaged validation value
};

struct MetricSummary {
    std::size_t variant = 0;
    Metric metric = Metric::mae;
    std::vector<double> values; // one per (fold, seed), fold-major
    double mean = 0.0, std = 0.0;
};

struct Comparison {
    std::size_t variant = 0;
    Metric metric = Metric::mae;
    double mean = 0.0, baseline_mean = 0.0;
    double gain_abs = 0.0; // mean - baseline_mean
    double gain_rel = 0.0; // (mean - baseline_mean) / |baseline_mean|
    TTestResult test;
};

struct CurveSeries {
    std::size_t variant = 0;
    std::vector<double> mean, std;
};

struct SensitivityRow {
    double alpha = 0.0;
    std::size_t batch_size = 0;
    std::size_t fold = 0;
    MetricRow values{}; // seed-averaged test values, per-metric selection
};

struct AblationRow {
    std::size_t variant = 0;
    double mean_rank = 0.0;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<MethodVariant> variants;
    std::size_t folds = 0;
    std::vector<RunRecord> runs; // (variant, fold, grid, seed) order
    std::vector<Selection> selections;
    std::vector<MetricSummary> summary;
    std::vector<Comparison> comparisons;
    std::vector<double> curve_x, curve_y;
    std::vector<CurveSeries> curves;
    std::vector<SensitivityRow> sensitivity;
    std::vector<AblationRow> ablation;

    const RunRecord& run(std::size_t v, std::size_t f, std::size_t g, std::size_t s) const
    {
        const std::size_t n_seeds = config.seeds.size();
        std::size_t offset = 0;
        for (std::size_t i = 0; i < v; ++i)
            offset += folds * variants[i].grid.size() * n_seeds;
        return runs.at(offset + (f * variants[v].grid.size() + g) * n_seeds + s);
    }

    const MetricSummary& summary_for(const std::string& variant, Metric m) const
    {
        for (const auto& s : summary)
            if (variants[s.variant].name == variant && s.metric == m)
                return s;
        throw std::out_of_range("report: no summary for " + variant + "/" + metric_name(m));
    }

    std::optional<std::size_t> variant_index(const std::string& name) const
    {
        for (std::size_t i = 0; i < variants.size(); ++i)
            if (variants[i].name == name)
                return i;
        return std::nullopt;
    }
};

/// Metrics used for selection: every tracked metric in per-metric mode,
/// otherwise the single configured one.
inline std::vector<Metric> selection_metrics(const ExperimentConfig& cfg)
{
    if (cfg.selection_metric == "per_metric")
        return {kAllMetrics.begin(), kAllMetrics.end()};
    return {parse_metric(cfg.selection_metric)};
}

/// The selection that decides the reported value of `reported`.
inline const Selection& selection_for(const RunReport& r, std::size_t variant, std::size_t fold, Metric reported)
{
    const Metric by = r.config.selection_metric == "per_metric" ? reported : parse_metric(r.config.selection_metric);
    for (const auto& s : r.selections)
        if (s.variant == variant && s.fold == fold && s.metric == by)
            return s;
    throw std::out_of_range("report: missing selection");
}

namespace detail {

/// True when a is strictly better than b; NaN is worse than anything.
inline bool better(double a, double b, Metric m)
{
    if (std::isnan(a))
        return false;
    if (std::isnan(b))
        return true;
    return higher_is_better(m) ? a > b : a < b;
}

inline void select_models(RunReport& r)
{
    const std::size_t n_seeds = r.config.seeds.size();
    for (std::size_t v = 0; v < r.variants.size(); ++v)
        for (std::size_t f = 0; f < r.folds; ++f)
            for (Metric m : selection_metrics(r.config)) {
                const std::size_t k = metric_index(m);
                Selection best{v, f, m, 0, 0, std::numeric_limits<double>::quiet_NaN()};
                for (std::size_t g = 0; g < r.variants[v].grid.size(); ++g) {
                    const std::size_t epochs = r.run(v, f, g, 0).val.size();
                    for (std::size_t e = 0; e < epochs; ++e) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < n_seeds; ++i)
                            s += r.run(v, f, g, i).val[e][k];
                        s /= static_cast<double>(n_seeds);
                        if (better(s, best.val_value, m))
                            best = Selection{v, f, m, g, e, s};
                    }
                }
                r.selections.push_back(best);
            }
}

inline void summarise(RunReport& r)
{
    const std::size_t n_seeds = r.config.seeds.size();
    for (std::size_t v = 0; v < r.variants.size(); ++v)
        for (Metric m : kAllMetrics) {
            MetricSummary s{v, m, {}, 0.0, 0.0};
            for (std::size_t f = 0; f < r.folds; ++f) {
                const auto& sel = selection_for(r, v, f, m);
                for (std::size_t i = 0; i < n_seeds; ++i)
                    s.values.push_back(r.run(v, f, sel.grid, i).test[sel.epoch][metric_index(m)]);
            }
            s.mean = mean_of(s.values);
            s.std = std_of(s.values);
            r.summary.push_back(std::move(s));
        }

    const auto base = r.variant_index(r.config.baseline);
    if (!base)
        return;
    for (std::size_t v = 0; v < r.variants.size(); ++v) {
        if (v == *base)
            continue;
        for (Metric m : kAllMetrics) {
            const auto& a = r.summary_for(r.variants[v].name, m);
            const auto& b = r.summary_for(r.variants[*base].name, m);
            Comparison c{v, m, a.mean, b.mean, a.mean - b.mean, (a.mean - b.mean) / std::fabs(b.mean), {}};
            if (a.values.size() >= 2)
                c.test = paired_ttest(a.values, b.values);
            else
                c.test.p_value = std::numeric_limits<double>::quiet_NaN();
            r.comparisons.push_back(c);
        }
    }
}

inline void build_curves(RunReport& r, const PreparedData& data)
{
    if (!r.config.prediction_curve || data.full.feature_dim() != 1 || data.full.target_dim() != 1)
        return;
    const Metric by = r.config.selection_metric == "per_metric" ? Metric::pearson
                                                                : parse_metric(r.config.selection_metric);
    const auto spec = network_for(r.config, data.full);
    r.curve_x.assign(data.full.features.values().begin(), data.full.features.values().end());
    r.curve_y.assign(data.full.targets.values().begin(), data.full.targets.values().end());
    const std::size_t n = data.full.rows();
    for (std::size_t v = 0; v < r.variants.size(); ++v) {
        std::vector<std::vector<double>> preds;
        for (std::size_t f = 0; f < r.folds; ++f) {
            const auto& sel = selection_for(r, v, f, by);
            const auto& fold = data.folds[f];
            Dataset full = fold.scaler ? fold.scaler->apply(data.full) : data.full;
            for (std::size_t i = 0; i < r.config.seeds.size(); ++i) {
                const auto p = refit(r.config, r.variants[v], fold, spec, sel.grid, r.config.seeds[i], sel.epoch);
                Tensor out = predict(p, full.features);
                if (fold.scaler)
                    out = fold.scaler->unscale_targets(out);
                preds.emplace_back(out.values().begin(), out.values().end());
            }
        }
        CurveSeries c{v, std::vector<double>(n), std::vector<double>(n)};
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<double> col;
            for (const auto& p : preds)
                col.push_back(p[j]);
            c.mean[j] = mean_of(col);
            c.std[j] = std_of(col);
        }
        r.curves.push_back(std::move(c));
    }
}

} // namespace detail

/// Trains every (variant, fold, grid point, seed), selects per fold on
/// validation and summarises test metrics.
inline RunReport run_variants(const ExperimentConfig& cfg, std::vector<MethodVariant> variants)
{
    validate(cfg, variants);
    const auto data = prepare_data(cfg);
    const auto spec = network_for(cfg, data.full);
    spec.validate();

    RunReport r;
    r.config = cfg;
    r.variants = std::move(variants);
    r.folds = data.folds.size();
    for (std::size_t v = 0; v < r.variants.size(); ++v)
        for (std::size_t f = 0; f < r.folds; ++f)
            for (std::size_t g = 0; g < r.variants[v].grid.size(); ++g)
                for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
                    r.runs.push_back(RunRecord{v, f, g, s, {}, {}, {}});

    parallel_for(r.runs.size(), cfg.workers, [&](std::size_t i) {
        auto& slot = r.runs[i];
        auto rec = execute_run(cfg, r.variants[slot.variant], data.folds[slot.fold], spec, slot.grid,
                               cfg.seeds[slot.seed_index]);
        slot.val = std::move(rec.val);
        slot.test = std::move(rec.test);
        slot.trace = std::move(rec.trace);
    });

    detail::select_models(r);
    detail::summarise(r);
    detail::build_curves(r, data);
    return r;
}

inline RunReport run_experiment(const ExperimentConfig& cfg) { return run_variants(cfg, experiment_variants(cfg)); }

/// Mean rank (1 = best, ties averaged) of each variant over folds and the
/// metrics MAE, RMSE, Pearson, Spearman, using seed-averaged test values.
inline std::vector<AblationRow> rank_variants(const RunReport& r)
{
    const std::size_t nv = r.variants.size(), n_seeds = r.config.seeds.size();
    std::vector<double> total(nv, 0.0);
    std::size_t count = 0;
    for (Metric m : kReportedMetrics) {
        const auto& per = [&](std::size_t v) -> const MetricSummary& { return r.summary_for(r.variants[v].name, m); };
        for (std::size_t f = 0; f < r.folds; ++f) {
            std::vector<double> score(nv);
            for (std::size_t v = 0; v < nv; ++v) {
                double s = 0.0;
                for (std::size_t i = 0; i < n_seeds; ++i)
                    s += per(v).values[f * n_seeds + i];
                s /= static_cast<double>(n_seeds);
                // Rank ascending on "badness"; NaN ranks last.
                score[v] = std::isnan(s) ? std::numeric_limits<double>::infinity() : (higher_is_better(m) ? -s : s);
            }
            const auto ranks = rank_average_ties(score);
            for (std::size_t v = 0; v < nv; ++v)
                total[v] += ranks[v];
            ++count;
        }
    }
    std::vector<AblationRow> out;
    for (std::size_t v = 0; v < nv; ++v)
        out.push_back({v, total[v] / static_cast<double>(count)});
    return out;
}

/// All seven sub-loss masks of the GAR objective.
inline RunReport run_ablation(const ExperimentConfig& cfg)
{
    std::vector<MethodVariant> variants;
    for (const auto& mask : ablation_masks())
        variants.push_back(make_variant(cfg, mask_name(mask), LossKind::gar, mask, cfg.alpha_grid, cfg.batch_size));
    auto c = cfg;
    c.baseline = mask_name({true, false, false});
    c.prediction_curve = false;
    auto r = run_variants(c, std::move(variants));
    r.ablation = rank_variants(r);
    return r;
}

inline std::string sensitivity_name(double alpha, std::size_t batch)
{
    return "gar_alpha" + format_double(alpha) + "_b" + std::to_string(batch);
}

/// GAR at every (alpha, batch size) pair; one sensitivity row per
/// (alpha, batch size, fold).
inline RunReport run_sensitivity(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                                 const std::vector<std::size_t>& batch_sizes)
{
    if (alphas.empty() || batch_sizes.empty())
        throw std::invalid_argument("sweep: alphas and batch sizes must be non-empty");
    std::vector<MethodVariant> variants;
    for (double a : alphas)
        for (std::size_t b : batch_sizes)
            variants.push_back(make_variant(cfg, sensitivity_name(a, b), LossKind::gar, cfg.gar_mask, {a}, b));
    auto c = cfg;
    c.prediction_curve = false;
    auto r = run_variants(c, std::move(variants));
    const std::size_t n_seeds = c.seeds.size();
    std::size_t v = 0;
    for (double a : alphas)
        for (std::size_t b : batch_sizes) {
            for (std::size_t f = 0; f < r.folds; ++f) {
                SensitivityRow row{a, b, f, {}};
                for (Metric m : kAllMetrics) {
                    const auto& s = r.summary_for(r.variants[v].name, m);
                    double sum = 0.0;
                    for (std::size_t i = 0; i < n_seeds; ++i)
                        sum += s.values[f * n_seeds + i];
                    row.values[metric_index(m)] = sum / static_cast<double>(n_seeds);
                }
                r.sensitivity.push_back(row);
            }
            ++v;
        }
    return r;
}

// Output --------------------------------------------------------------------------------

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline std::string fmt(double v) { return std::isnan(v) ? "nan" : format_double(v); }

inline std::string metric_cells(const MetricRow& row)
{
    std::string s;
    for (std::size_t k = 0; k < row.size(); ++k)
        s += (k ? "," : "") + fmt(row[k]);
    return s;
}

inline std::string metric_header()
{
    std::string s;
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k)
        s += (k ? "," : "") + std::string(metric_name(kAllMetrics[k]));
    return s;
}

inline nlohmann::json num(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

} // namespace detail

inline std::vector<std::string> plot_kinds() { return {"prediction_curve", "sensitivity_box", "trace"}; }

/// Writes plot-ready CSV for one kind:
///   prediction_curve -> prediction_curve_<method>.csv (x, y_true, y_pred_mean, y_pred_std)
///   sensitivity_box  -> sensitivity_box.csv (alpha, batch_size, fold, metric, value)
///   trace            -> trace.csv (run keys plus per-epoch training diagnostics)
/// Returns the files written.
inline std::vector<std::filesystem::path> emit_plot_data(const RunReport& r, const std::string& kind,
                                                         const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    using detail::fmt;
    if (kind == "prediction_curve") {
        if (r.curves.empty())
            throw std::invalid_argument("plot: report has no prediction curves");
        for (const auto& c : r.curves) {
            std::string s = "x,y_true,y_pred_mean,y_pred_std\n";
            for (std::size_t j = 0; j < r.curve_x.size(); ++j)
                s += fmt(r.curve_x[j]) + "," + fmt(r.curve_y[j]) + "," + fmt(c.mean[j]) + "," + fmt(c.std[j]) + "\n";
            const auto path = dir / ("prediction_curve_" + r.variants[c.variant].name + ".csv");
            detail::write_file(path, s);
            written.push_back(path);
        }
    } else if (kind == "sensitivity_box") {
        if (r.sensitivity.empty())
            throw std::invalid_argument("plot: report has no sensitivity series");
        std::string s = "alpha,batch_size,fold,metric,value\n";
        for (const auto& row : r.sensitivity)
            for (std::size_t k = 0; k < kAllMetrics.size(); ++k)
                s += fmt(row.alpha) + "," + std::to_string(row.batch_size) + "," + std::to_string(row.fold) + "," +
                     metric_name(kAllMetrics[k]) + "," + fmt(row.values[k]) + "\n";
        const auto path = dir / "sensitivity_box.csv";
        detail::write_file(path, s);
        written.push_back(path);
    } else if (kind == "trace") {
        if (r.runs.empty())
            throw std::invalid_argument("plot: report has no runs");
        std::string s = "method,fold,grid_index,seed,epoch,train_loss,lr,mean_error,error_std,error_variance\n";
        for (const auto& run : r.runs)
            for (const auto& e : run.trace.epochs)
                s += r.variants[run.variant].name + "," + std::to_string(run.fold) + "," + std::to_string(run.grid) +
                     "," + std::to_string(r.config.seeds[run.seed_index]) + "," + std::to_string(e.epoch) + "," +
                     fmt(e.train_loss) + "," + fmt(e.lr) + "," + fmt(e.mean_error) + "," + fmt(e.error_std) + "," +
                     fmt(e.error_variance) + "\n";
        const auto path = dir / "trace.csv";
        detail::write_file(path, s);
        written.push_back(path);
    } else {
        throw std::invalid_argument("plot: unknown kind '" + kind + "'");
    }
    return written;
}

/// Writes the full report into `dir`:
///   config.json     resolved configuration
///   grid.csv        grid points per method
///   runs.csv        per-epoch validation and test metrics of every run
///   selection.csv   chosen (grid point, epoch) per method, fold and metric
///   test.csv        test value of every selected model
///   summary.csv     mean / std over (fold, seed) per method and metric
///   comparison.csv  differences and paired t-test p-values against the baseline
///   summary.json    summary and comparison as JSON
/// plus ablation.csv, sensitivity.csv and plot data when present.
inline void write_report(const RunReport& r, const std::filesystem::path& dir)
{
    using detail::fmt;
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "config.json", to_json(r.config).dump(2) + "\n");

    std::string grid = "method,grid_index,lr,weight_decay,hp,batch_size\n";
    for (const auto& v : r.variants)
        for (std::size_t g = 0; g < v.grid.size(); ++g)
            grid += v.name + "," + std::to_string(g) + "," + fmt(v.grid[g].lr) + "," + fmt(v.grid[g].weight_decay) +
                    "," + fmt(v.grid[g].hp) + "," + std::to_string(v.batch_size) + "\n";
    detail::write_file(dir / "grid.csv", grid);

    std::string runs = "method,fold,grid_index,seed,epoch,split," + detail::metric_header() + "\n";
    for (const auto& run : r.runs) {
        const std::string key = r.variants[run.variant].name + "," + std::to_string(run.fold) + "," +
                                std::to_string(run.grid) + "," + std::to_string(r.config.seeds[run.seed_index]) + ",";
        for (std::size_t e = 0; e < run.val.size(); ++e) {
            runs += key + std::to_string(e) + ",val," + detail::metric_cells(run.val[e]) + "\n";
            runs += key + std::to_string(e) + ",test," + detail::metric_cells(run.test[e]) + "\n";
        }
    }
    detail::write_file(dir / "runs.csv", runs);

    std::string sel = "method,fold,selected_by,grid_index,lr,weight_decay,hp,epoch,val_value\n";
    for (const auto& s : r.selections) {
        const auto& v = r.variants[s.variant];
        sel += v.name + "," + std::to_string(s.fold) + "," + metric_name(s.metric) + "," + std::to_string(s.grid) +
               "," + fmt(v.grid[s.grid].lr) + "," + fmt(v.grid[s.grid].weight_decay) + "," + fmt(v.grid[s.grid].hp) +
               "," + std::to_string(s.epoch) + "," + fmt(s.val_value) + "\n";
    }
    detail::write_file(dir / "selection.csv", sel);

    std::string test = "method,metric,fold,seed,value\n";
    std::string summary = "method,metric,mean,std,n\n";
    std::size_t diverged = 0;
    for (const auto& run : r.runs)
        diverged += run.trace.diverged_at.has_value();
    nlohmann::json js = {{"name", r.config.name},
                         {"runs", r.runs.size()},
                         {"diverged_runs", diverged},
                         {"summary", nlohmann::json::array()},
                         {"comparison", nlohmann::json::array()}};
    for (const auto& s : r.summary) {
        const auto& name = r.variants[s.variant].name;
        const std::size_t n_seeds = r.config.seeds.size();
        for (std::size_t i = 0; i < s.values.size(); ++i)
            test += name + "," + metric_name(s.metric) + "," + std::to_string(i / n_seeds) + "," +
                    std::to_string(r.config.seeds[i % n_seeds]) + "," + fmt(s.values[i]) + "\n";
        summary += name + "," + metric_name(s.metric) + "," + fmt(s.mean) + "," + fmt(s.std) + "," +
                   std::to_string(s.values.size()) + "\n";
        js["summary"].push_back({{"method", name}, {"metric", metric_name(s.metric)}, {"mean", detail::num(s.mean)},
                                 {"std", detail::num(s.std)}, {"n", s.values.size()}});
    }
    detail::write_file(dir / "test.csv", test);
    detail::write_file(dir / "summary.csv", summary);

    std::string cmp = "method,baseline,metric,mean,baseline_mean,gain_abs,gain_rel,t,p_value,degenerate\n";
    for (const auto& c : r.comparisons) {
        const auto& name = r.variants[c.variant].name;
        cmp += name + "," + r.config.baseline + "," + metric_name(c.metric) + "," + fmt(c.mean) + "," +
               fmt(c.baseline_mean) + "," + fmt(c.gain_abs) + "," + fmt(c.gain_rel) + "," + fmt(c.test.t) + "," +
               fmt(c.test.p_value) + "," + (c.test.degenerate ? "1" : "0") + "\n";
        js["comparison"].push_back({{"method", name},
                                    {"baseline", r.config.baseline},
                                    {"metric", metric_name(c.metric)},
                                    {"gain_abs", detail::num(c.gain_abs)},
                                    {"gain_rel", detail::num(c.gain_rel)},
                                    {"t", detail::num(c.test.t)},
                                    {"p_value", detail::num(c.test.p_value)},
                                    {"degenerate", c.test.degenerate}});
    }
    detail::write_file(dir / "comparison.csv", cmp);

    if (!r.ablation.empty()) {
        std::string ab = "method,mae,rmse,pearson,spearman,mean_rank\n";
        js["ablation"] = nlohmann::json::array();
        for (const auto& a : r.ablation) {
            const auto& name = r.variants[a.variant].name;
            ab += name;
            for (Metric m : kReportedMetrics)
                ab += "," + fmt(r.summary_for(name, m).mean);
            ab += "," + fmt(a.mean_rank) + "\n";
            js["ablation"].push_back({{"method", name}, {"mean_rank", a.mean_rank}});
        }
        detail::write_file(dir / "ablation.csv", ab);
    }
    if (!r.sensitivity.empty()) {
        std::string s = "alpha,batch_size,fold," + detail::metric_header() + "\n";
        for (const auto& row : r.sensitivity)
            s += fmt(row.alpha) + "," + std::to_string(row.batch_size) + "," + std::to_string(row.fold) + "," +
                 detail::metric_cells(row.values) + "\n";
        detail::write_file(dir / "sensitivity.csv", s);
        emit_plot_data(r, "sensitivity_box", dir);
    }
    detail::write_file(dir / "summary.json", js.dump(2) + "\n");
    if (!r.curves.empty())
        emit_plot_data(r, "prediction_curve", dir);
    emit_plot_data(r, "trace", dir);
}

/// Saves the selected model of every (method, fold, seed) to
/// dir/models/<method>_fold<f>_seed<s>.garm. Models are selected on Pearson
/// in per-metric mode.
inline std::vector<std::filesystem::path> save_selected_models(const RunReport& r, const std::filesystem::path& dir)
{
    const auto data = prepare_data(r.config);
    const auto spec = network_for(r.config, data.full);
    const Metric by =
        r.config.selection_metric == "per_metric" ? Metric::pearson : parse_metric(r.config.selection_metric);
    std::filesystem::create_directories(dir / "models");
    std::vector<std::filesystem::path> out;
    for (std::size_t v = 0; v < r.variants.size(); ++v)
        for (std::size_t f = 0; f < r.folds; ++f) {
            const auto& sel = selection_for(r, v, f, by);
            for (auto seed : r.config.seeds) {
                const auto p = refit(r.config, r.variants[v], data.folds[f], spec, sel.grid, seed, sel.epoch);
                const auto path = dir / "models" /
                                  (r.variants[v].name + "_fold" + std::to_string(f) + "_seed" + std::to_string(seed) +
                                   ".garm");
                save_checkpoint(p, path.string());
                out.push_back(path);
            }
        }
    return out;
}

} // namespace gar
