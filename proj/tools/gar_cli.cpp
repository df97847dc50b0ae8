// gar_cli: datasets, experiments, ablations, sweeps, timing and evaluation.
#include "gar/gar.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string task;
    std::string config;
    std::string out;
    std::string model;
    std::string data;
    std::vector<std::string> targets;
    std::vector<std::string> drop;
    std::vector<double> alphas;
    std::vector<std::size_t> batch_sizes;
    std::vector<std::size_t> sizes{256, 512, 1024, 2048, 4096};
    std::vector<std::string> losses;
    std::size_t repeats = gar::kMinRepeats;
    std::uint64_t seed = 0;
    std::size_t workers = 0; // 0 keeps the config value
    bool save_models = false;
};

gar::ExperimentConfig load(const Options& o)
{
    auto cfg = gar::load_config(o.config);
    if (o.workers)
        cfg.workers = o.workers;
    if (o.save_models)
        cfg.save_models = true;
    return cfg;
}

void finish(const gar::RunReport& r, const Options& o)
{
    gar::write_report(r, o.out);
    if (r.config.save_models)
        gar::save_selected_models(r, o.out);
    std::cout << "wrote report to " << o.out << "\n";
    for (const auto& c : r.comparisons)
        if (c.metric == gar::Metric::pearson || c.metric == gar::Metric::mae)
            std::cout << "  " << r.variants[c.variant].name << " " << gar::metric_name(c.metric) << ": "
                      << gar::format_double(c.mean) << " vs " << r.config.baseline << " "
                      << gar::format_double(c.baseline_mean) << " (p=" << gar::format_double(c.test.p_value)
                      << ")\n";
}

void write_text(const std::string& path, const std::string& text)
{
    const fs::path p(path);
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << text;
}

/// Last header column of a CSV, used when eval gets no --targets.
std::string last_column(const std::string& path)
{
    std::ifstream in(path);
    std::string header;
    if (!in || !std::getline(in, header))
        throw std::runtime_error("cannot read header of " + path);
    const char delim = header.find(',') == std::string::npos && header.find(';') != std::string::npos ? ';' : ',';
    return gar::detail::header_name(gar::detail::split_line(header, delim).back());
}

int cmd_synth(const Options& o)
{
    gar::Dataset ds;
    if (o.task == "sine")
        ds = gar::gen_sine();
    else if (o.task == "sqsine" || o.task == "squared_sine")
        ds = gar::gen_squared_sine();
    else
        throw std::invalid_argument("synth: unknown task '" + o.task + "' (expected sine or sqsine)");
    const fs::path p(o.out);
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    gar::write_csv(ds, o.out);
    std::cout << "wrote " << ds.rows() << " rows to " << o.out << "\n";
    return 0;
}

int cmd_eval(const Options& o)
{
    const auto params = gar::load_checkpoint(o.model);
    const auto targets = o.targets.empty() ? std::vector<std::string>{last_column(o.data)} : o.targets;
    const auto data = gar::load_csv(o.data, targets, o.drop);
    const auto report = gar::evaluate(gar::predict(params, data.features), data.targets);
    const auto text = gar::to_json(report).dump(2) + "\n";
    std::cout << text;
    if (!o.out.empty())
        write_text((fs::path(o.out) / "metrics.json").string(), text);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gradient aligned regression: training, experiments and benchmarks"};
    app.require_subcommand(1);
    Options o;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as CSV");
    synth->add_option("task", o.task, "sine or sqsine")->required();
    synth->add_option("--out", o.out, "Output CSV path")->required();

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    auto* ablate = app.add_subcommand("ablate", "Run all seven GAR sub-loss masks");
    auto* sweep = app.add_subcommand("sweep", "Sweep GAR over alpha and batch size");
    for (auto* sub : {run, ablate, sweep}) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Report directory")->required();
        sub->add_option("--workers", o.workers, "Worker threads (overrides config)");
        sub->add_flag("--save-models", o.save_models, "Save selected models as checkpoints");
    }
    sweep->add_option("--alphas", o.alphas, "Alpha values")->required()->delimiter(',');
    sweep->add_option("--batch-sizes", o.batch_sizes, "Batch sizes")->required()->delimiter(',');

    auto* bench = app.add_subcommand("bench", "Time linear and quadratic loss forms");
    bench->add_option("--sizes", o.sizes, "Batch sizes")->delimiter(',');
    bench->add_option("--repeats", o.repeats, "Timed repeats per point (at least 20)");
    bench->add_option("--seed", o.seed, "Input seed");
    bench->add_option("--losses", o.losses, "Subset of losses to time")->delimiter(',');
    bench->add_option("--out", o.out, "Output CSV path (stdout if omitted)");

    auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a CSV dataset");
    eval->add_option("--model", o.model, "Checkpoint path")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", o.data, "CSV dataset")->required()->check(CLI::ExistingFile);
    eval->add_option("--targets", o.targets, "Target columns (default: last column)")->delimiter(',');
    eval->add_option("--drop", o.drop, "Columns to ignore")->delimiter(',');
    eval->add_option("--out", o.out, "Directory for metrics.json");

    CLI11_PARSE(app, argc, argv);
    gar::keep_heap_resident();

    try {
        if (synth->parsed())
            return cmd_synth(o);
        if (run->parsed()) {
            finish(gar::run_experiment(load(o)), o);
            return 0;
        }
        if (ablate->parsed()) {
            const auto r = gar::run_ablation(load(o));
            finish(r, o);
            for (const auto& a : r.ablation)
                std::cout << "  " << r.variants[a.variant].name << " mean rank " << gar::format_double(a.mean_rank)
                          << "\n";
            return 0;
        }
        if (sweep->parsed()) {
            finish(gar::run_sensitivity(load(o), o.alphas, o.batch_sizes), o);
            return 0;
        }
        if (bench->parsed()) {
            const auto csv = gar::timing_csv(gar::time_losses(o.sizes, o.repeats, o.seed, o.losses));
            if (o.out.empty())
                std::cout << csv;
            else
                write_text(o.out, csv);
            return 0;
        }
        if (eval->parsed())
            return cmd_eval(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
