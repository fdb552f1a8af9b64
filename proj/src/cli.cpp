#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fewtrans/harness.hpp"

namespace fewtrans {

using nlohmann::json;

namespace {

struct RunArgs {
    std::string config_path;
    std::int64_t seed = -1;
    int parallel = 0;
    bool save_logits = false;
};

struct ReportArgs {
    std::string store_path;
    std::string mode;
    std::string out_path;
    std::string algo_a, algo_b;
    std::string freq_table;
};

struct DumpArgs {
    std::string config_path;
    std::string dataset;
    std::string split;
    int n = 3;
    std::int64_t seed = -1;
    bool hierarchical = false;
    std::string out_path;
};

struct SweepArgs {
    std::string config_path;
    std::string dataset;
    std::string algorithm;
    std::int64_t task_index = 0;
    std::string axis1, axis2;
    std::string out_path;
    std::int64_t seed = -1;
};

SweepAxis parse_axis(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error("axis spec must look like name=v1,v2,... (got '" + spec + "')");
    SweepAxis axis;
    axis.name = spec.substr(0, eq);
    std::istringstream ss(spec.substr(eq + 1));
    std::string part;
    while (std::getline(ss, part, ',')) axis.values.push_back(std::stod(part));
    if (axis.values.empty()) throw Error("axis spec '" + spec + "' lists no values");
    return axis;
}

int do_run(const RunArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed >= 0) cfg.run_seed = static_cast<std::uint64_t>(args.seed);
    if (args.parallel > 0) cfg.parallel = args.parallel;
    if (args.save_logits) cfg.save_logits = true;
    ResultStore store = run_benchmark(cfg);
    std::cout << "store " << cfg.out_path << ": " << store.records.size() << " task records\n";
    return 0;
}

int do_report(const ReportArgs& args) {
    const ReportMode mode = parse_report_mode(args.mode);
    ResultStore store = load_store(args.store_path);
    if (store.truncated_tail)
        std::cerr << "warning: store '" << args.store_path
                  << "' ends in a corrupt line; it was ignored\n";
    ReportOptions options;
    options.algo_a = args.algo_a;
    options.algo_b = args.algo_b;
    options.freq_table_path = args.freq_table;
    emit_report(store, mode, args.out_path, options);
    std::cout << "wrote " << args.out_path << "\n";
    return 0;
}

int do_sample_dump(const DumpArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed >= 0) cfg.run_seed = static_cast<std::uint64_t>(args.seed);
    if (!args.split.empty()) cfg.split_tag = parse_split_tag(args.split);
    RunContext ctx = prepare_run(cfg, /*with_backbones=*/false);

    std::string dataset = args.dataset.empty() ? ctx.dataset_order.front() : args.dataset;
    auto it = ctx.datasets.find(dataset);
    if (it == ctx.datasets.end()) throw Error("dataset '" + dataset + "' is not in the config");
    const PreparedDataset& prepared = it->second;

    TaskStreamSpec spec;
    spec.split_tag = cfg.split_tag;
    spec.n_tasks = args.n;
    spec.run_seed = cfg.run_seed;
    spec.way_lo = cfg.way_lo;
    spec.way_hi = cfg.way_hi;
    spec.shot_cap = cfg.shot_cap;
    spec.query_per_class = cfg.query_per_class;
    spec.fixed_shot = cfg.fixed_shot;

    const bool hier = args.hierarchical || prepared.hierarchical;
    std::ostringstream lines;
    for (const Task& task : task_stream(prepared.handle, prepared.split, spec, hier))
        lines << serialize_task(task) << "\n";

    if (args.out_path.empty()) {
        std::cout << lines.str();
    } else {
        std::ofstream out(args.out_path, std::ios::trunc);
        if (!out) throw Error("cannot write '" + args.out_path + "'");
        out << lines.str();
    }
    return 0;
}

int do_sweep(const SweepArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed >= 0) cfg.run_seed = static_cast<std::uint64_t>(args.seed);
    RunContext ctx = prepare_run(cfg);

    std::string dataset = args.dataset.empty() ? ctx.dataset_order.front() : args.dataset;
    auto it = ctx.datasets.find(dataset);
    if (it == ctx.datasets.end()) throw Error("dataset '" + dataset + "' is not in the config");
    const PreparedDataset& prepared = it->second;

    TaskStreamSpec spec;
    spec.split_tag = cfg.split_tag;
    spec.n_tasks = static_cast<int>(args.task_index) + 1;
    spec.run_seed = cfg.run_seed;
    spec.way_lo = cfg.way_lo;
    spec.way_hi = cfg.way_hi;
    spec.shot_cap = cfg.shot_cap;
    spec.query_per_class = cfg.query_per_class;
    spec.fixed_shot = cfg.fixed_shot;
    const Task task = prepared.hierarchical
                          ? sample_task_hierarchical(prepared.handle, prepared.split, spec,
                                                     args.task_index)
                          : sample_task(prepared.handle, prepared.split, spec, args.task_index);

    const std::string algorithm = args.algorithm.empty() ? cfg.algorithms.front() : args.algorithm;
    const SweepAxis axis1 = parse_axis(args.axis1);
    const SweepAxis axis2 = parse_axis(args.axis2);
    FitOptions options;
    options.seed = cfg.run_seed;
    const SweepResult result =
        sweep_hyper_surface(parse_method(algorithm), *prepared.backbone, *prepared.handle, task,
                            axis1, axis2, cfg.center, options);

    json j;
    j["type"] = "sweep";
    j["schema_version"] = 1;
    j["dataset"] = dataset;
    j["algorithm"] = algorithm;
    j["task_index"] = args.task_index;
    j["axis1_name"] = result.axis1.name;
    j["axis1_values"] = result.axis1.values;
    j["axis2_name"] = result.axis2.name;
    j["axis2_values"] = result.axis2.values;
    json acc = json::array(), failed = json::array();
    for (std::size_t i = 0; i < result.axis1.values.size(); ++i) {
        json acc_row = json::array(), failed_row = json::array();
        for (std::size_t k = 0; k < result.axis2.values.size(); ++k) {
            const bool bad = result.failed[i * result.axis2.values.size() + k] != 0;
            failed_row.push_back(bad ? 1 : 0);
            acc_row.push_back(bad ? json(nullptr) : json(result.acc(i, k)));
        }
        acc.push_back(std::move(acc_row));
        failed.push_back(std::move(failed_row));
    }
    j["acc"] = std::move(acc);
    j["failed"] = std::move(failed);
    j["fixed"] = {{"lr_backbone", cfg.center.lr_backbone},
                  {"lr_head", cfg.center.lr_head},
                  {"epochs", cfg.center.epochs}};

    std::ofstream out(args.out_path, std::ios::trunc);
    if (!out) throw Error("cannot write '" + args.out_path + "'");
    out << j.dump() << "\n";
    std::cout << "wrote " << args.out_path << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"few-shot transfer evaluation harness"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "execute a benchmark run from a config file");
    run_cmd->add_option("--config", run_args.config_path, "run config path")->required();
    run_cmd->add_option("--seed", run_args.seed, "override the run seed");
    run_cmd->add_option("--parallel", run_args.parallel, "worker threads for task evaluation");
    run_cmd->add_flag("--save-logits", run_args.save_logits, "persist fused and per-config logits");

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "emit a CSV report from a result store");
    report_cmd->add_option("--store", report_args.store_path, "JSONL store path")->required();
    report_cmd
        ->add_option("--mode", report_args.mode,
                     "ci-table | grid-metrics | significance | heatmap | cka-profile | "
                     "rarity-correlation")
        ->required();
    report_cmd->add_option("--out", report_args.out_path, "output CSV path")->required();
    report_cmd->add_option("--algo-a", report_args.algo_a, "first algorithm (significance)");
    report_cmd->add_option("--algo-b", report_args.algo_b, "second algorithm (significance)");
    report_cmd->add_option("--freq-table", report_args.freq_table,
                           "token frequency table (rarity-correlation)");

    DumpArgs dump_args;
    auto* dump_cmd = app.add_subcommand("sample-dump", "emit serialized sampled tasks");
    dump_cmd->add_option("--config", dump_args.config_path, "run config path")->required();
    dump_cmd->add_option("--dataset", dump_args.dataset, "dataset name (default: first)");
    dump_cmd->add_option("--split", dump_args.split, "base | novel | base-to-novel");
    dump_cmd->add_option("--n", dump_args.n, "number of tasks");
    dump_cmd->add_option("--seed", dump_args.seed, "override the run seed");
    dump_cmd->add_flag("--hierarchical", dump_args.hierarchical, "force hierarchical sampling");
    dump_cmd->add_option("--out", dump_args.out_path, "output path (default: stdout)");

    SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter surface for one task");
    sweep_cmd->add_option("--config", sweep_args.config_path, "run config path")->required();
    sweep_cmd->add_option("--dataset", sweep_args.dataset, "dataset name (default: first)");
    sweep_cmd->add_option("--algorithm", sweep_args.algorithm, "method (default: first)");
    sweep_cmd->add_option("--task-index", sweep_args.task_index, "task index to sweep");
    sweep_cmd->add_option("--axis1", sweep_args.axis1, "axis spec, e.g. lr_backbone=1e-4,1e-3")
        ->required();
    sweep_cmd->add_option("--axis2", sweep_args.axis2, "axis spec, e.g. epochs=10,20,30")
        ->required();
    sweep_cmd->add_option("--out", sweep_args.out_path, "output store path")->required();
    sweep_cmd->add_option("--seed", sweep_args.seed, "override the run seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run_cmd->parsed()) return do_run(run_args);
        if (report_cmd->parsed()) return do_report(report_args);
        if (dump_cmd->parsed()) return do_sample_dump(dump_args);
        if (sweep_cmd->parsed()) return do_sweep(sweep_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace fewtrans
