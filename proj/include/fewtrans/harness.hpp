#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewtrans/bundled.hpp"
#include "fewtrans/hpe.hpp"

namespace fewtrans {

struct SyntheticDecl {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
};

struct ManifestDecl {
    std::string manifest_path;
    std::string embeddings_path;  // optional
};

struct BackboneDecl {
    enum class Kind { Mlp, Frozen };
    Kind kind = Kind::Mlp;
    std::vector<int> hidden = {32};
    int feature_dim = 16;
    std::uint64_t seed = 1;
    int pretrain_epochs = 0;
    double pretrain_lr = 1e-2;
};

struct RunConfig {
    std::string run_id = "run";
    std::string out_path = "results.jsonl";
    std::uint64_t run_seed = 0;
    int n_tasks = 600;
    SplitTag split_tag = SplitTag::Base;
    int way_lo = 2, way_hi = 15, shot_cap = 10, query_per_class = 15, fixed_shot = 0;
    bool hierarchical = false;

    std::vector<SyntheticDecl> synthetic;
    std::vector<ManifestDecl> manifests;
    std::vector<std::string> datasets;    // empty selects everything declared
    std::vector<std::string> algorithms;  // method names

    BackboneDecl backbone;
    HyperConfig center{1e-3, 1e-2, 20, ""};
    GridShape grid_shape = GridShape::Cube3x3x3;
    double spacing = 5.0;

    double split_ratio = 0.8;
    std::uint64_t split_seed = 7;

    bool save_logits = false;
    bool mechanism = false;
    int parallel = 1;

    void validate() const;
};

/// Flat key/value text file; see the README for the key list.
RunConfig load_run_config(const std::string& path);

struct TaskRecord {
    std::string run_id;
    std::string dataset;
    std::string algorithm;
    std::int64_t task_index = 0;
    GridProvenance grid;
    std::vector<double> per_config_accuracy;  // NaN at failed indices
    std::vector<std::size_t> failed;
    double hpe_accuracy = 0.0;
    double ncm_accuracy = 0.0;
    double wall_ms = 0.0;
    int schema_version = 1;
    nlohmann::json mechanism;  // optional: delta_w_blocks, cka_profile
    nlohmann::json logits;     // optional: fused + per-config dumps
};

struct DatasetMeta {
    std::string name;
    std::vector<std::string> class_display_names;
};

struct ResultStore {
    nlohmann::json meta;   // null when the store carries no meta record
    nlohmann::json sweep;  // set when the store holds a sweep matrix
    std::map<std::string, DatasetMeta> datasets;
    std::vector<TaskRecord> records;
    bool truncated_tail = false;  // a corrupt trailing line was dropped
};

ResultStore load_store(const std::string& path);

nlohmann::json record_to_json(const TaskRecord& record);
TaskRecord record_from_json(const nlohmann::json& j);

/// One prepared dataset: handle, split, and the (possibly pretrained)
/// backbone evaluated against it.
struct PreparedDataset {
    DatasetHandle handle;
    ClassSplit split;
    std::shared_ptr<const Backbone> backbone;
    bool hierarchical = false;
};

struct RunContext {
    DatasetRegistry registry;
    std::vector<std::string> dataset_order;
    std::map<std::string, PreparedDataset> datasets;
};

/// Registers every declared dataset and, when asked, builds/pretrains the
/// per-dataset backbones. Deterministic.
RunContext prepare_run(const RunConfig& cfg, bool with_backbones = true);

/// The benchmark loop: sample -> adapt per grid config -> fuse -> score ->
/// persist, one record per (dataset, task, algorithm). Resumable: existing
/// (run_id, dataset, task_index, algorithm) records are kept untouched and
/// skipped. Task-level OpenMP parallelism never changes any persisted value
/// except wall_ms.
ResultStore run_benchmark(const RunConfig& cfg);

enum class ReportMode { CiTable, GridMetrics, Significance, Heatmap, CkaProfile, RarityCorrelation };

ReportMode parse_report_mode(const std::string& name);

struct ReportOptions {
    std::string algo_a;  // significance mode; defaults to the first two
    std::string algo_b;
    std::string freq_table_path;  // rarity mode
};

/// Deterministic CSV emission for the given mode.
void emit_report(const ResultStore& store, ReportMode mode, const std::string& out_path,
                 const ReportOptions& options = {});

int cli_main(int argc, char** argv);

}  // namespace fewtrans
