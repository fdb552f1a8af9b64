#include "fewtrans/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fewtrans/mechanism.hpp"
#include "fewtrans/rng.hpp"

namespace fewtrans {

using nlohmann::json;

void RunConfig::validate() const {
    if (n_tasks < 1) throw Error("run config: n_tasks must be >= 1");
    if (parallel < 1) throw Error("run config: parallel must be >= 1");
    if (out_path.empty()) throw Error("run config: missing output path");
    if (algorithms.empty()) throw Error("run config: no algorithms listed");
    if (synthetic.empty() && manifests.empty()) throw Error("run config: no datasets declared");
    for (const auto& name : algorithms) parse_method(name);
    center.validate();
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::map<std::string, std::string> parse_attrs(std::istringstream& ls, const std::string& what) {
    std::map<std::string, std::string> attrs;
    std::string tok;
    while (ls >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos || eq == 0)
            throw Error(what + ": expected key=value, got '" + tok + "'");
        attrs[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return attrs;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
    return out;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open run config '" + path + "'");
    const std::string what = "run config '" + path + "'";

    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        auto fail = [&](const std::string& msg) {
            throw Error(what + ": line " + std::to_string(line_no) + ": " + msg);
        };
        try {
            if (key == "run_id") ls >> cfg.run_id;
            else if (key == "out") ls >> cfg.out_path;
            else if (key == "seed") ls >> cfg.run_seed;
            else if (key == "n_tasks") ls >> cfg.n_tasks;
            else if (key == "split") {
                std::string tag;
                ls >> tag;
                cfg.split_tag = parse_split_tag(tag);
            } else if (key == "way_lo") ls >> cfg.way_lo;
            else if (key == "way_hi") ls >> cfg.way_hi;
            else if (key == "shot_cap") ls >> cfg.shot_cap;
            else if (key == "query_per_class") ls >> cfg.query_per_class;
            else if (key == "fixed_shot") ls >> cfg.fixed_shot;
            else if (key == "hierarchical") ls >> cfg.hierarchical;
            else if (key == "parallel") ls >> cfg.parallel;
            else if (key == "save_logits") ls >> cfg.save_logits;
            else if (key == "mechanism") ls >> cfg.mechanism;
            else if (key == "split_ratio") ls >> cfg.split_ratio;
            else if (key == "split_seed") ls >> cfg.split_seed;
            else if (key == "dataset") {
                std::string name;
                ls >> name;
                cfg.datasets.push_back(name);
            } else if (key == "algorithm") {
                std::string name;
                ls >> name;
                cfg.algorithms.push_back(name);
            } else if (key == "synthetic") {
                auto attrs = parse_attrs(ls, what);
                SyntheticDecl decl;
                decl.spec.name = attrs.count("name") ? attrs.at("name") : "synthetic";
                if (attrs.count("classes")) decl.spec.n_classes = std::stoi(attrs.at("classes"));
                if (attrs.count("items_per_class"))
                    decl.spec.items_per_class = std::stoi(attrs.at("items_per_class"));
                if (attrs.count("dim")) decl.spec.dim = std::stoi(attrs.at("dim"));
                if (attrs.count("separation"))
                    decl.spec.separation = std::stod(attrs.at("separation"));
                if (attrs.count("seed")) decl.seed = std::stoull(attrs.at("seed"));
                cfg.synthetic.push_back(std::move(decl));
            } else if (key == "manifest") {
                ManifestDecl decl;
                ls >> decl.manifest_path;
                if (decl.manifest_path.empty()) fail("manifest line needs a path");
                auto attrs = parse_attrs(ls, what);
                if (attrs.count("embeddings")) decl.embeddings_path = attrs.at("embeddings");
                cfg.manifests.push_back(std::move(decl));
            } else if (key == "backbone") {
                std::string kind;
                ls >> kind;
                if (kind == "frozen") {
                    cfg.backbone.kind = BackboneDecl::Kind::Frozen;
                } else if (kind == "mlp") {
                    cfg.backbone.kind = BackboneDecl::Kind::Mlp;
                    auto attrs = parse_attrs(ls, what);
                    if (attrs.count("hidden")) cfg.backbone.hidden = parse_int_list(attrs.at("hidden"));
                    if (attrs.count("feature_dim"))
                        cfg.backbone.feature_dim = std::stoi(attrs.at("feature_dim"));
                    if (attrs.count("seed")) cfg.backbone.seed = std::stoull(attrs.at("seed"));
                    if (attrs.count("pretrain_epochs"))
                        cfg.backbone.pretrain_epochs = std::stoi(attrs.at("pretrain_epochs"));
                    if (attrs.count("pretrain_lr"))
                        cfg.backbone.pretrain_lr = std::stod(attrs.at("pretrain_lr"));
                } else {
                    fail("backbone kind must be mlp or frozen");
                }
            } else if (key == "grid_shape") {
                std::string shape;
                ls >> shape;
                cfg.grid_shape = parse_grid_shape(shape);
            } else if (key == "center_lr_backbone") ls >> cfg.center.lr_backbone;
            else if (key == "center_lr_head") ls >> cfg.center.lr_head;
            else if (key == "center_epochs") ls >> cfg.center.epochs;
            else if (key == "spacing") ls >> cfg.spacing;
            else fail("unknown key '" + key + "'");
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(std::string("bad value (") + e.what() + ")");
        }
    }
    cfg.validate();
    return cfg;
}

// --- record <-> json ---

json record_to_json(const TaskRecord& record) {
    json j;
    j["type"] = "task";
    j["schema_version"] = record.schema_version;
    j["run_id"] = record.run_id;
    j["dataset"] = record.dataset;
    j["algorithm"] = record.algorithm;
    j["task_index"] = record.task_index;
    j["grid"] = {{"shape", grid_shape_name(record.grid.shape)},
                 {"spacing", record.grid.spacing},
                 {"center_lr_backbone", record.grid.center.lr_backbone},
                 {"center_lr_head", record.grid.center.lr_head},
                 {"center_epochs", record.grid.center.epochs}};
    json accs = json::array();
    for (double a : record.per_config_accuracy) {
        if (std::isnan(a)) accs.push_back(nullptr);
        else accs.push_back(a);
    }
    j["per_config_accuracy"] = std::move(accs);
    json failed = json::array();
    for (std::size_t i : record.failed) failed.push_back(i);
    j["failed"] = std::move(failed);
    j["hpe_accuracy"] = record.hpe_accuracy;
    j["ncm_accuracy"] = record.ncm_accuracy;
    j["wall_ms"] = record.wall_ms;
    if (!record.mechanism.is_null()) j["mechanism"] = record.mechanism;
    if (!record.logits.is_null()) j["logits"] = record.logits;
    return j;
}

TaskRecord record_from_json(const json& j) {
    TaskRecord r;
    r.schema_version = j.at("schema_version").get<int>();
    r.run_id = j.at("run_id").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.algorithm = j.at("algorithm").get<std::string>();
    r.task_index = j.at("task_index").get<std::int64_t>();
    const json& g = j.at("grid");
    r.grid.shape = parse_grid_shape(g.at("shape").get<std::string>());
    r.grid.spacing = g.at("spacing").get<double>();
    r.grid.center.lr_backbone = g.at("center_lr_backbone").get<double>();
    r.grid.center.lr_head = g.at("center_lr_head").get<double>();
    r.grid.center.epochs = g.at("center_epochs").get<int>();
    for (const auto& a : j.at("per_config_accuracy")) {
        if (a.is_null()) r.per_config_accuracy.push_back(std::nan(""));
        else r.per_config_accuracy.push_back(a.get<double>());
    }
    for (const auto& f : j.at("failed")) r.failed.push_back(f.get<std::size_t>());
    r.hpe_accuracy = j.at("hpe_accuracy").get<double>();
    r.ncm_accuracy = j.at("ncm_accuracy").get<double>();
    r.wall_ms = j.at("wall_ms").get<double>();
    if (j.contains("mechanism")) r.mechanism = j.at("mechanism");
    if (j.contains("logits")) r.logits = j.at("logits");
    return r;
}

ResultStore load_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open store '" + path + "'");
    ResultStore store;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);

    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::parse_error&) {
            if (i + 1 == lines.size()) {
                store.truncated_tail = true;  // interrupted writer; keep the prefix
                break;
            }
            throw Error("store '" + path + "': corrupt record at line " + std::to_string(i + 1));
        }
        const std::string type = j.value("type", "");
        if (type == "meta") {
            store.meta = j;
        } else if (type == "dataset") {
            DatasetMeta meta;
            meta.name = j.at("name").get<std::string>();
            for (const auto& n : j.at("class_display_names"))
                meta.class_display_names.push_back(n.get<std::string>());
            store.datasets[meta.name] = std::move(meta);
        } else if (type == "task") {
            store.records.push_back(record_from_json(j));
        } else if (type == "sweep") {
            store.sweep = j;
        } else {
            throw Error("store '" + path + "': unknown record type at line " +
                        std::to_string(i + 1));
        }
    }
    return store;
}

// --- run preparation ---

RunContext prepare_run(const RunConfig& cfg, bool with_backbones) {
    RunContext ctx;
    std::map<std::string, ClassSplit> explicit_splits;

    for (const auto& decl : cfg.synthetic) {
        auto handle = generate_synthetic_dataset(ctx.registry, decl.spec, decl.seed);
        ctx.dataset_order.push_back(handle->name());
    }
    for (const auto& decl : cfg.manifests) {
        DatasetManifest manifest = read_manifest(decl.manifest_path);
        auto split = read_manifest_split(decl.manifest_path);
        const std::string name = manifest.name;
        DatasetHandle handle;
        if (!decl.embeddings_path.empty()) {
            handle = ctx.registry.register_dataset(std::move(manifest),
                                                   load_embeddings(decl.embeddings_path));
        } else {
            handle = ctx.registry.register_dataset(std::move(manifest));
        }
        if (split) explicit_splits[name] = *split;
        ctx.dataset_order.push_back(name);
    }

    std::vector<std::string> selected = cfg.datasets;
    if (selected.empty()) selected = ctx.dataset_order;
    ctx.dataset_order = selected;

    for (const auto& name : selected) {
        PreparedDataset prepared;
        prepared.handle = ctx.registry.find(name);
        auto it = explicit_splits.find(name);
        prepared.split = it != explicit_splits.end()
                             ? it->second
                             : split_base_novel(prepared.handle, cfg.split_ratio, cfg.split_seed);
        prepared.hierarchical = cfg.hierarchical && !prepared.handle->manifest().hierarchy.empty();

        if (with_backbones) {
            if (cfg.backbone.kind == BackboneDecl::Kind::Frozen) {
                prepared.backbone = frozen_embedding_backbone(prepared.handle->embeddings());
            } else {
                MlpSpec spec;
                spec.dim_in = static_cast<int>(prepared.handle->input_dim());
                spec.hidden = cfg.backbone.hidden;
                spec.feature_dim = cfg.backbone.feature_dim;
                auto mlp = reference_backbone(spec, cfg.backbone.seed);
                if (cfg.backbone.pretrain_epochs > 0)
                    pretrain_reference(*mlp, *prepared.handle, prepared.split.base,
                                       cfg.backbone.pretrain_epochs, cfg.backbone.pretrain_lr);
                prepared.backbone = std::move(mlp);
            }
        }
        ctx.datasets.emplace(name, std::move(prepared));
    }
    return ctx;
}

// --- benchmark loop ---

namespace {

struct WorkUnit {
    std::size_t dataset_idx;
    std::int64_t task_index;
    std::size_t algo_idx;
};

json dataset_meta_json(const Dataset& dataset) {
    json j;
    j["type"] = "dataset";
    j["name"] = dataset.name();
    json names = json::array();
    for (std::size_t i = 0; i < dataset.n_classes(); ++i)
        names.push_back(dataset.class_at(i).display_name);
    j["class_display_names"] = std::move(names);
    j["n_classes"] = dataset.n_classes();
    return j;
}

json meta_json(const RunConfig& cfg) {
    json j;
    j["type"] = "meta";
    j["schema_version"] = 1;
    j["run_id"] = cfg.run_id;
    j["seed"] = cfg.run_seed;
    j["n_tasks"] = cfg.n_tasks;
    j["split"] = split_tag_name(cfg.split_tag);
    j["way_lo"] = cfg.way_lo;
    j["way_hi"] = cfg.way_hi;
    j["shot_cap"] = cfg.shot_cap;
    j["query_per_class"] = cfg.query_per_class;
    j["fixed_shot"] = cfg.fixed_shot;
    j["grid"] = {{"shape", grid_shape_name(cfg.grid_shape)},
                 {"spacing", cfg.spacing},
                 {"center_lr_backbone", cfg.center.lr_backbone},
                 {"center_lr_head", cfg.center.lr_head},
                 {"center_epochs", cfg.center.epochs}};
    json algos = json::array();
    for (const auto& a : cfg.algorithms) algos.push_back(a);
    j["algorithms"] = std::move(algos);
    return j;
}

TaskRecord evaluate_unit(const RunConfig& cfg, const PreparedDataset& prepared,
                         const ConfigGrid& grid, const std::string& algorithm,
                         std::int64_t task_index) {
    const auto start = std::chrono::steady_clock::now();

    TaskStreamSpec spec;
    spec.split_tag = cfg.split_tag;
    spec.n_tasks = cfg.n_tasks;
    spec.run_seed = cfg.run_seed;
    spec.way_lo = cfg.way_lo;
    spec.way_hi = cfg.way_hi;
    spec.shot_cap = cfg.shot_cap;
    spec.query_per_class = cfg.query_per_class;
    spec.fixed_shot = cfg.fixed_shot;

    const Task task = prepared.hierarchical
                          ? sample_task_hierarchical(prepared.handle, prepared.split, spec,
                                                     task_index)
                          : sample_task(prepared.handle, prepared.split, spec, task_index);

    const Method method = parse_method(algorithm);
    FitOptions options;
    options.seed = mix64(cfg.run_seed ^ mix64(static_cast<std::uint64_t>(task_index)) ^
                         fnv1a(algorithm));

    const Dataset& dataset = *prepared.handle;
    const Backbone& backbone = *prepared.backbone;
    HPEResult result = run_hpe(method, backbone, dataset, task, grid, options);

    TaskRecord record;
    record.run_id = cfg.run_id;
    record.dataset = dataset.name();
    record.algorithm = algorithm;
    record.task_index = task_index;
    record.grid = grid.provenance;
    record.per_config_accuracy = result.per_config_accuracy;
    record.failed = result.failed;
    record.hpe_accuracy = result.hpe_accuracy;
    record.ncm_accuracy = ncm_accuracy(backbone, dataset, task);

    if (cfg.mechanism) {
        const SupportSet support = support_of(dataset, task);
        const SupportSet query = query_of(dataset, task);
        AdaptedClassifier center_fit =
            fit_method(backbone, support, method, grid.provenance.center, options);
        const Snapshot after = center_fit.backbone->snapshot();
        const BlockMap blocks = default_block_map(center_fit.initial_state);
        std::unordered_set<std::string> trainable(center_fit.trainable.begin(),
                                                  center_fit.trainable.end());
        DeltaWReport delta =
            delta_w_norms(center_fit.initial_state, after, blocks, trainable);
        json mech;
        json blocks_json;
        for (const auto& [block, value] : delta.per_block) blocks_json[block] = value;
        mech["delta_w_blocks"] = std::move(blocks_json);
        double total = 0.0;
        for (const auto& e : delta.per_weight) total += e.l2;
        mech["delta_w_total"] = total;
        if (query.batch.ids.size() >= 2) {
            json profile = json::array();
            for (double v : cka_profile(backbone, *center_fit.backbone, query.batch))
                profile.push_back(v);
            mech["cka_profile"] = std::move(profile);
        }
        record.mechanism = std::move(mech);
    }

    if (cfg.save_logits) {
        json l;
        json fused = json::array();
        for (std::size_t i = 0; i < result.fused_logits.rows(); ++i) {
            json row = json::array();
            for (std::size_t j = 0; j < result.fused_logits.cols(); ++j)
                row.push_back(result.fused_logits(i, j));
            fused.push_back(std::move(row));
        }
        l["fused"] = std::move(fused);
        json per_config = json::array();
        for (const auto& m : result.per_config_logits) {
            if (m.empty()) {
                per_config.push_back(nullptr);
                continue;
            }
            json mat = json::array();
            for (std::size_t i = 0; i < m.rows(); ++i) {
                json row = json::array();
                for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
                mat.push_back(std::move(row));
            }
            per_config.push_back(std::move(mat));
        }
        l["per_config"] = std::move(per_config);
        record.logits = std::move(l);
    }

    const auto stop = std::chrono::steady_clock::now();
    record.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    return record;
}

}  // namespace

ResultStore run_benchmark(const RunConfig& cfg) {
    cfg.validate();
    RunContext ctx = prepare_run(cfg);

    // resume: collect finished units and whether header records exist
    std::set<std::string> done;
    bool have_meta = false;
    std::set<std::string> have_dataset_meta;
    {
        std::ifstream probe(cfg.out_path);
        if (probe.good()) {
            probe.close();
            ResultStore existing = load_store(cfg.out_path);
            have_meta = !existing.meta.is_null();
            for (const auto& [name, meta] : existing.datasets) {
                (void)meta;
                have_dataset_meta.insert(name);
            }
            for (const auto& r : existing.records)
                done.insert(r.run_id + "\x1f" + r.dataset + "\x1f" + std::to_string(r.task_index) +
                            "\x1f" + r.algorithm);
        }
    }

    std::ofstream out(cfg.out_path, std::ios::app);
    if (!out) throw Error("cannot write store '" + cfg.out_path + "'");

    if (!have_meta) out << meta_json(cfg).dump() << "\n";
    for (const auto& name : ctx.dataset_order)
        if (!have_dataset_meta.count(name))
            out << dataset_meta_json(*ctx.datasets.at(name).handle).dump() << "\n";
    out.flush();

    const ConfigGrid grid = build_grid(cfg.center, cfg.grid_shape, cfg.spacing);

    std::vector<WorkUnit> units;
    for (std::size_t d = 0; d < ctx.dataset_order.size(); ++d)
        for (std::int64_t t = 0; t < cfg.n_tasks; ++t)
            for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
                const std::string key = cfg.run_id + "\x1f" + ctx.dataset_order[d] + "\x1f" +
                                        std::to_string(t) + "\x1f" + cfg.algorithms[a];
                if (!done.count(key)) units.push_back({d, t, a});
            }

    // Parallel evaluation with in-order emission: completed records are
    // buffered until every earlier unit has been flushed, so the file order
    // (and content) never depends on the thread count.
    std::map<std::size_t, std::string> pending;
    std::size_t next_to_write = 0;
    std::string first_error;

#ifdef _OPENMP
#pragma omp parallel for num_threads(cfg.parallel) schedule(dynamic, 1)
#endif
    for (std::size_t u = 0; u < units.size(); ++u) {
        std::string payload;
        std::string error;
        try {
            const WorkUnit& unit = units[u];
            const std::string& ds_name = ctx.dataset_order[unit.dataset_idx];
            TaskRecord record = evaluate_unit(cfg, ctx.datasets.at(ds_name), grid,
                                              cfg.algorithms[unit.algo_idx], unit.task_index);
            payload = record_to_json(record).dump();
        } catch (const std::exception& e) {
            error = e.what();
        }
#ifdef _OPENMP
#pragma omp critical(store_writer)
#endif
        {
            if (!error.empty() && first_error.empty()) first_error = error;
            pending[u] = std::move(payload);
            while (!pending.empty() && pending.begin()->first == next_to_write) {
                if (!pending.begin()->second.empty()) out << pending.begin()->second << "\n";
                pending.erase(pending.begin());
                ++next_to_write;
                out.flush();
            }
        }
    }
    if (!first_error.empty()) throw Error(first_error);
    out.close();

    return load_store(cfg.out_path);
}

ReportMode parse_report_mode(const std::string& name) {
    if (name == "ci-table") return ReportMode::CiTable;
    if (name == "grid-metrics") return ReportMode::GridMetrics;
    if (name == "significance") return ReportMode::Significance;
    if (name == "heatmap") return ReportMode::Heatmap;
    if (name == "cka-profile") return ReportMode::CkaProfile;
    if (name == "rarity-correlation") return ReportMode::RarityCorrelation;
    throw Error("unknown report mode '" + name + "'");
}

}  // namespace fewtrans
