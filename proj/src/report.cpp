#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "fewtrans/harness.hpp"
#include "fewtrans/mechanism.hpp"
#include "fewtrans/stats.hpp"

namespace fewtrans {

using nlohmann::json;

namespace {

std::string fmt_points(double fraction) {
    // accuracies print as percent with one decimal, banker's rounding
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << round_half_even(fraction * 100.0, 1);
    return os.str();
}

std::string fmt_stat(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write report '" + path + "'");
    out << content;
    if (!out) throw Error("short write to report '" + path + "'");
}

using GroupKey = std::pair<std::string, std::string>;  // (algorithm, dataset)

std::map<GroupKey, std::vector<const TaskRecord*>> group_records(const ResultStore& store) {
    std::map<GroupKey, std::vector<const TaskRecord*>> groups;
    for (const auto& r : store.records) groups[{r.algorithm, r.dataset}].push_back(&r);
    return groups;
}

MeanCi ci_of(const std::vector<double>& values) {
    if (values.size() == 1) return MeanCi{values[0], 0.0, 1};
    return mean_ci95(values);
}

std::string emit_ci_table(const ResultStore& store) {
    if (store.records.empty()) throw Error("ci-table: empty store");
    auto groups = group_records(store);
    std::ostringstream out;
    out << "algorithm,dataset,n_tasks,mean_pct,ci95_pct\n";
    std::string current_algo;
    std::vector<double> algo_means, algo_widths;
    auto flush_average = [&]() {
        if (current_algo.empty()) return;
        double m = 0.0, w = 0.0;
        for (double v : algo_means) m += v;
        for (double v : algo_widths) w += v;
        m /= static_cast<double>(algo_means.size());
        w /= static_cast<double>(algo_widths.size());
        out << current_algo << ",average," << algo_means.size() << "," << fmt_points(m) << ","
            << fmt_points(w) << "\n";
        algo_means.clear();
        algo_widths.clear();
    };
    for (const auto& [key, records] : groups) {
        if (key.first != current_algo) {
            flush_average();
            current_algo = key.first;
        }
        std::vector<double> accs;
        for (const auto* r : records) accs.push_back(r->hpe_accuracy);
        const MeanCi ci = ci_of(accs);
        out << key.first << "," << key.second << "," << records.size() << ","
            << fmt_points(ci.mean) << "," << fmt_points(ci.halfwidth) << "\n";
        algo_means.push_back(ci.mean);
        algo_widths.push_back(ci.halfwidth);
    }
    flush_average();
    return out.str();
}

std::string emit_grid_metrics(const ResultStore& store) {
    if (store.records.empty()) throw Error("grid-metrics: empty store");
    auto groups = group_records(store);
    std::ostringstream out;
    out << "algorithm,dataset,row_kind,config_index,lr_backbone,lr_head,epochs,value\n";
    for (const auto& [key, records] : groups) {
        const GridProvenance& prov = records.front()->grid;
        const ConfigGrid grid = build_grid(prov.center, prov.shape, prov.spacing);

        std::vector<HPEResult> results;
        for (const auto* r : records) {
            if (r->per_config_accuracy.size() != grid.size())
                throw Error("grid-metrics: record grid size mismatch in " + key.first + "/" +
                            key.second);
            HPEResult h;
            h.per_config_accuracy = r->per_config_accuracy;
            h.hpe_accuracy = r->hpe_accuracy;
            results.push_back(std::move(h));
        }
        const GridMetrics m = grid_metrics(results);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const HyperConfig& c = grid.configs[i];
            out << key.first << "," << key.second << ",config_mean," << i << ","
                << fmt_stat(c.lr_backbone) << "," << fmt_stat(c.lr_head) << "," << c.epochs << ","
                << (std::isnan(m.per_config_mean[i]) ? std::string("NA")
                                                     : fmt_points(m.per_config_mean[i]))
                << "\n";
        }
        auto summary = [&](const char* kind, double value, bool points) {
            out << key.first << "," << key.second << "," << kind << ",-1,,,"
                << "," << (points ? fmt_points(value) : fmt_stat(value)) << "\n";
        };
        summary("oracle_best", m.oracle_best_mean, true);
        summary("hpe", m.hpe_mean, true);
        summary("penalty", m.penalty, true);
        summary("sensitivity", m.sensitivity, false);
        summary("per_task_oracle", m.per_task_oracle_mean, true);
    }
    return out.str();
}

std::string effect_label(double d) {
    if (std::isinf(d)) return "degenerate";
    const double mag = std::fabs(d);
    if (mag < 0.3) return "small/negligible";
    if (mag < 0.8) return "medium";
    return "large";
}

std::string emit_significance(const ResultStore& store, const ReportOptions& options) {
    if (store.records.empty()) throw Error("significance: empty store");

    std::set<std::string> algos;
    for (const auto& r : store.records) algos.insert(r.algorithm);
    std::string a = options.algo_a, b = options.algo_b;
    if (a.empty() || b.empty()) {
        if (algos.size() < 2)
            throw Error("significance: unpaired records (store has a single algorithm)");
        auto it = algos.begin();
        a = *it++;
        b = *it;
    }
    if (!algos.count(a)) throw Error("significance: no records for algorithm '" + a + "'");
    if (!algos.count(b)) throw Error("significance: no records for algorithm '" + b + "'");

    // (dataset, task_index) -> accuracy per side
    std::map<std::pair<std::string, std::int64_t>, std::pair<double, double>> pairs;
    std::map<std::pair<std::string, std::int64_t>, int> seen;
    for (const auto& r : store.records) {
        if (r.algorithm != a && r.algorithm != b) continue;
        auto key = std::make_pair(r.dataset, r.task_index);
        if (r.algorithm == a) {
            pairs[key].first = r.hpe_accuracy;
            seen[key] |= 1;
        } else {
            pairs[key].second = r.hpe_accuracy;
            seen[key] |= 2;
        }
    }

    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_dataset;
    std::vector<double> all_a, all_b;
    for (const auto& [key, acc] : pairs) {
        if (seen[key] != 3) continue;  // unpaired task
        by_dataset[key.first].first.push_back(acc.first);
        by_dataset[key.first].second.push_back(acc.second);
        all_a.push_back(acc.first);
        all_b.push_back(acc.second);
    }
    if (all_a.size() < 2) throw Error("significance: fewer than 2 paired tasks");

    std::ostringstream out;
    out << "dataset,algo_a,algo_b,n_pairs,mean_a_pct,mean_b_pct,diff_pct,t,p,cohens_d,effect\n";
    auto emit_row = [&](const std::string& dataset, const std::vector<double>& va,
                        const std::vector<double>& vb) {
        double ma = 0.0, mb = 0.0;
        for (double v : va) ma += v;
        for (double v : vb) mb += v;
        ma /= static_cast<double>(va.size());
        mb /= static_cast<double>(vb.size());
        const PairedTest test = paired_t_test(va, vb);
        const double d = cohens_d_paired(va, vb);
        out << dataset << "," << a << "," << b << "," << va.size() << "," << fmt_points(ma) << ","
            << fmt_points(mb) << "," << fmt_points(ma - mb) << "," << fmt_stat(test.t) << ","
            << fmt_stat(test.p) << "," << fmt_stat(d) << "," << effect_label(d) << "\n";
    };
    for (const auto& [dataset, vals] : by_dataset) {
        if (vals.first.size() >= 2) emit_row(dataset, vals.first, vals.second);
    }
    emit_row("overall", all_a, all_b);
    return out.str();
}

std::string emit_heatmap(const ResultStore& store) {
    if (store.sweep.is_null()) throw Error("heatmap: store holds no sweep record");
    const json& s = store.sweep;
    const auto axis1_values = s.at("axis1_values").get<std::vector<double>>();
    const auto axis2_values = s.at("axis2_values").get<std::vector<double>>();
    const auto& acc = s.at("acc");
    const auto& failed = s.at("failed");

    std::ostringstream out;
    out << s.at("axis1_name").get<std::string>() << "\\" << s.at("axis2_name").get<std::string>();
    for (double v : axis2_values) out << "," << fmt_stat(v);
    out << "\n";
    for (std::size_t i = 0; i < axis1_values.size(); ++i) {
        out << fmt_stat(axis1_values[i]);
        for (std::size_t j = 0; j < axis2_values.size(); ++j) {
            if (failed.at(i).at(j).get<int>() != 0) out << ",NA";
            else out << "," << fmt_points(acc.at(i).at(j).get<double>());
        }
        out << "\n";
    }
    return out.str();
}

std::string emit_cka_profile(const ResultStore& store) {
    auto groups = group_records(store);
    std::ostringstream out;
    out << "algorithm,dataset,layer,mean_cka,n_tasks\n";
    bool any = false;
    for (const auto& [key, records] : groups) {
        std::vector<double> sums;
        std::size_t count = 0;
        for (const auto* r : records) {
            if (r->mechanism.is_null() || !r->mechanism.contains("cka_profile")) continue;
            const auto profile = r->mechanism.at("cka_profile").get<std::vector<double>>();
            if (sums.empty()) sums.assign(profile.size(), 0.0);
            if (profile.size() != sums.size())
                throw Error("cka-profile: inconsistent layer counts in " + key.first + "/" +
                            key.second);
            for (std::size_t i = 0; i < profile.size(); ++i) sums[i] += profile[i];
            ++count;
        }
        if (!count) continue;
        any = true;
        for (std::size_t i = 0; i < sums.size(); ++i)
            out << key.first << "," << key.second << "," << i << ","
                << fmt_stat(sums[i] / static_cast<double>(count)) << "," << count << "\n";
    }
    if (!any) throw Error("cka-profile: store holds no mechanism records (run with mechanism 1)");
    return out.str();
}

std::string emit_rarity(const ResultStore& store, const ReportOptions& options) {
    if (store.records.empty()) throw Error("rarity-correlation: empty store");
    if (options.freq_table_path.empty())
        throw Error("rarity-correlation: a frequency table path is required");
    const FrequencyTable table = load_frequency_table(options.freq_table_path);

    auto groups = group_records(store);
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> gain;
    for (const auto& [key, records] : groups) {
        double sum = 0.0;
        for (const auto* r : records) sum += r->hpe_accuracy - r->ncm_accuracy;
        gain[key.first][key.second] = {sum / static_cast<double>(records.size()), records.size()};
    }

    std::ostringstream out;
    out << "algorithm,dataset,rarity_score,adaptation_gain_pct,n_tasks\n";
    for (const auto& [algo, datasets] : gain) {
        std::vector<double> rarities, gains;
        for (const auto& [dataset, value] : datasets) {
            auto meta_it = store.datasets.find(dataset);
            if (meta_it == store.datasets.end())
                throw Error("rarity-correlation: store misses dataset metadata for '" + dataset +
                            "'");
            const RarityScore rarity =
                zipf_rarity(meta_it->second.class_display_names, table);
            out << algo << "," << dataset << "," << fmt_stat(rarity.dataset_score) << ","
                << fmt_points(value.first) << "," << value.second << "\n";
            rarities.push_back(rarity.dataset_score);
            gains.push_back(value.first);
        }
        if (rarities.size() >= 3) {
            const Correlation corr = spearman(rarities, gains);
            out << algo << ",spearman," << fmt_stat(corr.r) << "," << fmt_stat(corr.p) << ","
                << rarities.size() << "\n";
        }
    }
    return out.str();
}

}  // namespace

void emit_report(const ResultStore& store, ReportMode mode, const std::string& out_path,
                 const ReportOptions& options) {
    std::string content;
    switch (mode) {
        case ReportMode::CiTable: content = emit_ci_table(store); break;
        case ReportMode::GridMetrics: content = emit_grid_metrics(store); break;
        case ReportMode::Significance: content = emit_significance(store, options); break;
        case ReportMode::Heatmap: content = emit_heatmap(store); break;
        case ReportMode::CkaProfile: content = emit_cka_profile(store); break;
        case ReportMode::RarityCorrelation: content = emit_rarity(store, options); break;
    }
    write_text_file(out_path, content);
}

}  // namespace fewtrans
