#include "fewtrans/mechanism.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fewtrans {

BlockMap default_block_map(const Snapshot& snap) {
    BlockMap map;
    for (const auto& [name, tensor] : snap) {
        (void)tensor;
        const auto dot = name.find('.');
        map[name] = dot == std::string::npos ? name : name.substr(0, dot);
    }
    return map;
}

DeltaWReport delta_w_norms(const Snapshot& before, const Snapshot& after,
                           const BlockMap& block_map,
                           const std::unordered_set<std::string>& trainable,
                           BlockAggregation mode) {
    if (before.size() != after.size())
        throw Error("delta_w_norms: snapshots differ in tensor count");

    DeltaWReport report;
    report.mode = mode;
    std::map<std::string, double> block_sq;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i].name != after[i].name)
            throw Error("delta_w_norms: tensor name mismatch ('" + before[i].name + "' vs '" +
                        after[i].name + "')");
        if (!before[i].value.same_shape(after[i].value))
            throw Error("delta_w_norms: shape mismatch for '" + before[i].name + "'");
        auto block_it = block_map.find(before[i].name);
        if (block_it == block_map.end())
            throw Error("delta_w_norms: block map misses '" + before[i].name + "'");

        double sq = 0.0;
        const auto& bv = before[i].value.values();
        const auto& av = after[i].value.values();
        for (std::size_t k = 0; k < bv.size(); ++k) {
            const double diff = av[k] - bv[k];
            sq += diff * diff;
        }
        const double norm = std::sqrt(sq);
        report.per_weight.push_back(
            {before[i].name, norm, trainable.count(before[i].name) > 0});
        if (mode == BlockAggregation::SumOfNorms) block_sq[block_it->second] += norm;
        else block_sq[block_it->second] += sq;
    }
    for (auto& [block, value] : block_sq)
        report.per_block[block] = mode == BlockAggregation::SumOfNorms ? value : std::sqrt(value);
    return report;
}

double linear_cka(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows()) throw Error("linear_cka: row counts differ");
    if (x.rows() < 2) throw Error("linear_cka: need at least 2 rows");
    if (!all_finite(x) || !all_finite(y)) throw Error("linear_cka: non-finite activations");

    const Matrix xc = center_columns(x);
    const Matrix yc = center_columns(y);
    const double cross = frobenius_sq(matmul_tn(yc, xc));
    const double x_norm = std::sqrt(frobenius_sq(matmul_tn(xc, xc)));
    const double y_norm = std::sqrt(frobenius_sq(matmul_tn(yc, yc)));
    if (x_norm == 0.0 || y_norm == 0.0)
        throw Error("linear_cka: all-constant activations (zero centered norm)");
    return cross / (x_norm * y_norm);
}

std::vector<double> cka_profile(const Backbone& before, const Backbone& after,
                                const Batch& probe_items) {
    if (before.layer_count() != after.layer_count())
        throw Error("cka_profile: backbones differ in layer count");
    const auto acts_before = before.activations(probe_items);
    const auto acts_after = after.activations(probe_items);
    std::vector<double> profile;
    profile.reserve(acts_before.size());
    for (std::size_t i = 0; i < acts_before.size(); ++i) {
        if (!acts_before[i].same_shape(acts_after[i]))
            throw Error("cka_profile: layer " + std::to_string(i) + " shape mismatch");
        profile.push_back(linear_cka(acts_before[i], acts_after[i]));
    }
    return profile;
}

FrequencyTable load_frequency_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open frequency table '" + path + "'");
    FrequencyTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw Error("frequency table '" + path + "': line " + std::to_string(line_no) +
                        " is not token<TAB>value");
        const std::string token = line.substr(0, tab);
        double value;
        try {
            value = std::stod(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw Error("frequency table '" + path + "': bad value at line " +
                        std::to_string(line_no));
        }
        if (!(value >= 1.0 && value <= 8.0))
            throw Error("frequency table '" + path + "': value out of [1,8] at line " +
                        std::to_string(line_no));
        if (!table.zipf.emplace(token, value).second) {
            table.zipf[token] = value;  // last occurrence wins
            ++table.duplicate_count;
        }
    }
    return table;
}

std::vector<std::string> tokenize_name(const std::string& name) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : name) {
        if (std::isalnum(static_cast<unsigned char>(raw))) {
            current.push_back(
                static_cast<char>(std::tolower(static_cast<unsigned char>(raw))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

RarityScore zipf_rarity(const std::vector<std::string>& class_names,
                        const FrequencyTable& table) {
    if (class_names.empty()) throw Error("zipf_rarity: empty class name list");
    constexpr double kOovFloor = 1.0;

    RarityScore score;
    std::size_t total_tokens = 0, oov_tokens = 0;
    for (const auto& name : class_names) {
        const auto tokens = tokenize_name(name);
        if (tokens.empty())
            throw Error("zipf_rarity: class name '" + name + "' has no tokens");
        double sum = 0.0;
        for (const auto& token : tokens) {
            ++total_tokens;
            auto it = table.zipf.find(token);
            if (it == table.zipf.end()) {
                ++oov_tokens;
                sum += kOovFloor;
            } else {
                sum += it->second;
            }
        }
        score.per_class.push_back(sum / static_cast<double>(tokens.size()));
    }
    double class_sum = 0.0;
    for (double v : score.per_class) class_sum += v;
    score.dataset_score = class_sum / static_cast<double>(score.per_class.size());
    score.oov_fraction = static_cast<double>(oov_tokens) / static_cast<double>(total_tokens);
    return score;
}

}  // namespace fewtrans
