#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fewtrans/backbone.hpp"

namespace fewtrans {

enum class BlockAggregation { SumOfNorms, L2OfConcat };

struct DeltaWEntry {
    std::string name;
    double l2 = 0.0;
    bool trainable = false;
};

struct DeltaWReport {
    std::vector<DeltaWEntry> per_weight;
    std::map<std::string, double> per_block;
    BlockAggregation mode = BlockAggregation::SumOfNorms;
};

/// name -> block id; must cover every tensor name in the snapshots.
using BlockMap = std::unordered_map<std::string, std::string>;

/// Default blocks: everything up to the first '.' of the tensor name.
BlockMap default_block_map(const Snapshot& snap);

/// Per-tensor ||after - before||_2 plus per-block aggregates. The trainable
/// set marks which tensors the adaptation was allowed to move.
DeltaWReport delta_w_norms(const Snapshot& before, const Snapshot& after,
                           const BlockMap& block_map,
                           const std::unordered_set<std::string>& trainable = {},
                           BlockAggregation mode = BlockAggregation::SumOfNorms);

/// Linear centered kernel alignment between two activation matrices with a
/// shared row count: ||Yc' Xc||_F^2 / (||Xc' Xc||_F * ||Yc' Yc||_F).
double linear_cka(const Matrix& x, const Matrix& y);

/// linear_cka per corresponding layer, in layer order. Backbones must be
/// structurally identical; the probe batch should have >= 20 items.
std::vector<double> cka_profile(const Backbone& before, const Backbone& after,
                                const Batch& probe_items);

/// token -> Zipf value in [1, 8]
struct FrequencyTable {
    std::unordered_map<std::string, double> zipf;
    std::size_t duplicate_count = 0;  // later lines won over earlier ones
};

FrequencyTable load_frequency_table(const std::string& path);

struct RarityScore {
    std::vector<double> per_class;
    double dataset_score = 0.0;
    double oov_fraction = 0.0;  // out-of-vocabulary token occurrences
};

/// Lowercase, split on non-alphanumeric runs, score each token from the
/// table with a floor of 1.0 for unknown tokens; class score is the token
/// mean and the dataset score the class mean.
RarityScore zipf_rarity(const std::vector<std::string>& class_names,
                        const FrequencyTable& table);

std::vector<std::string> tokenize_name(const std::string& name);

}  // namespace fewtrans
