#pragma once

#include <string>
#include <vector>

#include "fewtrans/transfer.hpp"

namespace fewtrans {

enum class GridShape { Cube3x3x3, Plane5x3 };

std::string grid_shape_name(GridShape shape);
GridShape parse_grid_shape(const std::string& name);

struct GridProvenance {
    HyperConfig center;
    double spacing = 1.0;
    GridShape shape = GridShape::Cube3x3x3;
};

/// Hyperparameter grid in canonical order: lexicographic ascending in
/// (epochs, lr_backbone, lr_head). Configs are distinct.
struct ConfigGrid {
    std::vector<HyperConfig> configs;
    GridProvenance provenance;
    bool degenerate_axis = false;  // some axis collapsed (reported, not fatal)

    std::size_t size() const { return configs.size(); }
};

/// Expansion rules: each learning-rate axis is {c/s, c, c*s} (3x3x3) or
/// {c/s^2, c/s, c, c*s, c*s^2} on the head rate alone (5x3); the epoch axis
/// tops out at center+10 with points at one third and two thirds of that,
/// rounded half-up and de-duplicated.
ConfigGrid build_grid(const HyperConfig& center, GridShape shape, double spacing);

/// Canonicalizes an explicit config list; duplicates are an error.
ConfigGrid make_grid(std::vector<HyperConfig> configs);

struct HPEResult {
    // aligned with the grid; failed entries hold an empty matrix / NaN
    std::vector<Matrix> per_config_logits;
    std::vector<double> per_config_accuracy;
    std::vector<std::size_t> failed;
    Matrix fused_logits;
    double hpe_accuracy = 0.0;
    std::vector<int> labels;
};

/// Adapt once per configuration from the same starting state, score each,
/// and classify the query set by the arithmetic mean of the per-config
/// logits. Diverged configurations are excluded from the mean (and the
/// effective count adjusts); it is an error for every configuration to fail.
HPEResult run_hpe(Method method, const Backbone& base, const Dataset& dataset, const Task& task,
                  const ConfigGrid& grid, const FitOptions& options = {},
                  bool fuse_as_probabilities = false);

/// Element-wise arithmetic mean of equally-shaped logit matrices.
Matrix fuse_logits(const std::vector<Matrix>& logits);

/// Row-wise softmax; building block for the off-by-default probability
/// fusion variant.
Matrix softmax_rows(const Matrix& logits);

/// Mean of softmax probabilities instead of raw logits. Off by default:
/// the protocol fuses raw logits.
Matrix fuse_probabilities(const std::vector<Matrix>& logits);

struct GridMetrics {
    std::vector<double> per_config_mean;
    double oracle_best_mean = 0.0;  // best single config by dataset-level mean
    double hpe_mean = 0.0;
    double penalty = 0.0;      // oracle_best_mean - hpe_mean
    double sensitivity = 0.0;  // mean within-task std of per-config accuracy
    double per_task_oracle_mean = 0.0;  // upper envelope, diagnostic only
};

GridMetrics grid_metrics(const std::vector<HPEResult>& results);

struct SweepAxis {
    std::string name;  // lr_backbone | lr_head | epochs
    std::vector<double> values;
};

struct SweepResult {
    SweepAxis axis1, axis2;
    Matrix acc;                       // (axis1.size, axis2.size)
    std::vector<std::uint8_t> failed;  // row-major mask of diverged cells
};

/// Query accuracy over the grid of (axis1 x axis2) with the remaining knobs
/// pinned at `fixed`. Diverged cells are marked, not zeroed.
SweepResult sweep_hyper_surface(Method method, const Backbone& base, const Dataset& dataset,
                                const Task& task, const SweepAxis& axis1, const SweepAxis& axis2,
                                const HyperConfig& fixed, const FitOptions& options = {});

/// Stratified l-fold selection on the support set alone, l = min(folds,
/// smallest class count); leave-one-out when shots are short. Ties prefer
/// fewer epochs, then smaller backbone and head rates. Throws
/// CvInfeasibleError when any class has a single support item.
HyperConfig cross_validate_select(Method method, const Backbone& base, const Dataset& dataset,
                                  const Task& task, const ConfigGrid& grid, int folds,
                                  const FitOptions& options = {});

}  // namespace fewtrans
