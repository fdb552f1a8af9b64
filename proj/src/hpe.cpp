#include "fewtrans/hpe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fewtrans {

std::string grid_shape_name(GridShape shape) {
    return shape == GridShape::Cube3x3x3 ? "3x3x3" : "5x3";
}

GridShape parse_grid_shape(const std::string& name) {
    if (name == "3x3x3") return GridShape::Cube3x3x3;
    if (name == "5x3") return GridShape::Plane5x3;
    throw Error("unknown grid shape '" + name + "'");
}

namespace {

bool config_less(const HyperConfig& a, const HyperConfig& b) {
    if (a.epochs != b.epochs) return a.epochs < b.epochs;
    if (a.lr_backbone != b.lr_backbone) return a.lr_backbone < b.lr_backbone;
    return a.lr_head < b.lr_head;
}

bool config_equal(const HyperConfig& a, const HyperConfig& b) {
    return a.epochs == b.epochs && a.lr_backbone == b.lr_backbone && a.lr_head == b.lr_head;
}

std::vector<double> dedupe_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::vector<int> epoch_axis(int center_epochs) {
    const int e_max = center_epochs + 10;
    auto round_half_up = [](double x) { return static_cast<int>(std::floor(x + 0.5)); };
    std::vector<int> axis = {round_half_up(e_max / 3.0), round_half_up(2.0 * e_max / 3.0), e_max};
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
    return axis;
}

}  // namespace

ConfigGrid build_grid(const HyperConfig& center, GridShape shape, double spacing) {
    center.validate();
    if (center.epochs < 1) throw Error("build_grid: center epochs must be >= 1");
    if (!(spacing >= 1.0)) throw Error("build_grid: spacing must be >= 1");

    ConfigGrid grid;
    grid.provenance = {center, spacing, shape};

    const std::vector<int> epochs = epoch_axis(center.epochs);

    std::vector<double> lr_b_axis, lr_h_axis;
    if (shape == GridShape::Cube3x3x3) {
        lr_b_axis = dedupe_sorted(
            {center.lr_backbone / spacing, center.lr_backbone, center.lr_backbone * spacing});
        lr_h_axis =
            dedupe_sorted({center.lr_head / spacing, center.lr_head, center.lr_head * spacing});
        if (lr_b_axis.size() < 3 || lr_h_axis.size() < 3) grid.degenerate_axis = true;
    } else {
        lr_b_axis = {center.lr_backbone};
        lr_h_axis = dedupe_sorted({center.lr_head / (spacing * spacing), center.lr_head / spacing,
                                   center.lr_head, center.lr_head * spacing,
                                   center.lr_head * spacing * spacing});
        if (lr_h_axis.size() < 5) grid.degenerate_axis = true;
    }
    if (epochs.size() < 3) grid.degenerate_axis = true;

    for (int e : epochs)
        for (double lb : lr_b_axis)
            for (double lh : lr_h_axis) {
                HyperConfig cfg = center;
                cfg.epochs = e;
                cfg.lr_backbone = lb;
                cfg.lr_head = lh;
                grid.configs.push_back(cfg);
            }
    std::sort(grid.configs.begin(), grid.configs.end(), config_less);
    return grid;
}

ConfigGrid make_grid(std::vector<HyperConfig> configs) {
    if (configs.empty()) throw Error("make_grid: empty config list");
    for (const auto& c : configs) c.validate();
    std::sort(configs.begin(), configs.end(), config_less);
    for (std::size_t i = 1; i < configs.size(); ++i)
        if (config_equal(configs[i - 1], configs[i]))
            throw Error("make_grid: duplicate configuration");
    ConfigGrid grid;
    grid.provenance.center = configs[configs.size() / 2];
    grid.provenance.spacing = 1.0;
    grid.configs = std::move(configs);
    return grid;
}

Matrix fuse_logits(const std::vector<Matrix>& logits) {
    if (logits.empty()) throw Error("fuse_logits: empty list");
    Matrix fused = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (!logits[i].same_shape(fused)) throw Error("fuse_logits: shape mismatch");
        add_inplace(fused, logits[i]);
    }
    scale_inplace(fused, 1.0 / static_cast<double>(logits.size()));
    return fused;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double mx = p(i, 0);
        for (std::size_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) denom += std::exp(p(i, j) - mx);
        for (std::size_t j = 0; j < p.cols(); ++j) p(i, j) = std::exp(p(i, j) - mx) / denom;
    }
    return p;
}

Matrix fuse_probabilities(const std::vector<Matrix>& logits) {
    if (logits.empty()) throw Error("fuse_probabilities: empty list");
    std::vector<Matrix> probs;
    probs.reserve(logits.size());
    for (const auto& m : logits) probs.push_back(softmax_rows(m));
    return fuse_logits(probs);
}

HPEResult run_hpe(Method method, const Backbone& base, const Dataset& dataset, const Task& task,
                  const ConfigGrid& grid, const FitOptions& options,
                  bool fuse_as_probabilities) {
    if (grid.configs.empty()) throw Error("run_hpe: empty grid");
    const SupportSet support = support_of(dataset, task);
    const SupportSet query = query_of(dataset, task);
    if (query.batch.ids.empty()) throw Error("run_hpe: task has no query items");

    HPEResult result;
    result.labels = query.labels;
    result.per_config_logits.resize(grid.size());
    result.per_config_accuracy.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());

    std::vector<Matrix> successful;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            AdaptedClassifier classifier =
                fit_method(base, support, method, grid.configs[i], options);
            Matrix logits = predict_logits(classifier, query.batch);
            result.per_config_accuracy[i] = accuracy(logits, query.labels);
            successful.push_back(logits);
            result.per_config_logits[i] = std::move(logits);
        } catch (const NonFiniteLossError&) {
            result.failed.push_back(i);
        }
    }
    if (successful.empty()) throw Error("run_hpe: every configuration diverged");

    result.fused_logits =
        fuse_as_probabilities ? fuse_probabilities(successful) : fuse_logits(successful);
    result.hpe_accuracy = accuracy(result.fused_logits, query.labels);
    return result;
}

GridMetrics grid_metrics(const std::vector<HPEResult>& results) {
    if (results.empty()) throw Error("grid_metrics: empty result set");
    const std::size_t n_cfg = results[0].per_config_accuracy.size();
    for (const auto& r : results)
        if (r.per_config_accuracy.size() != n_cfg)
            throw Error("grid_metrics: results come from different grids");

    GridMetrics m;
    m.per_config_mean.assign(n_cfg, 0.0);
    std::vector<std::size_t> counts(n_cfg, 0);
    double hpe_sum = 0.0, env_sum = 0.0, sens_sum = 0.0;
    for (const auto& r : results) {
        hpe_sum += r.hpe_accuracy;
        double task_best = 0.0;
        std::vector<double> ok;
        for (std::size_t i = 0; i < n_cfg; ++i) {
            const double a = r.per_config_accuracy[i];
            if (std::isnan(a)) continue;
            m.per_config_mean[i] += a;
            ++counts[i];
            task_best = std::max(task_best, a);
            ok.push_back(a);
        }
        env_sum += task_best;
        if (ok.size() >= 2) {
            double mean = 0.0;
            for (double a : ok) mean += a;
            mean /= static_cast<double>(ok.size());
            double ss = 0.0;
            for (double a : ok) ss += (a - mean) * (a - mean);
            sens_sum += std::sqrt(ss / static_cast<double>(ok.size() - 1));
        }
    }
    for (std::size_t i = 0; i < n_cfg; ++i)
        m.per_config_mean[i] =
            counts[i] ? m.per_config_mean[i] / static_cast<double>(counts[i])
                      : std::numeric_limits<double>::quiet_NaN();

    m.oracle_best_mean = 0.0;
    for (double v : m.per_config_mean)
        if (!std::isnan(v)) m.oracle_best_mean = std::max(m.oracle_best_mean, v);
    const double n_tasks = static_cast<double>(results.size());
    m.hpe_mean = hpe_sum / n_tasks;
    m.penalty = m.oracle_best_mean - m.hpe_mean;
    m.sensitivity = sens_sum / n_tasks;
    m.per_task_oracle_mean = env_sum / n_tasks;
    return m;
}

namespace {

void apply_axis_value(HyperConfig& cfg, const std::string& name, double value) {
    if (name == "lr_backbone") cfg.lr_backbone = value;
    else if (name == "lr_head") cfg.lr_head = value;
    else if (name == "epochs") cfg.epochs = static_cast<int>(std::llround(value));
    else throw Error("unknown hyperparameter axis '" + name + "'");
}

}  // namespace

SweepResult sweep_hyper_surface(Method method, const Backbone& base, const Dataset& dataset,
                                const Task& task, const SweepAxis& axis1, const SweepAxis& axis2,
                                const HyperConfig& fixed, const FitOptions& options) {
    if (axis1.values.empty() || axis2.values.empty()) throw Error("sweep: empty axis");
    if (axis1.name == axis2.name) throw Error("sweep: axes must differ");
    for (double v : axis1.values)
        if (!(v > 0.0)) throw Error("sweep: axis values must be positive");
    for (double v : axis2.values)
        if (!(v > 0.0)) throw Error("sweep: axis values must be positive");

    const SupportSet support = support_of(dataset, task);
    const SupportSet query = query_of(dataset, task);

    SweepResult result;
    result.axis1 = axis1;
    result.axis2 = axis2;
    result.acc = Matrix(axis1.values.size(), axis2.values.size());
    result.failed.assign(axis1.values.size() * axis2.values.size(), 0);

    for (std::size_t i = 0; i < axis1.values.size(); ++i)
        for (std::size_t j = 0; j < axis2.values.size(); ++j) {
            HyperConfig cfg = fixed;
            apply_axis_value(cfg, axis1.name, axis1.values[i]);
            apply_axis_value(cfg, axis2.name, axis2.values[j]);
            try {
                AdaptedClassifier classifier = fit_method(base, support, method, cfg, options);
                result.acc(i, j) = accuracy(predict_logits(classifier, query.batch), query.labels);
            } catch (const NonFiniteLossError&) {
                result.failed[i * axis2.values.size() + j] = 1;
            }
        }
    return result;
}

HyperConfig cross_validate_select(Method method, const Backbone& base, const Dataset& dataset,
                                  const Task& task, const ConfigGrid& grid, int folds,
                                  const FitOptions& options) {
    if (grid.configs.empty()) throw Error("cross-validation: empty grid");
    if (folds < 2) throw Error("cross-validation: folds must be >= 2");
    if (grid.size() == 1) return grid.configs[0];

    const SupportSet support = support_of(dataset, task);

    // per-class positions, in support order
    std::vector<std::vector<std::size_t>> by_class(task.n_cls());
    for (std::size_t i = 0; i < support.labels.size(); ++i)
        by_class[static_cast<std::size_t>(support.labels[i])].push_back(i);

    std::size_t min_count = std::numeric_limits<std::size_t>::max();
    for (const auto& members : by_class)
        if (!members.empty()) min_count = std::min(min_count, members.size());
    if (min_count < 2)
        throw CvInfeasibleError("a class has a single support item; nothing to hold out");

    const std::size_t l = std::min<std::size_t>(static_cast<std::size_t>(folds), min_count);

    // stratified assignment: within each class, fold = position mod l
    std::vector<std::size_t> fold_of(support.labels.size(), 0);
    for (const auto& members : by_class)
        for (std::size_t k = 0; k < members.size(); ++k) fold_of[members[k]] = k % l;

    auto subset = [&](std::size_t fold, bool in_fold) {
        SupportSet s;
        s.n_cls = support.n_cls;
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < support.labels.size(); ++i)
            if ((fold_of[i] == fold) == in_fold) keep.push_back(i);
        s.batch.inputs = Matrix(keep.size(), support.batch.inputs.cols());
        for (std::size_t k = 0; k < keep.size(); ++k) {
            s.batch.ids.push_back(support.batch.ids[keep[k]]);
            s.labels.push_back(support.labels[keep[k]]);
            for (std::size_t j = 0; j < support.batch.inputs.cols(); ++j)
                s.batch.inputs(k, j) = support.batch.inputs(keep[k], j);
        }
        return s;
    };

    double best_score = -1.0;
    std::size_t best_index = 0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        double score_sum = 0.0;
        for (std::size_t fold = 0; fold < l; ++fold) {
            SupportSet train = subset(fold, false);
            SupportSet val = subset(fold, true);
            try {
                AdaptedClassifier classifier =
                    fit_method(base, train, method, grid.configs[c], options);
                score_sum += accuracy(predict_logits(classifier, val.batch), val.labels);
            } catch (const NonFiniteLossError&) {
                // diverged fold scores zero
            }
        }
        const double score = score_sum / static_cast<double>(l);
        // strict > keeps the first (canonically smallest) config on ties
        if (score > best_score) {
            best_score = score;
            best_index = c;
        }
    }
    return grid.configs[best_index];
}

}  // namespace fewtrans
