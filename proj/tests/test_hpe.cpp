#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fewtrans/hpe.hpp"
#include "fewtrans/rng.hpp"
#include "fewtrans/stats.hpp"

using namespace fewtrans;

namespace {

bool approx_rel(double a, double b, double tol = 1e-12) {
    return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1e-300});
}

struct HpeFixture {
    DatasetRegistry registry;
    DatasetHandle handle;
    std::unique_ptr<FrozenEmbeddingBackbone> backbone;
    ClassSplit split;

    HpeFixture(double separation = 2.0, int classes = 10, int items = 30) {
        SyntheticSpec spec;
        spec.name = "hpe_fix";
        spec.n_classes = classes;
        spec.items_per_class = items;
        spec.dim = 12;
        spec.separation = separation;
        handle = generate_synthetic_dataset(registry, spec, 17);
        backbone = frozen_embedding_backbone(handle->embeddings());
        split = whole_dataset_split(handle);
    }

    Task task_at(int index, int fixed_shot = 0) const {
        TaskStreamSpec spec;
        spec.run_seed = 23;
        spec.way_lo = 5;
        spec.way_hi = 5;
        spec.n_tasks = index + 1;
        spec.fixed_shot = fixed_shot;
        return sample_task(handle, split, spec, index);
    }
};

}  // namespace

TEST_CASE("build_grid: published expansion rules") {
    SUBCASE("3x3x3 around (1e-5, 1e-2, 20) at spacing 5") {
        const ConfigGrid grid = build_grid({1e-5, 1e-2, 20, ""}, GridShape::Cube3x3x3, 5.0);
        REQUIRE(grid.size() == 27);
        CHECK(!grid.degenerate_axis);

        std::vector<double> lr_b, lr_h;
        std::vector<int> epochs;
        for (const auto& c : grid.configs) {
            lr_b.push_back(c.lr_backbone);
            lr_h.push_back(c.lr_head);
            epochs.push_back(c.epochs);
        }
        auto uniq = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            return v;
        };
        const auto b_axis = uniq(lr_b);
        REQUIRE(b_axis.size() == 3);
        CHECK(approx_rel(b_axis[0], 2e-6));
        CHECK(approx_rel(b_axis[1], 1e-5));
        CHECK(approx_rel(b_axis[2], 5e-5));
        const auto h_axis = uniq(lr_h);
        REQUIRE(h_axis.size() == 3);
        CHECK(approx_rel(h_axis[0], 2e-3));
        CHECK(approx_rel(h_axis[1], 1e-2));
        CHECK(approx_rel(h_axis[2], 5e-2));
        std::sort(epochs.begin(), epochs.end());
        epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
        CHECK(epochs == std::vector<int>{10, 20, 30});

        // canonical order: lexicographic in (epochs, lr_backbone, lr_head)
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const auto& a = grid.configs[i - 1];
            const auto& b = grid.configs[i];
            const bool ordered = a.epochs < b.epochs ||
                                 (a.epochs == b.epochs && a.lr_backbone < b.lr_backbone) ||
                                 (a.epochs == b.epochs && a.lr_backbone == b.lr_backbone &&
                                  a.lr_head < b.lr_head);
            CHECK(ordered);
        }
    }

    SUBCASE("unit spacing collapses the lr axes: N = distinct epoch count") {
        const ConfigGrid grid = build_grid({1e-5, 1e-2, 20, ""}, GridShape::Cube3x3x3, 1.0);
        CHECK(grid.size() == 3);
        CHECK(grid.degenerate_axis);
    }

    SUBCASE("5x3 plane expands the head rate to five points") {
        const ConfigGrid grid = build_grid({1e-5, 1e-3, 20, ""}, GridShape::Plane5x3, 5.0);
        REQUIRE(grid.size() == 15);
        std::vector<double> lr_h;
        for (const auto& c : grid.configs) {
            lr_h.push_back(c.lr_head);
            CHECK(c.lr_backbone == 1e-5);
        }
        std::sort(lr_h.begin(), lr_h.end());
        lr_h.erase(std::unique(lr_h.begin(), lr_h.end()), lr_h.end());
        REQUIRE(lr_h.size() == 5);
        CHECK(approx_rel(lr_h[0], 4e-5));
        CHECK(approx_rel(lr_h[1], 2e-4));
        CHECK(approx_rel(lr_h[2], 1e-3));
        CHECK(approx_rel(lr_h[3], 5e-3));
        CHECK(approx_rel(lr_h[4], 2.5e-2));
    }

    SUBCASE("spacings 3, 5, 10 all build without degenerate collapse") {
        for (double s : {3.0, 5.0, 10.0}) {
            const ConfigGrid grid = build_grid({1e-4, 1e-2, 15, ""}, GridShape::Cube3x3x3, s);
            CHECK(grid.size() == 27);
            CHECK(!grid.degenerate_axis);
        }
    }

    SUBCASE("epoch axis rounding: one third and two thirds of center+10, half-up") {
        const ConfigGrid grid = build_grid({1e-4, 1e-2, 6, ""}, GridShape::Cube3x3x3, 1.0);
        std::vector<int> epochs;
        for (const auto& c : grid.configs) epochs.push_back(c.epochs);
        std::sort(epochs.begin(), epochs.end());
        epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
        // e_max = 16 -> {round(5.33), round(10.67), 16} = {5, 11, 16}
        CHECK(epochs == std::vector<int>{5, 11, 16});
    }
}

TEST_CASE("fuse_logits") {
    Matrix m(4, 3);
    TaskRng rng(3, 0, RngPurpose::kTest);
    for (double& v : m.values()) v = rng.normal();

    SUBCASE("single matrix is its own fusion") { CHECK(fuse_logits({m}) == m); }

    SUBCASE("m and -m cancel") {
        Matrix neg = m;
        scale_inplace(neg, -1.0);
        const Matrix fused = fuse_logits({m, neg});
        for (double v : fused.values()) CHECK(v == 0.0);
    }

    SUBCASE("three random matrices match the brute-force mean at 1e-12") {
        std::vector<Matrix> mats;
        for (std::uint64_t k = 0; k < 3; ++k) {
            Matrix x(4, 3);
            TaskRng r(k, 9, RngPurpose::kTest);
            for (double& v : x.values()) v = r.normal();
            mats.push_back(std::move(x));
        }
        const Matrix fused = fuse_logits(mats);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                const double direct = (mats[0](i, j) + mats[1](i, j) + mats[2](i, j)) / 3.0;
                CHECK(std::fabs(fused(i, j) - direct) < 1e-12);
            }
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(fuse_logits({}), Error);
        CHECK_THROWS_AS(fuse_logits({m, Matrix(2, 2)}), Error);
    }

    SUBCASE("two-config arithmetic from the protocol definition") {
        Matrix a(1, 2), b(1, 2);
        a(0, 0) = 2.0;
        a(0, 1) = 0.0;
        b(0, 0) = 0.0;
        b(0, 1) = 1.0;
        const Matrix fused = fuse_logits({a, b});
        CHECK(fused(0, 0) == doctest::Approx(1.0));
        CHECK(fused(0, 1) == doctest::Approx(0.5));
        // argmax picks class 0
        std::vector<int> label = {0};
        CHECK(accuracy(fused, label) == doctest::Approx(1.0));
    }
}

TEST_CASE("run_hpe: single-member grid reduces to a plain evaluation") {
    HpeFixture fx;
    const Task task = fx.task_at(0);
    ConfigGrid grid = make_grid({{1e-3, 1e-2, 15, ""}});
    const HPEResult result =
        run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, {5});
    REQUIRE(result.per_config_accuracy.size() == 1);
    CHECK(result.hpe_accuracy == doctest::Approx(result.per_config_accuracy[0]));
    CHECK(result.fused_logits == result.per_config_logits[0]);
    CHECK(result.failed.empty());
}

TEST_CASE("run_hpe: fused logits equal the brute-force mean; permuting configs changes nothing") {
    HpeFixture fx;
    const Task task = fx.task_at(1);

    std::vector<HyperConfig> configs = {
        {1e-3, 1e-2, 10, ""}, {1e-3, 5e-2, 10, ""}, {1e-3, 2e-3, 10, ""},
        {1e-3, 1e-2, 20, ""}, {1e-3, 5e-2, 20, ""},
    };
    const ConfigGrid grid = make_grid(configs);
    const HPEResult result =
        run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, {7});

    // brute-force mean over per-config logits
    for (std::size_t i = 0; i < result.fused_logits.rows(); ++i)
        for (std::size_t j = 0; j < result.fused_logits.cols(); ++j) {
            double sum = 0.0;
            for (const auto& m : result.per_config_logits) sum += m(i, j);
            CHECK(std::fabs(result.fused_logits(i, j) - sum / 5.0) < 1e-12);
        }

    // shuffled declaration order canonicalizes to the same grid
    std::reverse(configs.begin(), configs.end());
    const ConfigGrid reordered = make_grid(configs);
    const HPEResult again =
        run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, reordered, {7});
    CHECK(again.fused_logits == result.fused_logits);
    CHECK(again.per_config_accuracy == result.per_config_accuracy);
    CHECK(again.hpe_accuracy == doctest::Approx(result.hpe_accuracy));
}

TEST_CASE("probability fusion is a distinct, off-by-default variant") {
    HpeFixture fx;
    const Task task = fx.task_at(5);
    const ConfigGrid grid =
        make_grid({{1e-3, 1e-2, 10, ""}, {1e-3, 5e-2, 10, ""}, {1e-3, 1e-2, 20, ""}});

    const HPEResult raw = run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, {4});
    const HPEResult prob =
        run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, {4}, true);

    // probability fusion averages softmax rows: each fused row sums to one
    for (std::size_t i = 0; i < prob.fused_logits.rows(); ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < prob.fused_logits.cols(); ++j)
            row_sum += prob.fused_logits(i, j);
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(!(raw.fused_logits == prob.fused_logits));
    // per-config accuracies are fusion-independent
    CHECK(raw.per_config_accuracy == prob.per_config_accuracy);
}

TEST_CASE("make_grid rejects duplicates") {
    CHECK_THROWS_AS(make_grid({{1e-3, 1e-2, 10, ""}, {1e-3, 1e-2, 10, ""}}), Error);
    CHECK_THROWS_AS(make_grid({}), Error);
}

TEST_CASE("grid_metrics") {
    SUBCASE("degenerate grid: all configs identical => sensitivity 0, penalty 0") {
        std::vector<HPEResult> results;
        for (int t = 0; t < 5; ++t) {
            HPEResult r;
            r.per_config_accuracy = {0.7, 0.7, 0.7};
            r.hpe_accuracy = 0.7;
            results.push_back(r);
        }
        const GridMetrics m = grid_metrics(results);
        CHECK(m.sensitivity == doctest::Approx(0.0));
        CHECK(m.penalty == doctest::Approx(0.0));
        CHECK(m.oracle_best_mean == doctest::Approx(0.7));
    }

    SUBCASE("dominant config vs chance config: positive penalty") {
        std::vector<HPEResult> results;
        for (int t = 0; t < 8; ++t) {
            HPEResult r;
            // config 0 dominates; config 1 is chance; the fused score lands between
            r.per_config_accuracy = {0.9, 0.2};
            r.hpe_accuracy = 0.6;
            results.push_back(r);
        }
        const GridMetrics m = grid_metrics(results);
        CHECK(m.oracle_best_mean == doctest::Approx(0.9));
        CHECK(m.penalty == doctest::Approx(0.3));
        CHECK(m.sensitivity > 0.0);
        CHECK(m.per_task_oracle_mean == doctest::Approx(0.9));
    }

    SUBCASE("volatile methods pay a larger penalty (constructed correlation)") {
        // five synthetic "methods" with growing dispersion and penalty
        std::vector<double> sensitivities, penalties;
        for (int k = 0; k < 5; ++k) {
            std::vector<HPEResult> results;
            const double spread = 0.05 + 0.08 * k;
            for (int t = 0; t < 10; ++t) {
                HPEResult r;
                r.per_config_accuracy = {0.8, 0.8 - spread, 0.8 - 2.0 * spread};
                r.hpe_accuracy = 0.8 - 0.35 * spread;
                results.push_back(r);
            }
            const GridMetrics m = grid_metrics(results);
            sensitivities.push_back(m.sensitivity);
            penalties.push_back(m.penalty);
        }
        CHECK(pearson(sensitivities, penalties).r > 0.5);
    }

    SUBCASE("empty result set") { CHECK_THROWS_AS(grid_metrics({}), Error); }
}

TEST_CASE("hyperparameter surface sweep") {
    HpeFixture fx(3.0);
    const Task task = fx.task_at(2);

    SUBCASE("1x1 sweep equals a direct fit") {
        const SweepAxis a1{"lr_head", {1e-2}};
        const SweepAxis a2{"epochs", {12}};
        const SweepResult sweep = sweep_hyper_surface(Method::LinearProbe, *fx.backbone,
                                                      *fx.handle, task, a1, a2, {0.0, 1.0, 1, ""},
                                                      {3});
        const SupportSet support = support_of(*fx.handle, task);
        const SupportSet query = query_of(*fx.handle, task);
        const AdaptedClassifier direct =
            fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 12, ""}, {3});
        CHECK(sweep.acc(0, 0) ==
              doctest::Approx(accuracy(predict_logits(direct, query.batch), query.labels)));
    }

    SUBCASE("transposing the axes transposes the matrix") {
        const SweepAxis a1{"lr_head", {1e-3, 1e-2, 1e-1}};
        const SweepAxis a2{"epochs", {5, 15}};
        const SweepResult s12 = sweep_hyper_surface(Method::LinearProbe, *fx.backbone, *fx.handle,
                                                    task, a1, a2, {0.0, 1.0, 1, ""}, {3});
        const SweepResult s21 = sweep_hyper_surface(Method::LinearProbe, *fx.backbone, *fx.handle,
                                                    task, a2, a1, {0.0, 1.0, 1, ""}, {3});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) CHECK(s12.acc(i, j) == s21.acc(j, i));
    }

    SUBCASE("axis validation") {
        CHECK_THROWS_AS(sweep_hyper_surface(Method::LinearProbe, *fx.backbone, *fx.handle, task,
                                            {"lr_head", {}}, {"epochs", {5}}, {0.0, 1.0, 1, ""}),
                        Error);
        CHECK_THROWS_AS(sweep_hyper_surface(Method::LinearProbe, *fx.backbone, *fx.handle, task,
                                            {"lr_head", {1e-2}}, {"lr_head", {1e-3}},
                                            {0.0, 1.0, 1, ""}),
                        Error);
    }
}

TEST_CASE("sweep reproduces an unstable region for hot backbone rates") {
    // pretrained mlp so the stable region is genuinely good
    DatasetRegistry registry;
    SyntheticSpec sspec;
    sspec.name = "sweep_mlp";
    sspec.n_classes = 8;
    sspec.items_per_class = 30;
    sspec.dim = 12;
    sspec.separation = 3.0;
    auto handle = generate_synthetic_dataset(registry, sspec, 29);
    MlpSpec mspec;
    mspec.dim_in = 12;
    mspec.hidden = {10};
    mspec.feature_dim = 8;
    auto backbone = reference_backbone(mspec, 4);
    std::vector<std::string> classes;
    for (std::size_t c = 0; c < handle->n_classes(); ++c)
        classes.push_back(handle->class_at(c).id);
    pretrain_reference(*backbone, *handle, classes, 40, 1e-2);

    const ClassSplit split = whole_dataset_split(handle);
    TaskStreamSpec tspec;
    tspec.run_seed = 41;
    tspec.way_lo = 5;
    tspec.way_hi = 5;
    tspec.fixed_shot = 5;
    const Task task = sample_task(handle, split, tspec, 0);

    const SweepAxis a1{"lr_backbone", {1e-4, 1e-2, 3.0, 30.0}};
    const SweepAxis a2{"lr_head", {1e-3, 1e-2}};
    const SweepResult sweep = sweep_hyper_surface(Method::FullFinetune, *backbone, *handle, task,
                                                  a1, a2, {1e-3, 1e-2, 25, ""}, {6});
    double best = 0.0, worst = 1.0;
    for (std::size_t i = 0; i < a1.values.size(); ++i)
        for (std::size_t j = 0; j < a2.values.size(); ++j) {
            best = std::max(best, sweep.acc(i, j));
            worst = std::min(worst, sweep.acc(i, j));
        }
    CHECK(best - worst >= 0.10);
}

TEST_CASE("cross-validation selector") {
    HpeFixture fx(2.0);

    SUBCASE("one-shot tasks are cv-infeasible") {
        const Task task = fx.task_at(3, /*fixed_shot=*/1);
        const ConfigGrid grid = make_grid({{0.0, 1e-2, 10, ""}, {0.0, 1e-1, 10, ""}});
        CHECK_THROWS_AS(cross_validate_select(Method::LinearProbe, *fx.backbone, *fx.handle, task,
                                              grid, 5),
                        CvInfeasibleError);
    }

    SUBCASE("single-config grids short-circuit") {
        const Task task = fx.task_at(3, 1);  // even a 1-shot task works here
        const ConfigGrid grid = make_grid({{0.0, 1e-2, 10, ""}});
        const HyperConfig picked =
            cross_validate_select(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, 5);
        CHECK(picked.lr_head == 1e-2);
    }

    SUBCASE("selection is deterministic and returns a grid member") {
        const Task task = fx.task_at(4, 4);
        const ConfigGrid grid = build_grid({0.0, 1e-2, 10, ""}, GridShape::Plane5x3, 5.0);
        const HyperConfig a =
            cross_validate_select(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, 5, {2});
        const HyperConfig b =
            cross_validate_select(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, 5, {2});
        CHECK(a.lr_head == b.lr_head);
        CHECK(a.epochs == b.epochs);
        bool member = false;
        for (const auto& c : grid.configs)
            member = member || (c.lr_head == a.lr_head && c.epochs == a.epochs);
        CHECK(member);
    }
}

TEST_CASE("grid-spacing stability: hpe means within 3 points across spacings 3/5/10") {
    HpeFixture fx(2.5, 12, 40);
    std::vector<double> means;
    for (double spacing : {3.0, 5.0, 10.0}) {
        const ConfigGrid grid = build_grid({1e-4, 1e-2, 15, ""}, GridShape::Cube3x3x3, spacing);
        double sum = 0.0;
        const int n_tasks = 30;
        for (int t = 0; t < n_tasks; ++t) {
            const Task task = fx.task_at(t);
            sum += run_hpe(Method::LinearProbe, *fx.backbone, *fx.handle, task, grid, {11})
                       .hpe_accuracy;
        }
        means.push_back(sum / n_tasks);
    }
    for (double m : means)
        for (double other : means) CHECK(std::fabs(m - other) <= 0.03);
}
