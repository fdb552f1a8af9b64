#include <doctest.h>

#include <cmath>

#include "fewtrans/optimizer.hpp"
#include "fewtrans/rng.hpp"
#include "fewtrans/transfer.hpp"

using namespace fewtrans;

namespace {

struct Fixture {
    DatasetRegistry registry;
    DatasetHandle handle;
    std::unique_ptr<MlpBackbone> backbone;

    explicit Fixture(double separation = 4.0, int classes = 4, int items = 20,
                     std::uint64_t seed = 3) {
        SyntheticSpec spec;
        spec.name = "fix";
        spec.n_classes = classes;
        spec.items_per_class = items;
        spec.dim = 12;
        spec.separation = separation;
        handle = generate_synthetic_dataset(registry, spec, seed);
        MlpSpec mspec;
        mspec.dim_in = 12;
        mspec.hidden = {10};
        mspec.feature_dim = 8;
        backbone = reference_backbone(mspec, 5);
        std::vector<std::string> all_classes;
        for (std::size_t c = 0; c < handle->n_classes(); ++c)
            all_classes.push_back(handle->class_at(c).id);
        pretrain_reference(*backbone, *handle, all_classes, 40, 1e-2);
    }

    // deterministic hand-rolled task over the first `ways` classes
    Task make_task(int ways, int shots, int queries) const {
        Task task;
        task.dataset = handle->name();
        for (int c = 0; c < ways; ++c) {
            const ClassEntry& cls = handle->class_at(static_cast<std::size_t>(c));
            task.class_ids.push_back(cls.id);
            for (int s = 0; s < shots; ++s)
                task.support.push_back({cls.items[static_cast<std::size_t>(s)].id, c});
            for (int q = 0; q < queries; ++q)
                task.query.push_back({cls.items[static_cast<std::size_t>(shots + q)].id, c});
        }
        return task;
    }
};

double support_accuracy(const Fixture& fx, const AdaptedClassifier& cls, const Task& task) {
    const SupportSet support = support_of(*fx.handle, task);
    return accuracy(predict_logits(cls, support.batch), support.labels);
}

}  // namespace

TEST_CASE("linear probe: convergence on separable data, frozen backbone, zero-epoch identity") {
    Fixture fx;
    const Task task = fx.make_task(2, 5, 10);
    const SupportSet support = support_of(*fx.handle, task);

    SUBCASE("support accuracy reaches 1.0 after 100 epochs") {
        const AdaptedClassifier cls =
            fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 100, ""});
        CHECK(support_accuracy(fx, cls, task) == doctest::Approx(1.0));
    }

    SUBCASE("epochs=0 keeps the zero head: all logits zero") {
        const AdaptedClassifier cls = fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 0, ""});
        const Matrix logits = predict_logits(cls, support.batch);
        for (double v : logits.values()) CHECK(v == 0.0);
    }

    SUBCASE("backbone weights untouched") {
        const Snapshot before = fx.backbone->snapshot();
        const AdaptedClassifier cls =
            fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 50, ""});
        const Snapshot after = cls.backbone->snapshot();
        REQUIRE(before.size() == after.size());
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(before[i].value == after[i].value);
        CHECK(cls.trainable.empty());
    }
}

TEST_CASE("full fine-tune") {
    Fixture fx;
    const Task task = fx.make_task(3, 4, 8);
    const SupportSet support = support_of(*fx.handle, task);

    SUBCASE("lr_backbone = 0 degenerates to the linear probe") {
        const AdaptedClassifier ft =
            fit_full_finetune(*fx.backbone, support, {0.0, 1e-2, 30, ""}, {42});
        const AdaptedClassifier lp =
            fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 30, ""}, {42});
        CHECK(ft.head_w == lp.head_w);
        CHECK(ft.head_b == lp.head_b);
        const Snapshot fts = ft.backbone->snapshot(), base = fx.backbone->snapshot();
        for (std::size_t i = 0; i < fts.size(); ++i) CHECK(fts[i].value == base[i].value);
    }

    SUBCASE("parameter shift grows with the backbone learning rate") {
        auto total_shift = [&](double lr) {
            const AdaptedClassifier cls =
                fit_full_finetune(*fx.backbone, support, {lr, 1e-2, 30, ""}, {42});
            const Snapshot& before = cls.initial_state;
            const Snapshot after = cls.backbone->snapshot();
            double sum = 0.0;
            for (std::size_t i = 0; i < before.size(); ++i) {
                const auto& b = before[i].value.values();
                const auto& a = after[i].value.values();
                double sq = 0.0;
                for (std::size_t k = 0; k < b.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
                CHECK(sq > 0.0);  // every tensor moved at least a little
                sum += std::sqrt(sq);
            }
            return sum;
        };
        CHECK(total_shift(1e-5) < total_shift(1e-2));
    }

    SUBCASE("fixed seeds give identical serializations") {
        const AdaptedClassifier a =
            fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, 20, ""}, {7});
        const AdaptedClassifier b =
            fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, 20, ""}, {7});
        CHECK(serialize_classifier(a) == serialize_classifier(b));
    }
}

TEST_CASE("peft: bias-only masks all non-bias weights exactly") {
    Fixture fx;
    const Task task = fx.make_task(3, 5, 8);
    const SupportSet support = support_of(*fx.handle, task);
    const AdaptedClassifier cls =
        fit_peft(*fx.backbone, support, Method::BiasOnly, {1e-2, 1e-2, 40, ""});

    const Snapshot& before = cls.initial_state;
    const Snapshot after = cls.backbone->snapshot();
    bool some_bias_moved = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const bool is_bias = before[i].name.size() > 2 &&
                             before[i].name.compare(before[i].name.size() - 2, 2, ".b") == 0;
        if (is_bias) {
            if (!(before[i].value == after[i].value)) some_bias_moved = true;
        } else {
            CHECK(before[i].value == after[i].value);
        }
    }
    CHECK(some_bias_moved);
}

TEST_CASE("peft: low-rank starts as the identity augmentation") {
    Fixture fx;
    const Task task = fx.make_task(2, 4, 10);
    const SupportSet support = support_of(*fx.handle, task);
    const SupportSet query = query_of(*fx.handle, task);

    const AdaptedClassifier lora =
        fit_peft(*fx.backbone, support, Method::LowRank, {1e-3, 1e-2, 0, ""}, {9});
    const AdaptedClassifier probe =
        fit_linear_probe(*fx.backbone, support, {1e-3, 1e-2, 0, ""}, {9});
    CHECK(predict_logits(lora, query.batch) == predict_logits(probe, query.batch));
}

TEST_CASE("low-rank single-step gradients on a one-layer linear backbone") {
    // one dense layer, no hidden: features = W_eff x + b
    MlpSpec mspec;
    mspec.dim_in = 3;
    mspec.hidden = {};
    mspec.feature_dim = 2;
    MlpBackbone bb(mspec, 11);
    bb.attach_low_rank(2, 2.0, 1);  // scale = alpha/rank = 1

    Batch batch;
    batch.ids = {"p", "q"};
    batch.inputs = Matrix(2, 3);
    double fill = 0.3;
    for (double& v : batch.inputs.values()) v = (fill += 0.17);

    Matrix g(2, 2);
    g(0, 0) = 0.5;
    g(0, 1) = -0.25;
    g(1, 0) = 0.125;
    g(1, 1) = 1.0;

    auto params = bb.named_params();
    REQUIRE(params.size() == 4);  // W, b, lora.A, lora.B
    const Matrix a_before = *params[2].second;
    const Matrix b_before = *params[3].second;
    for (double v : b_before.values()) REQUIRE(v == 0.0);

    const std::vector<Matrix> grads = bb.backward(batch, g);

    // hand-computed: dW_eff = g' x ; dA = scale * B' dW_eff = 0 since B = 0 ;
    // dB = scale * dW_eff A'
    Matrix dw(2, 3);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t n = 0; n < 2; ++n) dw(o, i) += g(n, o) * batch.inputs(n, i);
    for (double v : grads[2].values()) CHECK(v == 0.0);  // dA vanishes at B = 0
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t r = 0; r < 2; ++r) {
            double expect = 0.0;
            for (std::size_t i = 0; i < 3; ++i) expect += dw(o, i) * a_before(r, i);
            CHECK(grads[3](o, r) == doctest::Approx(expect).epsilon(1e-12));
        }

    // one Adam step: A is a zero-gradient fixed point, B moves
    AdamOptimizer opt;
    opt.add_param(params[2].second, 0.1);
    opt.add_param(params[3].second, 0.1);
    opt.step({grads[2], grads[3]});
    CHECK(*params[2].second == a_before);
    CHECK(!(*params[3].second == b_before));
}

TEST_CASE("peft: adapter trains only adapter parameters") {
    Fixture fx;
    const Task task = fx.make_task(3, 4, 8);
    const SupportSet support = support_of(*fx.handle, task);
    const AdaptedClassifier cls =
        fit_peft(*fx.backbone, support, Method::Adapter, {1e-2, 1e-2, 30, ""}, {13});

    const Snapshot& before = cls.initial_state;
    const Snapshot after = cls.backbone->snapshot();
    bool adapter_moved = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const bool is_adapter = before[i].name.find(".adapter.") != std::string::npos;
        if (is_adapter) {
            if (!(before[i].value == after[i].value)) adapter_moved = true;
        } else {
            CHECK(before[i].value == after[i].value);
        }
    }
    CHECK(adapter_moved);
}

TEST_CASE("peft on a frozen backbone is an unsupported pairing") {
    EmbeddingTable table;
    table.dim = 2;
    table.rows = {{"a", {0.f, 1.f}}, {"b", {1.f, 0.f}}};
    auto frozen = frozen_embedding_backbone(table);
    SupportSet support;
    support.n_cls = 2;
    support.batch.ids = {"a", "b"};
    support.batch.inputs = Matrix(2, 0);
    support.labels = {0, 1};
    CHECK_THROWS_WITH_AS(fit_peft(*frozen, support, Method::LowRank, {1e-3, 1e-2, 5, ""}),
                         doctest::Contains("not supported"), Error);
}

TEST_CASE("full fine-tune on a frozen backbone equals the linear probe") {
    Fixture fx;
    const Task task = fx.make_task(3, 5, 10);
    auto frozen = frozen_embedding_backbone(fx.handle->embeddings());
    const SupportSet support = support_of(*fx.handle, task);
    const AdaptedClassifier ft = fit_full_finetune(*frozen, support, {1e-3, 1e-2, 40, ""}, {3});
    const AdaptedClassifier lp = fit_linear_probe(*frozen, support, {1e-3, 1e-2, 40, ""}, {3});
    CHECK(ft.head_w == lp.head_w);
    CHECK(ft.head_b == lp.head_b);
}

TEST_CASE("predict_logits: purity, memorization, tie-breaking") {
    Fixture fx;
    SUBCASE("pure function of classifier state") {
        const Task task = fx.make_task(2, 3, 6);
        const SupportSet support = support_of(*fx.handle, task);
        const SupportSet query = query_of(*fx.handle, task);
        const AdaptedClassifier cls = fit_linear_probe(*fx.backbone, support, {0.0, 1e-2, 25, ""});
        CHECK(predict_logits(cls, query.batch) == predict_logits(cls, query.batch));
    }
    SUBCASE("single-shot task memorizes its own support") {
        const Task task = fx.make_task(3, 1, 4);
        const SupportSet support = support_of(*fx.handle, task);
        const AdaptedClassifier cls =
            fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, 150, ""});
        CHECK(support_accuracy(fx, cls, task) == doctest::Approx(1.0));
    }
    SUBCASE("argmax ties break toward the lowest class index") {
        Matrix logits(2, 3, 0.0);
        logits(1, 1) = 1.0;
        logits(1, 2) = 1.0;
        CHECK(accuracy(logits, {0, 1}) == doctest::Approx(1.0));
        CHECK(accuracy(logits, {1, 2}) == doctest::Approx(0.0));
    }
}

TEST_CASE("support accuracy trends upward in epochs on separable tasks") {
    Fixture fx(5.0);
    const Task task = fx.make_task(4, 5, 5);
    const SupportSet support = support_of(*fx.handle, task);
    double prev = -1.0;
    for (int epochs : {10, 50, 200}) {
        const AdaptedClassifier cls =
            fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, epochs, ""}, {21});
        const double acc = support_accuracy(fx, cls, task);
        CHECK(acc >= prev - 0.02);
        prev = acc;
    }
    CHECK(prev == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("nearest-class-mean baseline beats chance on separable data") {
    Fixture fx(5.0);
    const Task task = fx.make_task(4, 5, 10);
    const double acc = ncm_accuracy(*fx.backbone, *fx.handle, task);
    CHECK(acc > 0.5);
}

TEST_CASE("divergence raises the defined non-finite-loss error") {
    Fixture fx;
    const Task task = fx.make_task(3, 5, 5);
    const SupportSet support = support_of(*fx.handle, task);
    // a learning rate near the double limit overflows the head weights, and
    // with them the loss, within a few epochs
    CHECK_THROWS_AS(fit_full_finetune(*fx.backbone, support, {1e307, 1e307, 60, ""}),
                    NonFiniteLossError);
}

TEST_CASE("minibatch knob: deterministic and still learns") {
    Fixture fx;
    const Task task = fx.make_task(3, 6, 6);
    const SupportSet support = support_of(*fx.handle, task);
    FitOptions options;
    options.seed = 5;
    options.batch_size = 4;
    const AdaptedClassifier a =
        fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, 60, ""}, options);
    const AdaptedClassifier b =
        fit_full_finetune(*fx.backbone, support, {1e-3, 1e-2, 60, ""}, options);
    CHECK(serialize_classifier(a) == serialize_classifier(b));
    CHECK(support_accuracy(fx, a, task) >= 0.9);
}
