#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fewtrans/bundled.hpp"
#include "fewtrans/mechanism.hpp"
#include "fewtrans/rng.hpp"
#include "fewtrans/stats.hpp"
#include "fewtrans/transfer.hpp"

using namespace fewtrans;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    TaskRng rng(seed, rows + cols, RngPurpose::kTest);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

// orthonormal square matrix via Gram-Schmidt on a random one
Matrix random_orthogonal(std::size_t n, std::uint64_t seed) {
    Matrix a = random_matrix(n, n, seed);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) dot += a(i, k) * a(j, k);
            for (std::size_t k = 0; k < n; ++k) a(i, k) -= dot * a(j, k);
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < n; ++k) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < n; ++k) a(i, k) /= norm;
    }
    return a;
}

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("delta_w_norms") {
    Snapshot before = {{"layer0.W", Matrix(2, 2, 1.0)}, {"layer0.b", Matrix(1, 2, 0.0)}};
    SUBCASE("identity gives all zeros") {
        const DeltaWReport report =
            delta_w_norms(before, before, default_block_map(before), {"layer0.W"});
        for (const auto& e : report.per_weight) CHECK(e.l2 == 0.0);
        CHECK(report.per_block.at("layer0") == 0.0);
    }
    SUBCASE("a (3,4) shift has norm 5") {
        Snapshot after = before;
        after[1].value(0, 0) = 3.0;
        after[1].value(0, 1) = 4.0;
        const DeltaWReport report =
            delta_w_norms(before, after, default_block_map(before), {"layer0.b"});
        CHECK(report.per_weight[0].l2 == 0.0);
        CHECK(report.per_weight[1].l2 == doctest::Approx(5.0));
        CHECK(report.per_weight[1].trainable);
        CHECK(!report.per_weight[0].trainable);
        CHECK(report.per_block.at("layer0") == doctest::Approx(5.0));
    }
    SUBCASE("aggregation modes agree through the square") {
        Snapshot after = before;
        after[0].value(0, 0) = 4.0;  // delta 3 -> norm 3
        after[1].value(0, 1) = 4.0;  // delta 4 -> norm 4
        const auto sum_report = delta_w_norms(before, after, default_block_map(before), {},
                                              BlockAggregation::SumOfNorms);
        const auto l2_report = delta_w_norms(before, after, default_block_map(before), {},
                                             BlockAggregation::L2OfConcat);
        CHECK(sum_report.per_block.at("layer0") == doctest::Approx(7.0));
        CHECK(l2_report.per_block.at("layer0") == doctest::Approx(5.0));
    }
    SUBCASE("errors") {
        Snapshot renamed = before;
        renamed[0].name = "other";
        CHECK_THROWS_AS(delta_w_norms(before, renamed, default_block_map(before), {}), Error);
        BlockMap incomplete;
        incomplete["layer0.W"] = "layer0";
        CHECK_THROWS_AS(delta_w_norms(before, before, incomplete, {}), Error);
    }
}

TEST_CASE("delta_w end-to-end: bias-only adaptation moves only biases") {
    DatasetRegistry registry;
    SyntheticSpec spec;
    spec.name = "dw";
    spec.n_classes = 4;
    spec.items_per_class = 16;
    spec.dim = 10;
    spec.separation = 3.0;
    auto handle = generate_synthetic_dataset(registry, spec, 6);
    MlpSpec mspec;
    mspec.dim_in = 10;
    mspec.hidden = {8};
    mspec.feature_dim = 6;
    auto backbone = reference_backbone(mspec, 2);

    TaskStreamSpec tspec;
    tspec.run_seed = 3;
    tspec.way_lo = 3;
    tspec.way_hi = 3;
    const Task task = sample_task(handle, whole_dataset_split(handle), tspec, 0);
    const AdaptedClassifier cls = fit_peft(*backbone, support_of(*handle, task), Method::BiasOnly,
                                           {1e-2, 1e-2, 40, ""});

    const Snapshot after = cls.backbone->snapshot();
    std::unordered_set<std::string> trainable(cls.trainable.begin(), cls.trainable.end());
    const DeltaWReport report =
        delta_w_norms(cls.initial_state, after, default_block_map(after), trainable);
    bool bias_moved = false;
    for (const auto& e : report.per_weight) {
        if (!e.trainable) CHECK(e.l2 == 0.0);
        if (e.trainable && e.l2 > 0.0) bias_moved = true;
    }
    CHECK(bias_moved);
}

TEST_CASE("linear_cka invariances") {
    const Matrix x = random_matrix(40, 6, 1);

    SUBCASE("self-similarity is 1") { CHECK(std::fabs(linear_cka(x, x) - 1.0) <= 1e-9); }

    SUBCASE("orthogonal transforms and isotropic scaling leave it at 1") {
        const Matrix q = random_orthogonal(6, 2);
        const Matrix xq = matmul(x, q);
        CHECK(std::fabs(linear_cka(x, xq) - 1.0) <= 1e-6);
        Matrix scaled = x;
        scale_inplace(scaled, -2.5);
        CHECK(std::fabs(linear_cka(x, scaled) - 1.0) <= 1e-9);
    }

    SUBCASE("symmetry and range") {
        const Matrix y = random_matrix(40, 9, 3);
        const double xy = linear_cka(x, y);
        const double yx = linear_cka(y, x);
        CHECK(std::fabs(xy - yx) <= 1e-12);
        CHECK(xy >= 0.0);
        CHECK(xy <= 1.0);
    }

    SUBCASE("independent noise scores low") {
        for (std::uint64_t trial = 0; trial < 20; ++trial) {
            const Matrix a = random_matrix(200, 8, 100 + trial);
            const Matrix b = random_matrix(200, 8, 900 + trial);
            CHECK(linear_cka(a, b) < 0.3);
        }
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(linear_cka(x, random_matrix(41, 6, 4)), Error);
        CHECK_THROWS_AS(linear_cka(Matrix(5, 3, 2.0), x), Error);  // constant columns
    }
}

TEST_CASE("cka_profile") {
    MlpSpec spec;
    spec.dim_in = 10;
    spec.hidden = {8, 8};
    spec.feature_dim = 6;
    MlpBackbone before(spec, 1);

    Batch probe;
    probe.inputs = random_matrix(30, 10, 5);
    for (int i = 0; i < 30; ++i) probe.ids.push_back("p" + std::to_string(i));

    SUBCASE("identical backbones profile to ones") {
        const auto profile = cka_profile(before, before, probe);
        REQUIRE(profile.size() == 3);
        for (double v : profile) CHECK(std::fabs(v - 1.0) <= 1e-9);
    }

    SUBCASE("structural mismatch is an error") {
        MlpSpec other = spec;
        other.hidden = {8};
        MlpBackbone shallower(other, 1);
        CHECK_THROWS_AS(cka_profile(before, shallower, probe), Error);
    }

    SUBCASE("frozen embedding backbone: single entry, exactly 1") {
        EmbeddingTable table;
        table.dim = 4;
        TaskRng rng(8, 0, RngPurpose::kTest);
        for (int i = 0; i < 25; ++i) {
            std::vector<float> row(4);
            for (auto& v : row) v = static_cast<float>(rng.normal());
            table.rows.emplace_back("e" + std::to_string(i), std::move(row));
        }
        auto frozen = frozen_embedding_backbone(table);
        Batch items;
        for (int i = 0; i < 25; ++i) items.ids.push_back("e" + std::to_string(i));
        const auto profile = cka_profile(*frozen, *frozen, items);
        REQUIRE(profile.size() == 1);
        CHECK(std::fabs(profile[0] - 1.0) <= 1e-12);
    }
}

TEST_CASE("cka_profile after fine-tuning: deeper layers shift more") {
    DatasetRegistry registry;
    SyntheticSpec sspec;
    sspec.name = "ckaft";
    sspec.n_classes = 6;
    sspec.items_per_class = 30;
    sspec.dim = 10;
    sspec.separation = 3.0;
    auto handle = generate_synthetic_dataset(registry, sspec, 9);
    MlpSpec mspec;
    mspec.dim_in = 10;
    mspec.hidden = {8, 8};
    mspec.feature_dim = 6;
    auto backbone = reference_backbone(mspec, 7);
    std::vector<std::string> classes;
    for (std::size_t c = 0; c < handle->n_classes(); ++c)
        classes.push_back(handle->class_at(c).id);
    pretrain_reference(*backbone, *handle, classes, 30, 1e-2);

    TaskStreamSpec tspec;
    tspec.run_seed = 19;
    tspec.way_lo = 4;
    tspec.way_hi = 4;
    tspec.fixed_shot = 8;
    const Task task = sample_task(handle, whole_dataset_split(handle), tspec, 0);
    const AdaptedClassifier cls = fit_full_finetune(*backbone, support_of(*handle, task),
                                                    {5e-3, 1e-2, 60, ""}, {4});

    const SupportSet query = query_of(*handle, task);
    const auto profile = cka_profile(*backbone, *cls.backbone, query.batch);
    REQUIRE(profile.size() == 3);
    for (double v : profile) CHECK(v <= 1.0 + 1e-12);
    CHECK(profile.back() <= profile.front());
}

TEST_CASE("frequency table loading") {
    const std::string path = temp_file("ft_zipf_test.tsv");
    {
        std::ofstream out(path, std::ios::trunc);
        out << "# comment\napple\t4.8\nforest\t4.7\napple\t4.9\n";
    }
    const FrequencyTable table = load_frequency_table(path);
    CHECK(table.zipf.at("apple") == doctest::Approx(4.9));  // last wins
    CHECK(table.duplicate_count == 1);

    {
        std::ofstream out(path, std::ios::trunc);
        out << "bogus\t9.5\n";
    }
    CHECK_THROWS_WITH_AS(load_frequency_table(path), doctest::Contains("out of [1,8]"), Error);
    {
        std::ofstream out(path, std::ios::trunc);
        out << "no_tab_here 3.0\n";
    }
    CHECK_THROWS_AS(load_frequency_table(path), Error);
}

TEST_CASE("zipf rarity scoring") {
    FrequencyTable table;
    table.zipf = {{"forest", 6.0}, {"river", 6.0}, {"apple", 6.0}, {"leaf", 6.0}, {"rust", 6.0}};

    SUBCASE("full-coverage names score the table value, oov 0") {
        const RarityScore score = zipf_rarity({"forest", "river"}, table);
        CHECK(score.dataset_score == doctest::Approx(6.0));
        CHECK(score.oov_fraction == 0.0);
    }

    SUBCASE("pseudo-latin names floor at 1.0") {
        const RarityScore score =
            zipf_rarity({"Achroomyces disciformis", "Agaricus cupreobrunneus"}, table);
        CHECK(score.dataset_score == doctest::Approx(1.0));
        CHECK(score.oov_fraction == doctest::Approx(1.0));
    }

    SUBCASE("mixed vocabulary: common names score strictly higher") {
        const RarityScore score = zipf_rarity({"apple leaf rust", "Exobasidium vexans"}, table);
        CHECK(score.per_class[0] > score.per_class[1]);
        CHECK(score.per_class[1] == doctest::Approx(1.0));
    }

    SUBCASE("tokenization: case and separators") {
        const RarityScore a = zipf_rarity({"Apple-Leaf_RUST"}, table);
        const RarityScore b = zipf_rarity({"apple leaf rust"}, table);
        CHECK(a.per_class[0] == doctest::Approx(b.per_class[0]));
    }

    SUBCASE("class order invariance") {
        const RarityScore ab = zipf_rarity({"apple", "forest"}, table);
        const RarityScore ba = zipf_rarity({"forest", "apple"}, table);
        CHECK(ab.dataset_score == doctest::Approx(ba.dataset_score));
    }

    SUBCASE("empty-token class names are an error") {
        CHECK_THROWS_AS(zipf_rarity({"---"}, table), Error);
        CHECK_THROWS_AS(zipf_rarity({}, table), Error);
    }
}

TEST_CASE("rarity-gain correlation on a constructed monotone fixture") {
    // eight datasets whose gain strictly decreases as rarity grows
    FrequencyTable table;
    for (int k = 0; k < 8; ++k) table.zipf["token" + std::to_string(k)] = 1.0 + 0.8 * k;

    std::vector<double> rarity, gain;
    for (int k = 0; k < 8; ++k) {
        const RarityScore score = zipf_rarity({"token" + std::to_string(k)}, table);
        rarity.push_back(score.dataset_score);
        gain.push_back(0.9 - 0.1 * k);  // strictly decreasing in rarity
    }
    const Correlation corr = spearman(rarity, gain);
    CHECK(corr.r == doctest::Approx(-1.0));
    CHECK(corr.p < 0.01);
}

TEST_CASE("the shipped frequency fixture loads and ranks plausibly") {
    const FrequencyTable table =
        load_frequency_table(std::string(FEWTRANS_SOURCE_DIR) + "/data/zipf_en.tsv");
    CHECK(table.zipf.size() > 500);
    // function words above content words above specialist vocabulary
    CHECK(table.zipf.at("the") > table.zipf.at("forest"));
    CHECK(table.zipf.at("forest") > table.zipf.at("mildew"));

    // the two specialist bundled rosters score lower than the everyday one
    const auto score_of = [&](const char* name) {
        std::vector<std::string> names;
        for (const auto& b : bundled_datasets())
            if (b.manifest.name == name)
                for (const auto& cls : b.manifest.classes) names.push_back(cls.display_name);
        return zipf_rarity(names, table).dataset_score;
    };
    CHECK(score_of("cifar100") > score_of("plant_disease"));
    CHECK(score_of("cifar100") > score_of("aircraft"));
}
