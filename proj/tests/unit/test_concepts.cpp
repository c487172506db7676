#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "imma/concepts.hpp"

using namespace imma;

namespace {
const std::filesystem::path kTmp = std::filesystem::temp_directory_path() / "imma-concepts-test";
}

TEST_CASE("ring sample mean radius stays near the nominal radius") {
    ConceptSpec spec = default_spec(ConceptKind::Ring);
    spec.cx = 0.0f;
    spec.cy = 0.0f;
    spec.scale = 1.0f;
    spec.noise = 0.05f;
    const ConceptDataset ds = generate(spec, 4096, 0, 123);
    double mean_r = 0.0;
    for (int i = 0; i < point_count(ds.train); ++i)
        mean_r += std::sqrt(ds.train[2 * i] * ds.train[2 * i] + ds.train[2 * i + 1] * ds.train[2 * i + 1]);
    mean_r /= point_count(ds.train);
    CHECK(mean_r >= 0.98);
    CHECK(mean_r <= 1.02);
}

TEST_CASE("n_train = 0 gives an empty but valid train split") {
    const ConceptDataset ds = generate(default_spec(ConceptKind::Blob), 0, 16, 7);
    CHECK(ds.train.empty());
    CHECK(point_count(ds.reference) == 16);
}

TEST_CASE("same (spec, seed) twice gives identical point sets") {
    const auto a = generate(default_spec(ConceptKind::Spiral), 256, 64, 99);
    const auto b = generate(default_spec(ConceptKind::Spiral), 256, 64, 99);
    CHECK(a.train == b.train);
    CHECK(a.reference == b.reference);
}

TEST_CASE("negative counts and non-positive noise are rejected") {
    CHECK_THROWS_AS(generate(default_spec(ConceptKind::Ring), -1, 0, 1), std::invalid_argument);
    ConceptSpec bad = default_spec(ConceptKind::Ring);
    bad.noise = 0.0f;
    CHECK_THROWS_AS(generate(bad, 8, 8, 1), std::invalid_argument);
}

TEST_CASE("unknown kind names are rejected at parse time") {
    CHECK(!concept_kind_from_string("doughnut").has_value());
    CHECK(concept_kind_from_string("two_moons").has_value());
}

TEST_CASE("every generated point lies in [-3,3]^2 for every kind") {
    for (const auto& spec : default_concepts()) {
        const ConceptDataset ds = generate(spec, 512, 128, 31);
        for (float v : ds.train) {
            CHECK(v >= -3.0f);
            CHECK(v <= 3.0f);
        }
        for (float v : ds.reference) {
            CHECK(v >= -3.0f);
            CHECK(v <= 3.0f);
        }
    }
}

TEST_CASE("train and reference are disjoint under exact comparison") {
    for (const auto& spec : default_concepts()) {
        const ConceptDataset ds = generate(spec, 1024, 256, 5);
        std::set<std::pair<float, float>> train_pts;
        for (int i = 0; i < point_count(ds.train); ++i)
            train_pts.insert({ds.train[2 * i], ds.train[2 * i + 1]});
        for (int i = 0; i < point_count(ds.reference); ++i)
            CHECK(train_pts.count({ds.reference[2 * i], ds.reference[2 * i + 1]}) == 0);
    }
}

TEST_CASE("csv round-trip preserves every coordinate exactly") {
    std::filesystem::create_directories(kTmp);
    const ConceptDataset ds = generate(default_spec(ConceptKind::Pinwheel), 333, 77, 13);
    save_csv(ds, kTmp / "pinwheel");
    const ConceptDataset back = load_csv(kTmp / "pinwheel", ds.spec, ds.seed);
    CHECK(back.train == ds.train);
    CHECK(back.reference == ds.reference);
}

TEST_CASE("a 3-column row is rejected with its line number") {
    std::filesystem::create_directories(kTmp);
    const auto path = kTmp / "bad.csv";
    std::ofstream(path) << "x,y\n1.0,2.0\n3.0,4.0,5.0\n";
    CHECK_THROWS_WITH_AS(load_points_csv(path), doctest::Contains("line 3"), std::runtime_error);
}

TEST_CASE("header-only file loads as an empty set") {
    std::filesystem::create_directories(kTmp);
    const auto path = kTmp / "empty.csv";
    std::ofstream(path) << "x,y\n";
    CHECK(load_points_csv(path).empty());
}

TEST_CASE("malformed numbers are rejected with their line number") {
    std::filesystem::create_directories(kTmp);
    const auto path = kTmp / "nan.csv";
    std::ofstream(path) << "x,y\n1.0,two\n";
    CHECK_THROWS_WITH_AS(load_points_csv(path), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("default concept ids are 1..13 with 8 pretraining concepts") {
    const auto all = default_concepts();
    REQUIRE(all.size() == kNumConcepts);
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].concept_id == static_cast<int>(i) + 1);
    CHECK(pretrain_concepts().size() == kNumPretrainConcepts);
    CHECK(held_out_concepts().size() == kNumHeldOutConcepts);
}
