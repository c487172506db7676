#include <doctest.h>

#include <stdexcept>

#include "imma/erasure.hpp"

using namespace imma;

namespace {

ConceptDataset ring_dataset(int id, int n) {
    ConceptSpec spec = default_spec(ConceptKind::Ring);
    spec.concept_id = id;
    return generate(spec, n, n / 4, 3);
}

} // namespace

TEST_CASE("erase with zero steps returns the model unchanged") {
    const ParamStore model = init_denoiser(4, 1);
    ErasureConfig cfg;
    cfg.target_row = 1;
    cfg.steps = 0;
    CHECK(stores_bit_equal(erase(model, ring_dataset(1, 64), cfg, default_schedule()), model));
}

TEST_CASE("the null token cannot be erased") {
    const ParamStore model = init_denoiser(4, 1);
    ErasureConfig cfg;
    cfg.target_row = 0;
    CHECK_THROWS_AS(erase(model, ring_dataset(1, 64), cfg, default_schedule()), std::invalid_argument);
    cfg.target_row = 9;
    CHECK_THROWS_AS(erase(model, ring_dataset(1, 64), cfg, default_schedule()), std::invalid_argument);
}

TEST_CASE("subset discipline: parameters outside the selector are bit-identical") {
    const ParamStore model = init_denoiser(4, 2);
    ErasureConfig cfg;
    cfg.target_row = 2;
    cfg.steps = 25;
    cfg.batch_size = 32;
    const ParamStore erased = erase(model, ring_dataset(2, 128), cfg, default_schedule());

    bool film_changed = false;
    for (const auto& [name, t] : model) {
        if (name.rfind("film", 0) == 0) {
            film_changed = film_changed || !erased.at(name).bit_equal(t);
        } else {
            CHECK(erased.at(name).bit_equal(t));
        }
    }
    CHECK(film_changed);
}

TEST_CASE("erasure loss trends down: conditional moves toward unconditional") {
    // On a fresh model the target row's prediction differs from the null
    // token's; a short erasure run must shrink that gap.
    const NoiseSchedule sched = default_schedule();
    const ParamStore model = init_denoiser(4, 3);
    const ConceptDataset ds = ring_dataset(1, 512);

    const double before = prediction_gap(model, 1, model, 0, ds, sched, 17);
    ErasureConfig cfg;
    cfg.target_row = 1;
    cfg.steps = 300;
    cfg.batch_size = 64;
    const ParamStore erased = erase(model, ds, cfg, sched);
    const double after = prediction_gap(erased, 1, model, 0, ds, sched, 17);
    INFO("gap before ", before, " after ", after);
    CHECK(after < 0.5 * before);
}

TEST_CASE("an empty selector is rejected") {
    const ParamStore model = init_denoiser(4, 4);
    ErasureConfig cfg;
    cfg.target_row = 1;
    cfg.selector = {"nothing-matches"};
    CHECK_THROWS_AS(erase(model, ring_dataset(1, 64), cfg, default_schedule()), std::invalid_argument);
}
