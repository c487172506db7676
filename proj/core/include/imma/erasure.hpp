#pragma once

#include "imma/adaptation.hpp"

namespace imma {

struct ErasureConfig {
    int target_row = 1;   // concept row to erase; the null token (0) is not erasable
    int steps = 1000;
    float lr = 1e-3f;
    int batch_size = 128;
    std::uint64_t seed = 1;
    std::vector<std::string> selector = kFilmSelector; // trained subset
};

/// Fine-tunes the selected subset so the target row's prediction matches a
/// frozen copy's unconditional prediction on noised target data. Parameters
/// outside the selector stay bit-identical.
ParamStore erase(const ParamStore& model, const ConceptDataset& dataset, const ErasureConfig& config,
                 const NoiseSchedule& sched);

/// Mean prediction gap between two stores on noised data from `dataset`,
/// conditioning each store on `row_a` / `row_b`. Diagnostic for erasure
/// strength and preservation.
double prediction_gap(const ParamStore& a, int row_a, const ParamStore& b, int row_b,
                      const ConceptDataset& dataset, const NoiseSchedule& sched, std::uint64_t seed,
                      int n_points = 512);

} // namespace imma
