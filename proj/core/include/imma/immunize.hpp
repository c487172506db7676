#pragma once

#include "imma/adam.hpp"
#include "imma/adaptation.hpp"

namespace imma {

struct ImmaConfig {
    int iterations = 500;     // outer loop I
    int inner_steps = 1;      // K plain-GD steps on phi per iteration
    float upper_lr = 1e-4f;   // alpha, Adam ascent on theta_S
    float inner_lr = -1.0f;   // < 0 -> the method's adaptation lr
    int batch_adapt = 64;     // x'_A
    int batch_upper = 64;     // x'_I, drawn independently
    AdaptMethod method;       // inner adaptation A
    std::vector<std::string> s_selector = kFilmSelector;
    int imma_token = -1;      // embedding row for the immunization token; -1 -> next free
    bool no_warm_start = false;    // ablate line 5: re-init phi every iteration
    bool no_overlap_assign = false; // ablate line 7: skip the U write-back
    bool direct_max = false;       // ascend the plain loss; no inner problem at all
    std::uint64_t seed = 1;
};

struct ImmunizationTrace {
    std::vector<float> inner_loss; // after the K inner steps
    std::vector<float> upper_loss; // value whose theta-gradient was ascended
};

struct ImmunizeResult {
    ParamStore params; // theta^I
    ImmunizationTrace trace;
};

/// Explicit training draws for one loss evaluation.
struct LossBatch {
    PointSet x0;
    std::vector<int> ts;
    std::vector<int> tokens;
    PointSet eps;
};

/// One Adam ascent step of the adaptation loss w.r.t. theta, restricted to
/// `s_names`, with phi held fixed (first-order: no differentiation through
/// the inner update). Returns the updated store.
ParamStore gradient_ascent_step(const ParamStore& theta, const AdapterSet& phi, const LossBatch& batch,
                                const std::set<std::string>& s_names, AdamState& state, float alpha,
                                const NoiseSchedule& sched, float* loss_value = nullptr);

/// Warm-started inner minimization over phi, overlap write-back, Adam ascent
/// on theta_S. Parameters outside S and U are bit-identical on return.
ImmunizeResult immunize(const ParamStore& model, const ConceptDataset& dataset,
                        const ImmaConfig& config, const NoiseSchedule& sched);

} // namespace imma
