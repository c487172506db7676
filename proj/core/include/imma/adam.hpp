#pragma once

#include <cstdint>
#include <optional>
#include <set>

#include "imma/tape.hpp"
#include "imma/tensor.hpp"

namespace imma {

/// Per-parameter Adam moments, lazily allocated to mirror parameter shapes.
struct AdamState {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

/// One Adam step on `params` (all names, or only those in `only`).
/// maximize = true negates gradients before the update, i.e. ascends.
/// lr = 0 is a legal no-op on the values; the step counter still advances.
void adam_update(ParamStore& params, const GradMap& grads, AdamState& state, float lr,
                 bool maximize, const std::set<std::string>* only = nullptr);

} // namespace imma
