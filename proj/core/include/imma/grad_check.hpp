#pragma once

#include <functional>

#include "imma/tape.hpp"

namespace imma {

/// Builds a scalar loss on the given tape from the given parameters.
/// Must be deterministic: any sampled batches / noise live inside as
/// constants, fixed before the call.
using LossBuilder = std::function<Value(Tape&, const ParamStore&)>;

/// Central-difference check of backward() over every parameter coordinate.
/// Returns the worst relative error, denominator max(|analytic|, |numeric|, 1e-8).
/// The difference quotient is evaluated by replaying the recorded graph in
/// f64 (the f32 perturbed values are the true inputs; the quotient itself
/// needs headroom below the stated tolerances).
double finite_diff_check(const LossBuilder& loss_fn, const ParamStore& params, float step);

} // namespace imma
