#pragma once

#include <vector>

#include "imma/concepts.hpp"

namespace imma {

/// Forward-process tables. 1-indexed accessors over [1, T].
struct NoiseSchedule {
    int T = 0;
    std::vector<float> beta;       // beta_t
    std::vector<float> alpha;      // 1 - beta_t
    std::vector<float> alpha_bar;  // prod_{s<=t} alpha_s

    float beta_at(int t) const { return beta.at(static_cast<std::size_t>(t) - 1); }
    float alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t) - 1); }
    float alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t) - 1); }
    /// alpha_bar_{t-1} with the t = 1 boundary at 1.
    float alpha_bar_prev(int t) const { return t <= 1 ? 1.0f : alpha_bar_at(t - 1); }
};

constexpr int kDefaultT = 100;
constexpr float kDefaultBeta1 = 1e-4f;
constexpr float kDefaultBetaT = 0.02f;

/// Linear beta interpolation from beta1 to betaT over T steps.
NoiseSchedule schedule_linear(int T, float beta1, float betaT);
inline NoiseSchedule default_schedule() { return schedule_linear(kDefaultT, kDefaultBeta1, kDefaultBetaT); }

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise over the batch.
/// x0 and eps are flat 2-D point buffers; t entries must lie in [1, T].
PointSet q_sample(const PointSet& x0, const std::vector<int>& t, const PointSet& eps,
                  const NoiseSchedule& sched);

} // namespace imma
