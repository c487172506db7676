#include "imma/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace imma {

NoiseSchedule schedule_linear(int T, float beta1, float betaT) {
    if (T < 1) throw std::invalid_argument("schedule_linear: T must be >= 1");
    if (!(0.0f < beta1 && beta1 <= betaT && betaT < 1.0f))
        throw std::invalid_argument("schedule_linear: need 0 < beta1 <= betaT < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    float prod = 1.0f;
    for (int i = 0; i < T; ++i) {
        const float frac = (T == 1) ? 0.0f : static_cast<float>(i) / static_cast<float>(T - 1);
        s.beta[i] = beta1 + frac * (betaT - beta1);
        s.alpha[i] = 1.0f - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

PointSet q_sample(const PointSet& x0, const std::vector<int>& t, const PointSet& eps,
                  const NoiseSchedule& sched) {
    if (x0.size() != eps.size()) throw std::invalid_argument("q_sample: eps shape must match x0");
    if (static_cast<std::size_t>(point_count(x0)) != t.size())
        throw std::invalid_argument("q_sample: one timestep per point required");

    PointSet out(x0.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < 1 || t[i] > sched.T)
            throw std::invalid_argument("q_sample: t = " + std::to_string(t[i]) + " outside [1, " +
                                        std::to_string(sched.T) + "]");
        const float ab = sched.alpha_bar_at(t[i]);
        const float c0 = std::sqrt(ab);
        const float c1 = std::sqrt(1.0f - ab);
        out[2 * i] = c0 * x0[2 * i] + c1 * eps[2 * i];
        out[2 * i + 1] = c0 * x0[2 * i + 1] + c1 * eps[2 * i + 1];
    }
    return out;
}

} // namespace imma
