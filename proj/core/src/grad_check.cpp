#include "imma/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace imma {

double finite_diff_check(const LossBuilder& loss_fn, const ParamStore& params, float step) {
    if (step <= 0.0f) throw std::invalid_argument("finite_diff_check: step must be positive");

    Tape tape;
    const Value loss = loss_fn(tape, params);
    const GradMap grads = tape.backward(loss);

    double worst = 0.0;
    for (const auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue; // not a leaf of this loss
        const Tensor& g = git->second;

        Tensor probe = p;
        std::map<std::string, const Tensor*> overrides{{name, &probe}};
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const float x = p.data[i];
            const float xp = x + step;
            const float xm = x - step;

            probe.data[i] = xp;
            const double lp = tape.replay_scalar<double>(loss, overrides);
            probe.data[i] = xm;
            const double lm = tape.replay_scalar<double>(loss, overrides);
            probe.data[i] = x;

            // Use the realized f32 step; x +/- step rounds.
            const double h = static_cast<double>(xp) - static_cast<double>(xm);
            const double numeric = (lp - lm) / h;
            const double analytic = static_cast<double>(g.data[i]);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

} // namespace imma
