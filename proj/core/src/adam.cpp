#include "imma/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace imma {

void adam_update(ParamStore& params, const GradMap& grads, AdamState& state, float lr,
                 bool maximize, const std::set<std::string>* only) {
    if (lr < 0.0f) throw std::invalid_argument("adam_update: negative learning rate");
    if (only && only->empty()) throw std::invalid_argument("adam_update: empty parameter selection");

    state.step += 1;
    const float b1 = state.beta1, b2 = state.beta2;
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(state.step));

    for (auto& [name, p] : params) {
        if (only && !only->count(name)) continue;
        auto git = grads.find(name);
        if (git == grads.end())
            throw std::invalid_argument("adam_update: missing gradient for '" + name + "'");
        const Tensor& g = git->second;
        if (!g.same_shape(p))
            throw std::invalid_argument("adam_update: gradient shape mismatch for '" + name + "'");

        auto& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        auto& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const float gi = maximize ? -g.data[i] : g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0f - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0f - b2) * gi * gi;
            const float mhat = m.data[i] / corr1;
            const float vhat = v.data[i] / corr2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

} // namespace imma
