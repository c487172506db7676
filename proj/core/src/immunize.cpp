#include "imma/immunize.hpp"

#include <stdexcept>

#include "imma/adam.hpp"

namespace imma {

namespace {

LossBatch draw_batch(const ConceptDataset& dataset, int n, int token, const NoiseSchedule& sched,
                     Rng& rng) {
    LossBatch b;
    const int N = point_count(dataset.train);
    for (int i = 0; i < n; ++i) {
        const int idx = rng.uniform_int(N);
        b.x0.push_back(dataset.train[2 * idx]);
        b.x0.push_back(dataset.train[2 * idx + 1]);
        b.tokens.push_back(token);
        b.ts.push_back(1 + rng.uniform_int(sched.T));
        b.eps.push_back(rng.normal());
        b.eps.push_back(rng.normal());
    }
    return b;
}

float inner_loss_value(const ParamStore& theta, const AdapterSet& phi, const LossBatch& batch,
                       const NoiseSchedule& sched) {
    Tape tape;
    return tape.scalar(effective_loss_graph(tape, theta, &phi, OverlapSource::Adapter, false, false,
                                            batch.x0, batch.ts, batch.tokens, batch.eps, sched));
}

} // namespace

ParamStore gradient_ascent_step(const ParamStore& theta, const AdapterSet& phi, const LossBatch& batch,
                                const std::set<std::string>& s_names, AdamState& state, float alpha,
                                const NoiseSchedule& sched, float* loss_value) {
    if (s_names.empty()) throw std::invalid_argument("gradient_ascent_step: empty parameter set S");

    Tape tape;
    const Value loss = effective_loss_graph(tape, theta, &phi, OverlapSource::Model, true, false,
                                            batch.x0, batch.ts, batch.tokens, batch.eps, sched);
    if (loss_value) *loss_value = tape.scalar(loss);
    const GradMap grads = tape.backward(loss);

    ParamStore out = theta;
    adam_update(out, grads, state, alpha, /*maximize=*/true, &s_names);
    return out;
}

ImmunizeResult immunize(const ParamStore& model, const ConceptDataset& dataset,
                        const ImmaConfig& config, const NoiseSchedule& sched) {
    if (config.iterations < 0) throw std::invalid_argument("immunize: negative iteration count");
    if (config.inner_steps < 1) throw std::invalid_argument("immunize: inner_steps must be >= 1");
    if (config.upper_lr < 0.0f) throw std::invalid_argument("immunize: negative upper learning rate");
    if (config.iterations > 0 && dataset.train.empty())
        throw std::invalid_argument("immunize: empty train split");

    ImmunizeResult out;
    out.params = model;

    const auto s_names = select_params(out.params, config.s_selector);
    if (s_names.empty() && !config.direct_max)
        throw std::invalid_argument("immunize: selector S matched no parameters");

    // phi^0; the immunization token is distinct from any adaptation token.
    AdapterSet phi = init_adapter(config.method, out.params, derive_seed(config.seed, "phi"),
                                  config.imma_token);
    const int token = phi.new_token_ids.empty() ? dataset.spec.concept_id : phi.new_token_ids.front();
    if (phi.new_token_ids.empty() && (token <= 0 || token >= embed_rows(out.params)))
        throw std::invalid_argument("immunize: concept row outside the embedding table");

    const float inner_lr = config.inner_lr >= 0.0f ? config.inner_lr : config.method.default_lr();
    Rng rng(derive_seed(config.seed, "imma-batches"));
    AdamState upper_adam; // persists across all outer iterations

    for (int it = 1; it <= config.iterations; ++it) {
        const LossBatch xa = draw_batch(dataset, config.batch_adapt, token, sched, rng);
        const LossBatch xi = draw_batch(dataset, config.batch_upper, token, sched, rng);

        if (config.direct_max) {
            // Upper-level task only: ascend the plain loss, phi frozen at init.
            out.trace.inner_loss.push_back(inner_loss_value(out.params, phi, xa, sched));
            float upper = 0.0f;
            if (!s_names.empty())
                out.params = gradient_ascent_step(out.params, phi, xi, s_names, upper_adam,
                                                  config.upper_lr, sched, &upper);
            out.trace.upper_loss.push_back(upper);
            continue;
        }

        if (config.no_warm_start)
            phi = init_adapter(config.method, out.params,
                               derive_seed(config.seed, "phi-reinit/" + std::to_string(it)),
                               config.imma_token);

        for (int k = 0; k < config.inner_steps; ++k) {
            Tape tape;
            const Value loss = effective_loss_graph(tape, out.params, &phi, OverlapSource::Adapter,
                                                    false, true, xa.x0, xa.ts, xa.tokens, xa.eps, sched);
            GradMap grads = tape.backward(loss);
            for (auto& [key, t] : phi.trainables) {
                const Tensor& g = grads.at("adapter." + key);
                for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] -= inner_lr * g.data[i];
            }
        }
        out.trace.inner_loss.push_back(inner_loss_value(out.params, phi, xa, sched));

        if (!config.no_overlap_assign)
            for (const auto& name : phi.overlap_names)
                out.params.at(name) = phi.trainables.at("overlap." + name);

        float upper = 0.0f;
        out.params = gradient_ascent_step(out.params, phi, xi, s_names, upper_adam, config.upper_lr,
                                          sched, &upper);
        out.trace.upper_loss.push_back(upper);
    }
    return out;
}

} // namespace imma
