#include "imma/erasure.hpp"

#include <stdexcept>

#include "imma/adam.hpp"

namespace imma {

ParamStore erase(const ParamStore& model, const ConceptDataset& dataset, const ErasureConfig& config,
                 const NoiseSchedule& sched) {
    if (config.target_row == 0) throw std::invalid_argument("erase: the null token cannot be erased");
    if (config.target_row < 0 || config.target_row >= embed_rows(model))
        throw std::invalid_argument("erase: target row outside the embedding table");
    if (config.steps < 0) throw std::invalid_argument("erase: negative step count");
    if (dataset.train.empty() && config.steps > 0)
        throw std::invalid_argument("erase: empty train split");

    ParamStore theta = model;
    const ParamStore theta_star = model; // frozen reference
    const auto subset = select_params(theta, config.selector);
    if (subset.empty()) throw std::invalid_argument("erase: selector matched no parameters");

    Rng rng(derive_seed(config.seed, "erase"));
    AdamState adam;
    const int N = point_count(dataset.train);

    for (int step = 0; step < config.steps; ++step) {
        PointSet x0;
        std::vector<int> ts;
        PointSet eps;
        for (int b = 0; b < config.batch_size; ++b) {
            const int idx = rng.uniform_int(N);
            x0.push_back(dataset.train[2 * idx]);
            x0.push_back(dataset.train[2 * idx + 1]);
            ts.push_back(1 + rng.uniform_int(sched.T));
            eps.push_back(rng.normal());
            eps.push_back(rng.normal());
        }
        const PointSet x_t = q_sample(x0, ts, eps, sched);
        const std::vector<int> target_tokens(ts.size(), config.target_row);
        const std::vector<int> null_tokens(ts.size(), 0);

        Tape tape;
        const Value frozen = denoiser_forward(tape, theta_star, x_t, ts, null_tokens, false, "star.");
        const Value target = tape.stop_gradient(frozen);
        const Value pred = denoiser_forward(tape, theta, x_t, ts, target_tokens, true);
        const Value loss =
            tape.scale(tape.mean_all(tape.square(tape.sub(pred, target))), static_cast<float>(kPointDim));

        const GradMap grads = tape.backward(loss);
        adam_update(theta, grads, adam, config.lr, false, &subset);
    }
    return theta;
}

double prediction_gap(const ParamStore& a, int row_a, const ParamStore& b, int row_b,
                      const ConceptDataset& dataset, const NoiseSchedule& sched, std::uint64_t seed,
                      int n_points) {
    if (dataset.train.empty()) throw std::invalid_argument("prediction_gap: empty dataset");
    Rng rng(derive_seed(seed, "prediction-gap"));
    const int N = point_count(dataset.train);
    PointSet x0;
    std::vector<int> ts;
    PointSet eps;
    for (int i = 0; i < n_points; ++i) {
        const int idx = rng.uniform_int(N);
        x0.push_back(dataset.train[2 * idx]);
        x0.push_back(dataset.train[2 * idx + 1]);
        ts.push_back(1 + rng.uniform_int(sched.T));
        eps.push_back(rng.normal());
        eps.push_back(rng.normal());
    }
    const PointSet x_t = q_sample(x0, ts, eps, sched);
    const std::vector<int> rows_a(ts.size(), row_a);
    const std::vector<int> rows_b(ts.size(), row_b);

    Tape tape;
    const Value pa = denoiser_forward(tape, a, x_t, ts, rows_a, false, "a.");
    const Value pb = denoiser_forward(tape, b, x_t, ts, rows_b, false, "b.");
    const Value gap =
        tape.scale(tape.mean_all(tape.square(tape.sub(pa, pb))), static_cast<float>(kPointDim));
    return static_cast<double>(tape.scalar(gap));
}

} // namespace imma
