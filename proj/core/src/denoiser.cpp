#include "imma/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "imma/adam.hpp"

namespace imma {

namespace {

Value leaf_of(Tape& tape, const Tensor& t, const std::string& name, bool rg) {
    Tensor copy = t;
    copy.requires_grad = rg;
    return tape.leaf(copy, name);
}

const Tensor& param(const ParamStore& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw std::invalid_argument("denoiser: missing parameter '" + name + "'");
    return it->second;
}

} // namespace

ParamStore init_denoiser(int n_concepts, std::uint64_t seed) {
    if (n_concepts < 1) throw std::invalid_argument("init_denoiser: need at least one concept");
    Rng rng(derive_seed(seed, "denoiser-init"));
    const int in_dim = kPointDim + kTimeEmbedDim;

    ParamStore p;
    p["embed.table"] = Tensor::randn({n_concepts + 1, kEmbedDim}, rng, 1.0f, true);
    p["trunk.l1.W"] = Tensor::randn({in_dim, kHiddenDim}, rng, std::sqrt(2.0f / in_dim), true);
    p["trunk.l1.b"] = Tensor::zeros({kHiddenDim}, true);
    p["trunk.l2.W"] = Tensor::randn({kHiddenDim, kHiddenDim}, rng, std::sqrt(2.0f / kHiddenDim), true);
    p["trunk.l2.b"] = Tensor::zeros({kHiddenDim}, true);
    p["trunk.out.W"] = Tensor::randn({kHiddenDim, kPointDim}, rng, 0.01f, true);
    p["trunk.out.b"] = Tensor::zeros({kPointDim}, true);
    for (const char* blk : {"film1", "film2"}) {
        const std::string b(blk);
        p[b + ".scale.W"] = Tensor::randn({kEmbedDim, kHiddenDim}, rng, 0.1f, true);
        p[b + ".scale.b"] = Tensor::full({kHiddenDim}, 1.0f, true);
        p[b + ".shift.W"] = Tensor::randn({kEmbedDim, kHiddenDim}, rng, 0.1f, true);
        p[b + ".shift.b"] = Tensor::zeros({kHiddenDim}, true);
    }
    return p;
}

int embed_rows(const ParamStore& params) { return param(params, "embed.table").rows(); }

Tensor time_embedding(const std::vector<int>& ts, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
    const int half = dim / 2;
    Tensor out = Tensor::zeros({static_cast<int>(ts.size()), dim});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            const float freq = std::exp(-std::log(10000.0f) * static_cast<float>(j) /
                                        static_cast<float>(half - 1));
            const float a = static_cast<float>(ts[i]) * freq;
            out.data[i * dim + j] = std::sin(a);
            out.data[i * dim + half + j] = std::cos(a);
        }
    }
    return out;
}

Value denoiser_trunk(Tape& tape, const DenoiserSources& s, const PointSet& x_t,
                     const std::vector<int>& ts) {
    const int B = point_count(x_t);
    if (static_cast<std::size_t>(B) != ts.size())
        throw std::invalid_argument("denoiser_trunk: one timestep per point required");

    const Value x = tape.constant(Tensor({B, kPointDim}, x_t));
    const Value temb = tape.constant(time_embedding(ts));
    const Value in = tape.concat_cols(x, temb);

    auto film = [&](Value h, Value sW, Value sb, Value hW, Value hb) {
        const Value scale = tape.affine(s.embed_rows_value, sW, sb);
        const Value shift = tape.affine(s.embed_rows_value, hW, hb);
        return tape.add(tape.mul(h, scale), shift);
    };

    Value h = tape.silu(tape.affine(in, s.l1W, s.l1b));
    h = film(h, s.film1_sW, s.film1_sb, s.film1_hW, s.film1_hb);
    h = tape.silu(tape.affine(h, s.l2W, s.l2b));
    h = film(h, s.film2_sW, s.film2_sb, s.film2_hW, s.film2_hb);
    return tape.affine(h, s.outW, s.outb);
}

Value denoiser_forward(Tape& tape, const ParamStore& params, const PointSet& x_t,
                       const std::vector<int>& ts, const std::vector<int>& token_rows,
                       bool with_grad, const std::string& leaf_prefix) {
    const int rows = embed_rows(params);
    for (int r : token_rows)
        if (r < 0 || r >= rows)
            throw std::invalid_argument("denoiser_forward: unknown token row " + std::to_string(r));

    auto lf = [&](const char* name) {
        return leaf_of(tape, param(params, name), leaf_prefix + name, with_grad);
    };
    DenoiserSources s;
    const Value table = lf("embed.table");
    s.embed_rows_value = tape.gather_rows(table, token_rows);
    s.l1W = lf("trunk.l1.W");
    s.l1b = lf("trunk.l1.b");
    s.l2W = lf("trunk.l2.W");
    s.l2b = lf("trunk.l2.b");
    s.outW = lf("trunk.out.W");
    s.outb = lf("trunk.out.b");
    s.film1_sW = lf("film1.scale.W");
    s.film1_sb = lf("film1.scale.b");
    s.film1_hW = lf("film1.shift.W");
    s.film1_hb = lf("film1.shift.b");
    s.film2_sW = lf("film2.scale.W");
    s.film2_sb = lf("film2.scale.b");
    s.film2_hW = lf("film2.shift.W");
    s.film2_hb = lf("film2.shift.b");
    return denoiser_trunk(tape, s, x_t, ts);
}

Value diffusion_loss_graph(Tape& tape, const ParamStore& params, const PointSet& x0,
                           const std::vector<int>& ts, const std::vector<int>& token_rows,
                           const PointSet& eps, const NoiseSchedule& sched, bool with_grad) {
    if (point_count(x0) == 0) throw std::invalid_argument("diffusion loss: empty batch");
    const PointSet x_t = q_sample(x0, ts, eps, sched);
    const Value pred = denoiser_forward(tape, params, x_t, ts, token_rows, with_grad);
    const Value diff = tape.sub(pred, tape.constant(Tensor({point_count(x0), kPointDim}, eps)));
    // mean over batch of per-point squared norms = kPointDim * mean over elements
    return tape.scale(tape.mean_all(tape.square(diff)), static_cast<float>(kPointDim));
}

float loss_diffusion(const ParamStore& params, const PointSet& batch,
                     const std::vector<int>& token_rows, const NoiseSchedule& sched, Rng& rng) {
    const int B = point_count(batch);
    if (B == 0) throw std::invalid_argument("loss_diffusion: empty batch");
    std::vector<int> ts(static_cast<std::size_t>(B));
    PointSet eps(batch.size());
    for (int i = 0; i < B; ++i) {
        ts[i] = 1 + rng.uniform_int(sched.T);
        eps[2 * i] = rng.normal();
        eps[2 * i + 1] = rng.normal();
    }
    Tape tape;
    return tape.scalar(diffusion_loss_graph(tape, params, batch, ts, token_rows, eps, sched, false));
}

PretrainResult pretrain(const std::vector<ConceptDataset>& datasets, const TrainConfig& config,
                        const NoiseSchedule& sched) {
    if (datasets.empty()) throw std::invalid_argument("pretrain: need at least one dataset");
    if (config.steps < 0) throw std::invalid_argument("pretrain: negative step count");
    if (config.cf_dropout_p < 0.0f || config.cf_dropout_p >= 1.0f)
        throw std::invalid_argument("pretrain: cf_dropout_p outside [0, 1)");
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        if (datasets[i].train.empty())
            throw std::invalid_argument("pretrain: empty train split for " + to_string(datasets[i].spec.kind));
        // concept id doubles as the embedding row; row 0 stays the null token
        if (datasets[i].spec.concept_id != static_cast<int>(i) + 1)
            throw std::invalid_argument("pretrain: datasets must be ordered by concept id starting at 1");
    }

    PretrainResult out;
    out.params = init_denoiser(static_cast<int>(datasets.size()), config.seed);
    const int rows = embed_rows(out.params);

    Rng rng(derive_seed(config.seed, "pretrain"));
    AdamState adam;
    const int C = static_cast<int>(datasets.size());

    for (int step = 0; step < config.steps; ++step) {
        // cosine decay from config.lr; constant-rate Adam never settles below
        // its gradient-noise floor on this loss
        const float progress = static_cast<float>(step) / static_cast<float>(config.steps);
        const float lr = config.lr * 0.5f * (1.0f + std::cos(3.14159265f * progress));

        PointSet x0;
        std::vector<int> tokens, ts;
        PointSet eps;
        x0.reserve(static_cast<std::size_t>(config.batch_size) * 2);
        for (int b = 0; b < config.batch_size; ++b) {
            const int c = rng.uniform_int(C);
            const auto& ds = datasets[static_cast<std::size_t>(c)];
            const int idx = rng.uniform_int(point_count(ds.train));
            x0.push_back(ds.train[2 * idx]);
            x0.push_back(ds.train[2 * idx + 1]);
            int token = ds.spec.concept_id;
            if (token < 0 || token >= rows)
                throw std::invalid_argument("pretrain: concept id outside embedding table");
            if (rng.uniform() < config.cf_dropout_p) token = 0;
            tokens.push_back(token);
            ts.push_back(1 + rng.uniform_int(sched.T));
            eps.push_back(rng.normal());
            eps.push_back(rng.normal());
        }
        Tape tape;
        const Value loss = diffusion_loss_graph(tape, out.params, x0, ts, tokens, eps, sched, true);
        out.loss_trace.push_back(tape.scalar(loss));
        const GradMap grads = tape.backward(loss);
        adam_update(out.params, grads, adam, lr, false);
    }
    return out;
}

PointSet ancestral_sample(const NoisePredictor& eps_model, int n, const NoiseSchedule& sched,
                          std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("sample: negative sample count");
    if (n == 0) return {};

    Rng rng(derive_seed(seed, "sample"));
    PointSet x(static_cast<std::size_t>(n) * 2);
    for (auto& v : x) v = rng.normal();

    for (int t = sched.T; t >= 1; --t) {
        const PointSet pred = eps_model(x, t);
        const float a = sched.alpha_at(t);
        const float ab = sched.alpha_bar_at(t);
        const float coef = sched.beta_at(t) / std::sqrt(1.0f - ab);
        const float inv_sqrt_a = 1.0f / std::sqrt(a);
        float sigma = 0.0f;
        if (t > 1) {
            const float beta_tilde = (1.0f - sched.alpha_bar_prev(t)) / (1.0f - ab) * sched.beta_at(t);
            sigma = std::sqrt(beta_tilde);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            float v = inv_sqrt_a * (x[i] - coef * pred[i]);
            if (t > 1) v += sigma * rng.normal();
            x[i] = v;
        }
    }
    return x;
}

PointSet sample(const ParamStore& params, int concept_row, int n, const NoiseSchedule& sched,
                std::uint64_t seed) {
    auto predictor = [&](const PointSet& x_t, int t) {
        const int B = point_count(x_t);
        Tape tape;
        const std::vector<int> ts(static_cast<std::size_t>(B), t);
        const std::vector<int> tokens(static_cast<std::size_t>(B), concept_row);
        const Value pred = denoiser_forward(tape, params, x_t, ts, tokens, false);
        return tape.value(pred).data;
    };
    return ancestral_sample(predictor, n, sched, seed);
}

} // namespace imma
