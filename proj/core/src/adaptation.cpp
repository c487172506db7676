#include "imma/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "imma/adam.hpp"

namespace imma {

namespace {

const Tensor& param(const ParamStore& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw std::invalid_argument("adaptation: missing parameter '" + name + "'");
    return it->second;
}

Value leaf_of(Tape& tape, const Tensor& t, const std::string& name, bool rg) {
    Tensor copy = t;
    copy.requires_grad = rg;
    return tape.leaf(copy, name);
}

} // namespace

std::string to_string(AdaptKind k) {
    switch (k) {
        case AdaptKind::TokenInversion: return "token_inversion";
        case AdaptKind::SubsetFineTune: return "subset_finetune";
        case AdaptKind::LoRA: return "lora";
    }
    throw std::invalid_argument("to_string: unknown adaptation kind");
}

std::optional<AdaptKind> adapt_kind_from_string(const std::string& s) {
    if (s == "token_inversion") return AdaptKind::TokenInversion;
    if (s == "subset_finetune") return AdaptKind::SubsetFineTune;
    if (s == "lora") return AdaptKind::LoRA;
    return std::nullopt;
}

float AdaptMethod::default_lr() const {
    switch (kind) {
        case AdaptKind::TokenInversion: return 5e-2f;
        case AdaptKind::SubsetFineTune: return 1e-3f;
        case AdaptKind::LoRA: return 1e-2f;
    }
    throw std::invalid_argument("default_lr: unknown adaptation kind");
}

AdaptMethod AdaptMethod::token_inversion() {
    AdaptMethod m;
    m.kind = AdaptKind::TokenInversion;
    m.novel_token = true;
    return m;
}

AdaptMethod AdaptMethod::subset_finetune() {
    AdaptMethod m;
    m.kind = AdaptKind::SubsetFineTune;
    m.novel_token = true;
    return m;
}

AdaptMethod AdaptMethod::lora(bool novel_token) {
    AdaptMethod m;
    m.kind = AdaptKind::LoRA;
    m.novel_token = novel_token;
    return m;
}

bool AdapterSet::owns_token(int id) const {
    return std::find(new_token_ids.begin(), new_token_ids.end(), id) != new_token_ids.end();
}

int steps_per_epoch(int train_count, int batch_size) {
    if (train_count <= 0 || batch_size <= 0)
        throw std::invalid_argument("steps_per_epoch: positive sizes required");
    return (train_count + batch_size - 1) / batch_size;
}

int steps_for_epochs(int epochs, int train_count, int batch_size) {
    return epochs * steps_per_epoch(train_count, batch_size);
}

AdapterSet init_adapter(const AdaptMethod& method, const ParamStore& model, std::uint64_t seed,
                        int token_id) {
    AdapterSet a;
    a.method = method;
    a.base_rows = embed_rows(model);
    Rng rng(derive_seed(seed, "adapter-init"));

    if (method.novel_token || method.kind == AdaptKind::TokenInversion) {
        int id = token_id >= 0 ? token_id : a.base_rows;
        if (id < a.base_rows)
            throw std::invalid_argument("init_adapter: token id " + std::to_string(id) +
                                        " collides with the base table");
        a.new_token_ids.push_back(id);
        a.trainables["token." + std::to_string(id)] =
            Tensor::randn({kEmbedDim}, rng, 0.1f, true);
    }

    if (method.kind == AdaptKind::LoRA) {
        for (const auto& layer : method.lora_layers) {
            const Tensor& w = param(model, layer);
            const int n = w.rows(), d = w.cols();
            if (method.rank < 1 || method.rank >= std::min(n, d))
                throw std::invalid_argument("init_adapter: rank " + std::to_string(method.rank) +
                                            " violates 1 <= r < min(n, d) for " + layer);
            a.trainables["lora." + layer + ".A"] = Tensor::randn({n, method.rank}, rng, 0.1f, true);
            a.trainables["lora." + layer + ".B"] = Tensor::zeros({method.rank, d}, true);
        }
    }

    if (method.kind == AdaptKind::SubsetFineTune) {
        for (const auto& name : select_params(model, method.overlap_selector)) {
            a.overlap_names.insert(name);
            Tensor copy = param(model, name);
            copy.requires_grad = true;
            a.trainables["overlap." + name] = copy;
        }
        if (a.overlap_names.empty())
            throw std::invalid_argument("init_adapter: overlap selector matched no parameters");
    }
    return a;
}

Value effective_noise_graph(Tape& tape, const ParamStore& model, const AdapterSet* adapter,
                            OverlapSource src, bool model_grad, bool adapter_grad,
                            const PointSet& x_t, const std::vector<int>& ts,
                            const std::vector<int>& token_rows) {
    if (!adapter)
        return denoiser_forward(tape, model, x_t, ts, token_rows, model_grad);

    if (adapter->base_rows != embed_rows(model))
        throw std::invalid_argument("effective graph: adapter was initialized against a different table");

    // Leaves for every adapter tensor, so backward always addresses phi.
    std::map<std::string, Value> phi;
    for (const auto& [key, t] : adapter->trainables)
        phi[key] = leaf_of(tape, t, "adapter." + key, adapter_grad);

    auto model_leaf = [&](const char* name) {
        return leaf_of(tape, param(model, name), name, model_grad);
    };
    auto maybe_overlap = [&](const char* name) {
        const std::string n(name);
        if (adapter->method.kind == AdaptKind::SubsetFineTune && adapter->overlap_names.count(n) &&
            src == OverlapSource::Adapter)
            return phi.at("overlap." + n);
        return model_leaf(name);
    };
    auto maybe_lora = [&](const char* name) {
        const std::string n(name);
        Value w = model_leaf(name);
        if (adapter->method.kind == AdaptKind::LoRA) {
            const auto& layers = adapter->method.lora_layers;
            if (std::find(layers.begin(), layers.end(), n) != layers.end())
                return tape.add(w, tape.matmul(phi.at("lora." + n + ".A"), phi.at("lora." + n + ".B")));
        }
        return w;
    };

    // Token resolution: base rows gather from the table; a novel token must
    // be uniform across the batch and broadcast from its adapter row.
    const int B = point_count(x_t);
    DenoiserSources s;
    bool any_novel = false;
    for (int r : token_rows) any_novel = any_novel || r >= adapter->base_rows;
    if (any_novel) {
        const int tok = token_rows.empty() ? -1 : token_rows.front();
        for (int r : token_rows)
            if (r != tok)
                throw std::invalid_argument("effective graph: novel-token batches must be uniform");
        if (!adapter->owns_token(tok))
            throw std::invalid_argument("effective graph: unknown token row " + std::to_string(tok));
        // Keep the base table addressable for gradients even when unused.
        (void)model_leaf("embed.table");
        s.embed_rows_value = tape.broadcast_rows(phi.at("token." + std::to_string(tok)), B);
    } else {
        for (int r : token_rows)
            if (r < 0)
                throw std::invalid_argument("effective graph: unknown token row " + std::to_string(r));
        s.embed_rows_value = tape.gather_rows(model_leaf("embed.table"), token_rows);
    }

    s.l1W = maybe_lora("trunk.l1.W");
    s.l1b = model_leaf("trunk.l1.b");
    s.l2W = maybe_lora("trunk.l2.W");
    s.l2b = model_leaf("trunk.l2.b");
    s.outW = model_leaf("trunk.out.W");
    s.outb = model_leaf("trunk.out.b");
    s.film1_sW = maybe_overlap("film1.scale.W");
    s.film1_sb = maybe_overlap("film1.scale.b");
    s.film1_hW = maybe_overlap("film1.shift.W");
    s.film1_hb = maybe_overlap("film1.shift.b");
    s.film2_sW = maybe_overlap("film2.scale.W");
    s.film2_sb = maybe_overlap("film2.scale.b");
    s.film2_hW = maybe_overlap("film2.shift.W");
    s.film2_hb = maybe_overlap("film2.shift.b");
    return denoiser_trunk(tape, s, x_t, ts);
}

PointSet effective_forward(const ParamStore& model, const AdapterSet* adapter, const PointSet& x_t,
                           const std::vector<int>& ts, const std::vector<int>& token_rows) {
    Tape tape;
    const Value v = effective_noise_graph(tape, model, adapter, OverlapSource::Adapter, false, false,
                                          x_t, ts, token_rows);
    return tape.value(v).data;
}

Value effective_loss_graph(Tape& tape, const ParamStore& model, const AdapterSet* adapter,
                           OverlapSource src, bool model_grad, bool adapter_grad, const PointSet& x0,
                           const std::vector<int>& ts, const std::vector<int>& token_rows,
                           const PointSet& eps, const NoiseSchedule& sched) {
    if (point_count(x0) == 0) throw std::invalid_argument("adaptation loss: empty batch");
    const PointSet x_t = q_sample(x0, ts, eps, sched);
    const Value pred = effective_noise_graph(tape, model, adapter, src, model_grad, adapter_grad,
                                             x_t, ts, token_rows);
    const Value diff = tape.sub(pred, tape.constant(Tensor({point_count(x0), kPointDim}, eps)));
    return tape.scale(tape.mean_all(tape.square(diff)), static_cast<float>(kPointDim));
}

AdaptResult adapt(const ParamStore& model, const AdapterSet& adapter, const ConceptDataset& dataset,
                  const AdaptConfig& config, const NoiseSchedule& sched) {
    if (config.steps < 0) throw std::invalid_argument("adapt: negative step count");
    int token = config.token_id;
    if (token < 0) {
        if (adapter.new_token_ids.empty())
            throw std::invalid_argument("adapt: no token id given and the adapter has no novel token");
        token = adapter.new_token_ids.front();
    }

    AdaptResult out;
    out.adapter = adapter;
    out.epoch_checkpoints.push_back(adapter);
    if (config.steps == 0) return out;

    const int N = point_count(dataset.train);
    const int spe = steps_per_epoch(N, config.batch_size);
    const float lr = config.lr >= 0.0f ? config.lr : adapter.method.default_lr();

    Rng rng(derive_seed(config.seed, "adapt"));
    AdamState adam;
    std::vector<int> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), 0);

    for (int step = 0; step < config.steps; ++step) {
        const int pos = step % spe;
        if (pos == 0) rng.shuffle(perm);
        const int off = pos * config.batch_size;
        const int bs = std::min(config.batch_size, N - off);

        PointSet x0;
        std::vector<int> ts, tokens;
        PointSet eps;
        for (int b = 0; b < bs; ++b) {
            const int idx = perm[static_cast<std::size_t>(off + b)];
            x0.push_back(dataset.train[2 * idx]);
            x0.push_back(dataset.train[2 * idx + 1]);
            tokens.push_back(token);
            ts.push_back(1 + rng.uniform_int(sched.T));
            eps.push_back(rng.normal());
            eps.push_back(rng.normal());
        }

        Tape tape;
        const Value loss = effective_loss_graph(tape, model, &out.adapter, OverlapSource::Adapter,
                                                false, true, x0, ts, tokens, eps, sched);
        out.loss_trace.push_back(tape.scalar(loss));
        GradMap grads = tape.backward(loss);
        GradMap phi_grads;
        for (auto& [key, t] : out.adapter.trainables) {
            (void)t;
            phi_grads[key] = std::move(grads.at("adapter." + key));
        }
        adam_update(out.adapter.trainables, phi_grads, adam, lr, false);

        if ((step + 1) % spe == 0) out.epoch_checkpoints.push_back(out.adapter);
    }
    return out;
}

ParamStore merge(const ParamStore& model, const AdapterSet& adapter) {
    if (adapter.method.kind == AdaptKind::TokenInversion && adapter.new_token_ids.empty())
        throw std::invalid_argument("merge: token-inversion adapter carries no token");

    ParamStore out = model;

    if (adapter.method.kind == AdaptKind::LoRA) {
        for (const auto& layer : adapter.method.lora_layers) {
            Tensor& w = out.at(layer);
            const Tensor& A = param(adapter.trainables, "lora." + layer + ".A");
            const Tensor& B = param(adapter.trainables, "lora." + layer + ".B");
            const int n = A.rows(), r = A.cols(), d = B.cols();
            if (w.rows() != n || w.cols() != d)
                throw std::invalid_argument("merge: LoRA factor shapes do not match " + layer);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < r; ++k) {
                    const float av = A.at(i, k);
                    for (int j = 0; j < d; ++j) w.at(i, j) += av * B.at(k, j);
                }
        }
    }

    for (const auto& name : adapter.overlap_names) {
        const Tensor& v = param(adapter.trainables, "overlap." + name);
        if (!out.at(name).same_shape(v))
            throw std::invalid_argument("merge: overlap shape mismatch for " + name);
        out.at(name) = v;
        out.at(name).requires_grad = true;
    }

    if (!adapter.new_token_ids.empty()) {
        Tensor& table = out.at("embed.table");
        std::vector<int> ids = adapter.new_token_ids;
        std::sort(ids.begin(), ids.end());
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (ids[k] != table.rows())
                throw std::invalid_argument("merge: token id " + std::to_string(ids[k]) +
                                            " does not extend the table contiguously");
            const Tensor& row = param(adapter.trainables, "token." + std::to_string(ids[k]));
            Tensor grown = Tensor::zeros({table.rows() + 1, table.cols()}, true);
            std::copy(table.data.begin(), table.data.end(), grown.data.begin());
            std::copy(row.data.begin(), row.data.end(),
                      grown.data.begin() + static_cast<std::ptrdiff_t>(table.data.size()));
            table = std::move(grown);
        }
    }
    return out;
}

PointSet sample_effective(const ParamStore& model, const AdapterSet* adapter, int token, int n,
                          const NoiseSchedule& sched, std::uint64_t seed) {
    auto predictor = [&](const PointSet& x_t, int t) {
        const int B = point_count(x_t);
        const std::vector<int> ts(static_cast<std::size_t>(B), t);
        const std::vector<int> tokens(static_cast<std::size_t>(B), token);
        return effective_forward(model, adapter, x_t, ts, tokens);
    };
    return ancestral_sample(predictor, n, sched, seed);
}

} // namespace imma
