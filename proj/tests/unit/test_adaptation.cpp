#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "imma/adaptation.hpp"
#include "imma/metrics.hpp"

using namespace imma;

namespace {

// One-sided Jacobi SVD (test oracle): returns singular values, descending.
std::vector<double> singular_values(const Tensor& m) {
    const int rows = m.rows(), cols = m.cols();
    std::vector<std::vector<double>> a(static_cast<std::size_t>(rows),
                                       std::vector<double>(static_cast<std::size_t>(cols)));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) a[i][j] = m.at(i, j);

    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < cols - 1; ++p)
            for (int q = p + 1; q < cols; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < rows; ++i) {
                    alpha += a[i][p] * a[i][p];
                    beta += a[i][q] * a[i][q];
                    gamma += a[i][p] * a[i][q];
                }
                off = std::max(off, std::abs(gamma));
                if (std::abs(gamma) < 1e-15) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
                for (int i = 0; i < rows; ++i) {
                    const double ap = a[i][p], aq = a[i][q];
                    a[i][p] = c * ap - s * aq;
                    a[i][q] = s * ap + c * aq;
                }
            }
        if (off < 1e-14) break;
    }
    std::vector<double> sv;
    for (int j = 0; j < cols; ++j) {
        double norm = 0.0;
        for (int i = 0; i < rows; ++i) norm += a[i][j] * a[i][j];
        sv.push_back(std::sqrt(norm));
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

Tensor lora_delta(const AdapterSet& a, const std::string& layer) {
    const Tensor& A = a.trainables.at("lora." + layer + ".A");
    const Tensor& B = a.trainables.at("lora." + layer + ".B");
    Tensor d = Tensor::zeros({A.rows(), B.cols()});
    for (int i = 0; i < A.rows(); ++i)
        for (int k = 0; k < A.cols(); ++k)
            for (int j = 0; j < B.cols(); ++j) d.at(i, j) += A.at(i, k) * B.at(k, j);
    return d;
}

struct Probe {
    PointSet x;
    std::vector<int> ts;
    std::vector<int> tokens;
};

Probe random_probe(int n, int max_token, const NoiseSchedule& sched, Rng& rng) {
    Probe p;
    for (int i = 0; i < n; ++i) {
        p.x.push_back(rng.uniform(-2.0f, 2.0f));
        p.x.push_back(rng.uniform(-2.0f, 2.0f));
        p.ts.push_back(1 + rng.uniform_int(sched.T));
        p.tokens.push_back(rng.uniform_int(max_token));
    }
    return p;
}

} // namespace

TEST_CASE("LoRA init: delta is exactly zero and adds r(n+d) parameters per layer") {
    const ParamStore model = init_denoiser(8, 1);
    AdaptMethod m = AdaptMethod::lora(false);
    m.rank = 1;
    const AdapterSet a = init_adapter(m, model, 7);

    for (const auto& layer : m.lora_layers) {
        const Tensor d = lora_delta(a, layer);
        for (float v : d.data) CHECK(v == 0.0f);
        const Tensor& A = a.trainables.at("lora." + layer + ".A");
        const Tensor& B = a.trainables.at("lora." + layer + ".B");
        const auto& w = model.at(layer);
        CHECK(A.numel() + B.numel() == m.rank * (w.rows() + w.cols()));
    }
}

TEST_CASE("init-transparency: effective forward equals base forward for every method") {
    const ParamStore model = init_denoiser(8, 2);
    const NoiseSchedule sched = default_schedule();
    Rng rng(11);
    const Probe p = random_probe(100, embed_rows(model), sched, rng);
    const PointSet base = effective_forward(model, nullptr, p.x, p.ts, p.tokens);

    for (const AdaptMethod& m :
         {AdaptMethod::lora(false), AdaptMethod::subset_finetune(), AdaptMethod::token_inversion()}) {
        const AdapterSet a = init_adapter(m, model, 5);
        const PointSet eff = effective_forward(model, &a, p.x, p.ts, p.tokens);
        REQUIRE(eff.size() == base.size());
        for (std::size_t i = 0; i < eff.size(); ++i) CHECK(eff[i] == base[i]); // max abs diff 0
    }
}

TEST_CASE("token-inversion adapter contains exactly one trainable tensor") {
    const ParamStore model = init_denoiser(8, 3);
    const AdapterSet a = init_adapter(AdaptMethod::token_inversion(), model, 5);
    CHECK(a.trainables.size() == 1);
    CHECK(a.new_token_ids.size() == 1);
    CHECK(a.overlap_names.empty()); // U is empty for token inversion
}

TEST_CASE("overlap set: SubsetFineTune copies the FiLM group, LoRA has none") {
    const ParamStore model = init_denoiser(8, 3);
    const AdapterSet sft = init_adapter(AdaptMethod::subset_finetune(), model, 5);
    CHECK(sft.overlap_names.size() == 4); // 2 blocks x (scale W, shift W)
    for (const auto& name : sft.overlap_names)
        CHECK(sft.trainables.at("overlap." + name).bit_equal(model.at(name)));
    CHECK(init_adapter(AdaptMethod::lora(false), model, 5).overlap_names.empty());
}

TEST_CASE("rank bound is enforced at init") {
    const ParamStore model = init_denoiser(8, 4);
    AdaptMethod m = AdaptMethod::lora(false);
    m.rank = 18; // min(n, d) of trunk.l1.W is 18
    CHECK_THROWS_AS(init_adapter(m, model, 1), std::invalid_argument);
    m.rank = 0;
    CHECK_THROWS_AS(init_adapter(m, model, 1), std::invalid_argument);
}

TEST_CASE("rank-r delta has matrix rank <= r (SVD oracle on an 8x8 product)") {
    Rng rng(21);
    const Tensor A = Tensor::randn({8, 2}, rng, 1.0f);
    const Tensor B = Tensor::randn({2, 8}, rng, 1.0f);
    Tensor d = Tensor::zeros({8, 8});
    for (int i = 0; i < 8; ++i)
        for (int k = 0; k < 2; ++k)
            for (int j = 0; j < 8; ++j) d.at(i, j) += A.at(i, k) * B.at(k, j);
    const auto sv = singular_values(d);
    REQUIRE(sv.size() == 8);
    CHECK(sv[0] > 1e-3);
    for (int i = 2; i < 8; ++i) CHECK(sv[static_cast<std::size_t>(i)] <= 1e-6 * sv[0]);
}

TEST_CASE("LoRA deltas stay rank-bounded across adaptation checkpoints") {
    const ParamStore model = init_denoiser(4, 4);
    const NoiseSchedule sched = default_schedule();
    ConceptSpec spec = default_spec(ConceptKind::Ring);
    spec.concept_id = 1;
    const ConceptDataset ds = generate(spec, 128, 32, 5);

    AdaptMethod m = AdaptMethod::lora(false);
    m.rank = 2;
    AdaptConfig cfg;
    cfg.steps = steps_for_epochs(2, point_count(ds.train), 64);
    cfg.batch_size = 64;
    cfg.token_id = 1;
    const AdaptResult r = adapt(model, init_adapter(m, model, 6), ds, cfg, sched);

    for (const auto& ckpt : r.epoch_checkpoints) {
        const auto sv = singular_values(lora_delta(ckpt, "trunk.l2.W"));
        for (std::size_t i = 2; i < sv.size(); ++i) CHECK(sv[i] <= 1e-5 * std::max(sv[0], 1e-9));
    }
}

TEST_CASE("perturbing A with B = 0 leaves the effective output unchanged") {
    const ParamStore model = init_denoiser(8, 6);
    const NoiseSchedule sched = default_schedule();
    AdapterSet a = init_adapter(AdaptMethod::lora(false), model, 7);
    Rng rng(13);
    const Probe p = random_probe(32, embed_rows(model), sched, rng);
    const PointSet before = effective_forward(model, &a, p.x, p.ts, p.tokens);
    for (auto& v : a.trainables.at("lora.trunk.l1.W.A").data) v += 0.5f;
    const PointSet after = effective_forward(model, &a, p.x, p.ts, p.tokens);
    CHECK(before == after);
}

TEST_CASE("adapt with zero steps returns the adapter unchanged") {
    const ParamStore model = init_denoiser(8, 7);
    ConceptSpec spec = default_spec(ConceptKind::Ring);
    spec.concept_id = 1;
    const ConceptDataset ds = generate(spec, 64, 16, 5);
    const AdapterSet a = init_adapter(AdaptMethod::lora(false), model, 8);
    AdaptConfig cfg;
    cfg.steps = 0;
    cfg.token_id = 1;
    const AdaptResult r = adapt(model, a, ds, cfg, default_schedule());
    CHECK(stores_bit_equal(r.adapter.trainables, a.trainables));
    CHECK(r.epoch_checkpoints.size() == 1);
}

TEST_CASE("adapt never mutates the base model") {
    const ParamStore model = init_denoiser(8, 8);
    const ParamStore before = model;
    ConceptSpec spec = default_spec(ConceptKind::Cross);
    spec.concept_id = 1;
    const ConceptDataset ds = generate(spec, 128, 32, 6);
    for (const AdaptMethod& m :
         {AdaptMethod::lora(true), AdaptMethod::subset_finetune(), AdaptMethod::token_inversion()}) {
        AdaptConfig cfg;
        cfg.steps = 4;
        cfg.batch_size = 32;
        adapt(model, init_adapter(m, model, 9), ds, cfg, default_schedule());
        CHECK(stores_bit_equal(model, before));
    }
}

TEST_CASE("merge at init equals the base model plus one unused embedding row") {
    const ParamStore model = init_denoiser(8, 9);
    const AdapterSet a = init_adapter(AdaptMethod::subset_finetune(), model, 10);
    const ParamStore merged = merge(model, a);
    CHECK(embed_rows(merged) == embed_rows(model) + 1);
    for (const auto& [name, t] : model) {
        if (name == "embed.table") continue;
        CHECK(merged.at(name).bit_equal(t));
    }
    // old rows intact
    const Tensor& t0 = model.at("embed.table");
    const Tensor& t1 = merged.at("embed.table");
    for (std::size_t i = 0; i < t0.data.size(); ++i) CHECK(t1.data[i] == t0.data[i]);
}

TEST_CASE("merged forward equals the effective forward within 1e-6") {
    const ParamStore model = init_denoiser(8, 10);
    const NoiseSchedule sched = default_schedule();
    ConceptSpec spec = default_spec(ConceptKind::Segment);
    spec.concept_id = 2;
    const ConceptDataset ds = generate(spec, 128, 32, 6);

    AdaptConfig cfg;
    cfg.steps = 8;
    cfg.batch_size = 32;
    cfg.token_id = 2;
    const AdaptResult r =
        adapt(model, init_adapter(AdaptMethod::lora(false), model, 11), ds, cfg, sched);
    const ParamStore merged = merge(model, r.adapter);

    Rng rng(14);
    const Probe p = random_probe(100, embed_rows(model), sched, rng);
    const PointSet eff = effective_forward(model, &r.adapter, p.x, p.ts, p.tokens);
    const PointSet mrg = effective_forward(merged, nullptr, p.x, p.ts, p.tokens);
    for (std::size_t i = 0; i < eff.size(); ++i)
        CHECK(std::abs(eff[i] - mrg[i]) <= 1e-6f);
}

TEST_CASE("merge validates tokens") {
    const ParamStore model = init_denoiser(8, 11);
    AdapterSet ti = init_adapter(AdaptMethod::token_inversion(), model, 12);
    ti.new_token_ids.clear(); // no token -> rejected
    CHECK_THROWS_AS(merge(model, ti), std::invalid_argument);

    // a non-contiguous token id cannot be appended
    const AdapterSet far = init_adapter(AdaptMethod::token_inversion(), model, 12, embed_rows(model) + 3);
    CHECK_THROWS_AS(merge(model, far), std::invalid_argument);
}

TEST_CASE("unknown tokens are rejected by the effective forward") {
    const ParamStore model = init_denoiser(8, 12);
    const AdapterSet a = init_adapter(AdaptMethod::token_inversion(), model, 13);
    const NoiseSchedule sched = default_schedule();
    CHECK_THROWS_AS(effective_forward(model, &a, {0.0f, 0.0f}, {1}, {embed_rows(model) + 5}),
                    std::invalid_argument);
    CHECK_THROWS_AS(effective_forward(model, &a, {0.0f, 0.0f}, {1}, {-1}), std::invalid_argument);
}
