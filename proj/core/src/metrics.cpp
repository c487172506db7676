#include "imma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "imma/adam.hpp"

namespace imma {

namespace {

double mean_cross_distance(const PointSet& a, const PointSet& b) {
    const int n = point_count(a), m = point_count(b);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double ax = a[2 * i], ay = a[2 * i + 1];
        for (int j = 0; j < m; ++j) {
            const double dx = ax - b[2 * j];
            const double dy = ay - b[2 * j + 1];
            sum += std::sqrt(dx * dx + dy * dy);
        }
    }
    return sum / (static_cast<double>(n) * static_cast<double>(m));
}

double mean_cross_kernel(const PointSet& a, const PointSet& b, double gamma) {
    const int n = point_count(a), m = point_count(b);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double ax = a[2 * i], ay = a[2 * i + 1];
        for (int j = 0; j < m; ++j) {
            const double dx = ax - b[2 * j];
            const double dy = ay - b[2 * j + 1];
            sum += std::exp(-gamma * (dx * dx + dy * dy));
        }
    }
    return sum / (static_cast<double>(n) * static_cast<double>(m));
}

void require_nonempty(const PointSet& x, const PointSet& y, const char* who) {
    if (point_count(x) < 1 || point_count(y) < 1)
        throw std::invalid_argument(std::string(who) + ": empty point set");
}

// Summation order must not depend on which argument came first, so that the
// distances are exactly symmetric.
bool canonical_order(const PointSet& x, const PointSet& y) {
    if (x.size() != y.size()) return x.size() < y.size();
    return !std::lexicographical_compare(y.begin(), y.end(), x.begin(), x.end());
}

} // namespace

std::string to_string(SimilarityMetric m) {
    switch (m) {
        case SimilarityMetric::Energy: return "energy";
        case SimilarityMetric::RbfMmd: return "mmd";
    }
    throw std::invalid_argument("to_string: unknown similarity metric");
}

double energy_distance(const PointSet& x, const PointSet& y) {
    require_nonempty(x, y, "energy_distance");
    if (!canonical_order(x, y)) return energy_distance(y, x);
    return 2.0 * mean_cross_distance(x, y) - mean_cross_distance(x, x) - mean_cross_distance(y, y);
}

double rbf_mmd(const PointSet& x, const PointSet& y) {
    require_nonempty(x, y, "rbf_mmd");
    if (!canonical_order(x, y)) return rbf_mmd(y, x);
    PointSet pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    const int n = point_count(pooled);

    std::vector<double> d2;
    d2.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dx = pooled[2 * i] - pooled[2 * j];
            const double dy = pooled[2 * i + 1] - pooled[2 * j + 1];
            d2.push_back(dx * dx + dy * dy);
        }
    double bandwidth2 = 1.0;
    if (!d2.empty()) {
        auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
        std::nth_element(d2.begin(), mid, d2.end());
        if (*mid > 0.0) bandwidth2 = *mid;
    }
    const double gamma = 1.0 / (2.0 * bandwidth2);

    const double mmd2 = mean_cross_kernel(x, x, gamma) + mean_cross_kernel(y, y, gamma) -
                        2.0 * mean_cross_kernel(x, y, gamma);
    return std::sqrt(std::max(0.0, mmd2));
}

double set_distance(const PointSet& x, const PointSet& y, SimilarityMetric m) {
    return m == SimilarityMetric::Energy ? energy_distance(x, y) : rbf_mmd(x, y);
}

double similarity(const PointSet& x, const PointSet& y, SimilarityMetric m) {
    return std::exp(-set_distance(x, y, m));
}

double sgr(double m_ref_vs_noimma, double m_ref_vs_imma) {
    if (m_ref_vs_noimma <= 0.0) throw std::invalid_argument("sgr: non-positive denominator");
    return (m_ref_vs_noimma - m_ref_vs_imma) / m_ref_vs_noimma;
}

double rsgr(double m_other_pair, double m_target_pair) {
    if (m_other_pair <= 0.0) throw std::invalid_argument("rsgr: non-positive denominator");
    return (m_other_pair - m_target_pair) / m_other_pair;
}

namespace {

Value classifier_logits(Tape& tape, const ParamStore& p, const PointSet& points, bool with_grad) {
    auto lf = [&](const char* name) {
        auto it = p.find(name);
        if (it == p.end()) throw std::invalid_argument("classifier: missing parameter " + std::string(name));
        Tensor t = it->second;
        t.requires_grad = with_grad;
        return tape.leaf(t, name);
    };
    const Value x = tape.constant(Tensor({point_count(points), 2}, points));
    const Value h = tape.silu(tape.affine(x, lf("cls.l1.W"), lf("cls.l1.b")));
    return tape.affine(h, lf("cls.out.W"), lf("cls.out.b"));
}

} // namespace

std::vector<int> EvalClassifier::predict(const PointSet& points) const {
    if (point_count(points) == 0) return {};
    Tape tape;
    const Tensor& logits = tape.value(classifier_logits(tape, params, points, false));
    std::vector<int> out;
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        out.push_back(best);
    }
    return out;
}

std::vector<float> EvalClassifier::probabilities(const PointSet& points) const {
    Tape tape;
    const Tensor& logits = tape.value(classifier_logits(tape, params, points, false));
    std::vector<float> out(logits.data.size());
    for (int i = 0; i < logits.rows(); ++i) {
        float mx = logits.at(i, 0);
        for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(i, c));
        float z = 0.0f;
        for (int c = 0; c < logits.cols(); ++c) {
            const float e = std::exp(logits.at(i, c) - mx);
            out[static_cast<std::size_t>(i) * logits.cols() + c] = e;
            z += e;
        }
        for (int c = 0; c < logits.cols(); ++c)
            out[static_cast<std::size_t>(i) * logits.cols() + c] /= z;
    }
    return out;
}

EvalClassifier train_classifier(const std::vector<ConceptDataset>& reference_sets,
                                const ClassifierConfig& config) {
    if (reference_sets.empty()) throw std::invalid_argument("train_classifier: no datasets");
    const int C = static_cast<int>(reference_sets.size());

    // Ordered per-concept split of the reference data into train / holdout.
    PointSet train_x, hold_x;
    std::vector<int> train_y, hold_y;
    for (int c = 0; c < C; ++c) {
        const auto& ref = reference_sets[static_cast<std::size_t>(c)].reference;
        const int n = point_count(ref);
        if (n < 8) throw std::invalid_argument("train_classifier: reference split too small");
        const int n_hold = static_cast<int>(config.holdout_fraction * static_cast<float>(n));
        for (int i = 0; i < n; ++i) {
            const bool held = i >= n - n_hold;
            (held ? hold_x : train_x).push_back(ref[2 * i]);
            (held ? hold_x : train_x).push_back(ref[2 * i + 1]);
            (held ? hold_y : train_y).push_back(c);
        }
    }

    Rng rng(derive_seed(config.seed, "classifier"));
    EvalClassifier clf;
    clf.classes = C;
    clf.params["cls.l1.W"] = Tensor::randn({2, config.hidden}, rng, std::sqrt(2.0f / 2.0f), true);
    clf.params["cls.l1.b"] = Tensor::zeros({config.hidden}, true);
    clf.params["cls.out.W"] = Tensor::randn({config.hidden, C}, rng, 0.01f, true);
    clf.params["cls.out.b"] = Tensor::zeros({C}, true);

    AdamState adam;
    const int N = static_cast<int>(train_y.size());
    for (int step = 0; step < config.steps; ++step) {
        PointSet bx;
        Tensor onehot = Tensor::zeros({config.batch_size, C});
        for (int b = 0; b < config.batch_size; ++b) {
            const int idx = rng.uniform_int(N);
            bx.push_back(train_x[2 * idx]);
            bx.push_back(train_x[2 * idx + 1]);
            onehot.at(b, train_y[static_cast<std::size_t>(idx)]) = 1.0f;
        }
        Tape tape;
        const Value logits = classifier_logits(tape, clf.params, bx, true);
        const Value loss = tape.mean_all(tape.square(tape.sub(logits, tape.constant(onehot))));
        const GradMap grads = tape.backward(loss);
        adam_update(clf.params, grads, adam, config.lr, false);
    }

    const auto preds = clf.predict(hold_x);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == hold_y[i]) ++correct;
    clf.holdout_accuracy = hold_y.empty() ? 0.0 : static_cast<double>(correct) / hold_y.size();
    return clf;
}

EvalClassifier classifier_from_params(ParamStore params) {
    EvalClassifier clf;
    auto it = params.find("cls.out.b");
    if (it == params.end()) throw std::invalid_argument("classifier_from_params: not a classifier store");
    clf.classes = static_cast<int>(it->second.numel());
    clf.params = std::move(params);
    clf.holdout_accuracy = -1.0; // unknown for restored classifiers
    return clf;
}

double concept_accuracy(const PointSet& samples, const EvalClassifier& clf, int concept_id) {
    if (point_count(samples) == 0) throw std::invalid_argument("concept_accuracy: empty sample set");
    const int cls = concept_id - 1;
    if (cls < 0 || cls >= clf.classes)
        throw std::invalid_argument("concept_accuracy: concept id outside the classifier's classes");
    const auto preds = clf.predict(samples);
    int hits = 0;
    for (int p : preds)
        if (p == cls) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::vector<double> similarity_curve(const ParamStore& model,
                                     const std::vector<AdapterSet>& epoch_checkpoints, int token,
                                     const PointSet& reference, SimilarityMetric metric,
                                     const NoiseSchedule& sched, int n_samples,
                                     std::uint64_t eval_seed) {
    std::vector<double> out;
    for (const auto& ckpt : epoch_checkpoints) {
        const PointSet gen = sample_effective(model, &ckpt, token, n_samples, sched, eval_seed);
        out.push_back(similarity(reference, gen, metric));
    }
    return out;
}

} // namespace imma
