#pragma once

#include "imma/adaptation.hpp"

namespace imma {

enum class SimilarityMetric { Energy, RbfMmd };

std::string to_string(SimilarityMetric m);

/// Energy distance V-statistic: 2 E|x-y| - E|x-x'| - E|y-y'| over all pairs,
/// self-pairs included. Non-negative up to float error, symmetric, zero on
/// identical sets.
double energy_distance(const PointSet& x, const PointSet& y);

/// RBF-kernel MMD (biased V-statistic, median-heuristic bandwidth over the
/// pooled sample). Returns the square root, clamped at zero.
double rbf_mmd(const PointSet& x, const PointSet& y);

double set_distance(const PointSet& x, const PointSet& y, SimilarityMetric m);

/// M = exp(-D) in (0, 1]; strictly positive so gap ratios are always defined.
double similarity(const PointSet& x, const PointSet& y, SimilarityMetric m);

/// Similarity Gap Ratio: (M(ref, no-imma) - M(ref, imma)) / M(ref, no-imma).
/// Positive when immunization reduced similarity to the reference.
double sgr(double m_ref_vs_noimma, double m_ref_vs_imma);

/// Relative Similarity Gap Ratio over between-branch similarities:
/// (M(other pair) - M(target pair)) / M(other pair). Positive when other
/// concepts agree across branches more than the target does.
double rsgr(double m_other_pair, double m_target_pair);

/// Fixed pointwise concept classifier (2 -> 32 -> C), trained once on the
/// pretraining concepts' reference splits and frozen.
struct EvalClassifier {
    ParamStore params;
    int classes = 0;
    double holdout_accuracy = 0.0;

    std::vector<int> predict(const PointSet& points) const;
    /// Softmax probabilities, one row per point.
    std::vector<float> probabilities(const PointSet& points) const;
};

struct ClassifierConfig {
    int hidden = 32;
    int steps = 3000;
    int batch_size = 256;
    float lr = 1e-2f;
    float holdout_fraction = 0.25f;
    std::uint64_t seed = 77;
};

EvalClassifier train_classifier(const std::vector<ConceptDataset>& reference_sets,
                                const ClassifierConfig& config = {});

EvalClassifier classifier_from_params(ParamStore params);

/// Fraction of samples argmax-classified as `concept_id` (1-based pretraining id).
double concept_accuracy(const PointSet& samples, const EvalClassifier& clf, int concept_id);

/// Per-epoch similarity of effective-model samples against a reference set.
std::vector<double> similarity_curve(const ParamStore& model,
                                     const std::vector<AdapterSet>& epoch_checkpoints, int token,
                                     const PointSet& reference, SimilarityMetric metric,
                                     const NoiseSchedule& sched, int n_samples,
                                     std::uint64_t eval_seed);

} // namespace imma
