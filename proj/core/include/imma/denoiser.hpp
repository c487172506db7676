#pragma once

#include <functional>
#include <string>
#include <vector>

#include "imma/schedule.hpp"
#include "imma/tape.hpp"

namespace imma {

// Conditional denoiser over 2D points:
//   concat(x_t, time embedding) -> affine -> SiLU -> FiLM -> affine -> SiLU
//   -> FiLM -> affine -> predicted noise.
// FiLM (per-feature scale/shift from the concept embedding) is the only
// place concept information enters the trunk.
constexpr int kPointDim = 2;
constexpr int kEmbedDim = 8;
constexpr int kHiddenDim = 64;
constexpr int kTimeEmbedDim = 16;

/// The FiLM conditioning weight matrices (the erasure subset, the
/// immunization set S, and SubsetFineTune's overlap). The scale/shift biases
/// stay out: they are shared by every concept, so touching them bleeds into
/// concepts that should be preserved.
inline const std::vector<std::string> kFilmSelector = {"film1.scale.W", "film1.shift.W",
                                                       "film2.scale.W", "film2.shift.W"};

/// Trunk affine layers wrapped by low-rank adapters.
inline const std::vector<std::string> kLoraLayers = {"trunk.l1.W", "trunk.l2.W"};

/// Fresh parameters: embedding row 0 is the null token, rows 1..n_concepts
/// the pretraining concepts. All tensors requires_grad.
ParamStore init_denoiser(int n_concepts, std::uint64_t seed);

int embed_rows(const ParamStore& params);

/// Sinusoidal embedding of integer timesteps, [sin | cos] halves.
Tensor time_embedding(const std::vector<int>& ts, int dim = kTimeEmbedDim);

/// Tape values for every parameter role; adapters substitute entries before
/// the trunk is built so both paths share the same architecture code.
struct DenoiserSources {
    Value embed_rows_value; // (B x kEmbedDim) already gathered / broadcast
    Value l1W, l1b, l2W, l2b, outW, outb;
    Value film1_sW, film1_sb, film1_hW, film1_hb;
    Value film2_sW, film2_sb, film2_hW, film2_hb;
};

Value denoiser_trunk(Tape& tape, const DenoiserSources& src, const PointSet& x_t,
                     const std::vector<int>& ts);

/// Plain forward on the base parameters. `leaf_prefix` keeps two stores on
/// one tape apart (e.g. a frozen copy during erasure).
Value denoiser_forward(Tape& tape, const ParamStore& params, const PointSet& x_t,
                       const std::vector<int>& ts, const std::vector<int>& token_rows,
                       bool with_grad, const std::string& leaf_prefix = "");

struct TrainConfig {
    int steps = 60000;   // the short schedule needs a long tail-fitting phase
    int batch_size = 256;
    float lr = 1e-3f;    // initial rate; pretrain decays it to zero (cosine)
    float cf_dropout_p = 0.1f; // chance of conditioning on the null token
    std::uint64_t seed = 1;
};

/// Eq-style training objective on explicit draws: squared noise-prediction
/// error, mean over the batch of per-point squared norms.
Value diffusion_loss_graph(Tape& tape, const ParamStore& params, const PointSet& x0,
                           const std::vector<int>& ts, const std::vector<int>& token_rows,
                           const PointSet& eps, const NoiseSchedule& sched, bool with_grad);

/// Samples (t, eps) internally and evaluates the loss.
float loss_diffusion(const ParamStore& params, const PointSet& batch,
                     const std::vector<int>& token_rows, const NoiseSchedule& sched, Rng& rng);

struct PretrainResult {
    ParamStore params;
    std::vector<float> loss_trace;
};

PretrainResult pretrain(const std::vector<ConceptDataset>& datasets, const TrainConfig& config,
                        const NoiseSchedule& sched);

/// Ancestral DDPM sampling loop over a caller-supplied noise predictor.
/// Posterior variance beta_tilde; the final step adds no noise.
using NoisePredictor = std::function<PointSet(const PointSet& x_t, int t)>;
PointSet ancestral_sample(const NoisePredictor& eps_model, int n, const NoiseSchedule& sched,
                          std::uint64_t seed);

/// Conditional sampling from the base parameters.
PointSet sample(const ParamStore& params, int concept_row, int n, const NoiseSchedule& sched,
                std::uint64_t seed);

} // namespace imma
