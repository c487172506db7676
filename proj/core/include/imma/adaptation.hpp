#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "imma/denoiser.hpp"

namespace imma {

enum class AdaptKind { TokenInversion, SubsetFineTune, LoRA };

std::string to_string(AdaptKind k);
std::optional<AdaptKind> adapt_kind_from_string(const std::string& s);

struct AdaptMethod {
    AdaptKind kind = AdaptKind::LoRA;
    int rank = 4;                                        // LoRA: 1 <= r < min(n, d)
    std::vector<std::string> lora_layers = kLoraLayers;  // wrapped affine weights
    std::vector<std::string> overlap_selector = kFilmSelector; // SubsetFineTune's U
    bool novel_token = true;

    float default_lr() const;

    static AdaptMethod token_inversion();
    static AdaptMethod subset_finetune();
    static AdaptMethod lora(bool novel_token);
};

/// The adaptation variables phi. Trainable tensors are keyed
///   token.<id>       appended embedding row (1-D, kEmbedDim)
///   lora.<layer>.A   (n x r), initialized N(0, 0.01)
///   lora.<layer>.B   (r x d), initialized zero
///   overlap.<name>   in-place copy of a base parameter (SubsetFineTune)
/// At init the effective model equals the base model exactly.
struct AdapterSet {
    AdaptMethod method;
    ParamStore trainables;
    std::vector<int> new_token_ids;
    std::set<std::string> overlap_names; // U, base-parameter names
    int base_rows = 0;

    bool owns_token(int id) const;
};

struct AdaptConfig {
    int steps = 0;       // optimization steps; epoch boundaries derive from the data size
    float lr = -1.0f;    // < 0 -> method default
    int batch_size = 128;
    std::uint64_t seed = 1;
    int token_id = -1;   // conditioning row; -1 -> the adapter's novel token
};

int steps_per_epoch(int train_count, int batch_size);
int steps_for_epochs(int epochs, int train_count, int batch_size);

/// token_id = -1 appends at the next free row; otherwise at the given row
/// (must be >= the base table size).
AdapterSet init_adapter(const AdaptMethod& method, const ParamStore& model, std::uint64_t seed,
                        int token_id = -1);

/// Which storage supplies the overlapping parameters when building the
/// effective graph: the adapter (inner/adaptation view) or the base model
/// (upper view, after the overlap write-back).
enum class OverlapSource { Adapter, Model };

/// Effective noise-prediction graph: LoRA layers compute (W + AB) x, the
/// overlap source replaces the base FiLM weights, novel tokens broadcast the
/// adapter's embedding row. Every adapter tensor gets a leaf named
/// "adapter.<key>" so gradients are addressable even when unused.
Value effective_noise_graph(Tape& tape, const ParamStore& model, const AdapterSet* adapter,
                            OverlapSource src, bool model_grad, bool adapter_grad,
                            const PointSet& x_t, const std::vector<int>& ts,
                            const std::vector<int>& token_rows);

/// Value-level effective forward (no gradients).
PointSet effective_forward(const ParamStore& model, const AdapterSet* adapter, const PointSet& x_t,
                           const std::vector<int>& ts, const std::vector<int>& token_rows);

/// Adaptation objective on explicit draws; see diffusion_loss_graph.
Value effective_loss_graph(Tape& tape, const ParamStore& model, const AdapterSet* adapter,
                           OverlapSource src, bool model_grad, bool adapter_grad, const PointSet& x0,
                           const std::vector<int>& ts, const std::vector<int>& token_rows,
                           const PointSet& eps, const NoiseSchedule& sched);

struct AdaptResult {
    AdapterSet adapter;
    std::vector<AdapterSet> epoch_checkpoints; // [0] is the initial state
    std::vector<float> loss_trace;
};

/// Adam on phi only; the base model is read-only. Records a checkpoint at
/// every epoch boundary (one pass over dataset.train).
AdaptResult adapt(const ParamStore& model, const AdapterSet& adapter, const ConceptDataset& dataset,
                  const AdaptConfig& config, const NoiseSchedule& sched);

/// Bakes the adapter into a new store: W <- W + AB, overlap values written,
/// token rows appended (ids must extend the table contiguously).
/// merge does not consume the adapter; calling it again on the merged store
/// double-adds the LoRA delta.
ParamStore merge(const ParamStore& model, const AdapterSet& adapter);

/// Ancestral sampling through the effective model.
PointSet sample_effective(const ParamStore& model, const AdapterSet* adapter, int token, int n,
                          const NoiseSchedule& sched, std::uint64_t seed);

} // namespace imma
