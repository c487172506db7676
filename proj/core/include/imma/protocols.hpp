#pragma once

#include <filesystem>

#include "imma/checkpoint.hpp"
#include "imma/erasure.hpp"
#include "imma/errors.hpp"
#include "imma/immunize.hpp"
#include "imma/metrics.hpp"
#include "imma/report.hpp"

namespace imma {

struct SeedConfig {
    std::uint64_t train = 1;
    std::uint64_t eval = 9001; // sampling/eval stream, separate from training
    std::uint64_t data = 42;
};

struct DataConfig {
    int train = kDefaultTrainSize;
    int reference = kDefaultRefSize;
};

struct EraseSettings {
    int steps = 1000;
    float lr = 1e-3f;
    int batch_size = 128;
};

struct AdaptSettings {
    int epochs = 20;
    int batch_size = 128;
    float lr = -1.0f; // < 0 -> method default
    int token = -1;   // novel adaptation token row; -1 -> auto
};

struct ImmaSettings {
    int iterations = 500;
    int inner_steps = 1;
    float upper_lr = 1e-4f;
    float inner_lr = -1.0f;
    int batch_adapt = 64;
    int batch_upper = 64;
    int imma_token = -1; // -1 -> auto (distinct from the adaptation token)
};

/// One JSON document per run; unknown keys are rejected.
struct ProtocolConfig {
    std::string protocol; // relearn | personalize | crossed | ablation | erasure-only
    std::string target;
    std::string other;                 // second concept for RSGR / ablation; auto when empty
    std::vector<std::string> methods;  // adaptation methods; protocol default when empty
    std::string out_dir;
    std::string pretrained_ckpt;       // optional; must exist when given
    SeedConfig seeds;
    DataConfig data;
    int eval_samples = 512;
    TrainConfig pretrain;
    EraseSettings erase;
    AdaptSettings adapt;
    ImmaSettings imma;
};

ProtocolConfig parse_protocol_config_text(const std::string& text, const std::string& where);
ProtocolConfig parse_protocol_config_file(const std::filesystem::path& path);

/// Stable serialization (sorted keys); its hash is the run id.
std::string canonical_config_json(const ProtocolConfig& cfg);
std::string run_id_of(const ProtocolConfig& cfg);

/// Shared artifacts for one run: schedule, datasets, pretrained model,
/// frozen evaluation classifier.
struct LabContext {
    NoiseSchedule sched;
    std::vector<ConceptDataset> concepts; // ids 1..13
    ParamStore pretrained;
    EvalClassifier classifier;

    const ConceptDataset& dataset(const std::string& name) const;
    const ConceptDataset& dataset_by_id(int concept_id) const;
};

LabContext build_context(const ProtocolConfig& cfg);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ProtocolResult {
    std::vector<ReportRow> rows;
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

/// Per-concept accuracy and similarity of an erased model against the base.
std::vector<ReportRow> erasure_report(const ParamStore& base, const ParamStore& erased,
                                      const std::vector<ConceptDataset>& datasets,
                                      const EvalClassifier& clf, int target_id,
                                      const NoiseSchedule& sched, int n_samples,
                                      std::uint64_t eval_seed, const std::string& run_id);

ProtocolResult run_relearn(const ProtocolConfig& cfg, const LabContext& ctx);
ProtocolResult run_personalize(const ProtocolConfig& cfg, const LabContext& ctx);
ProtocolResult run_crossed(const ProtocolConfig& cfg, const LabContext& ctx);
ProtocolResult run_ablation(const ProtocolConfig& cfg, const LabContext& ctx);
ProtocolResult run_erasure_only(const ProtocolConfig& cfg, const LabContext& ctx);

ProtocolResult run_protocol(const ProtocolConfig& cfg, const LabContext& ctx);

/// Builds the context, runs the protocol, and persists config + report
/// (and intermediate checkpoints) under cfg.out_dir when set.
ProtocolResult execute_protocol(const ProtocolConfig& cfg);

} // namespace imma
