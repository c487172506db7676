#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace imma {

/// Synthetic 2D shape families. The first eight are the pretraining
/// concepts; the last five are held out for personalization runs.
enum class ConceptKind {
    Ring,
    SmallRing,
    TwoMoons,
    Spiral,
    Grid3x3,
    Cross,
    Segment,
    Blob,
    Star,
    SCurve,
    BoxOutline,
    TwoRings,
    Pinwheel,
};

constexpr int kNumPretrainConcepts = 8;
constexpr int kNumHeldOutConcepts = 5;
constexpr int kNumConcepts = kNumPretrainConcepts + kNumHeldOutConcepts;

std::string to_string(ConceptKind k);
std::optional<ConceptKind> concept_kind_from_string(const std::string& s);

struct ConceptSpec {
    ConceptKind kind = ConceptKind::Ring;
    int concept_id = 0;   // embedding row for pretraining concepts (1-based; 0 is the null token)
    float cx = 0.0f;      // placement in [-3,3]^2
    float cy = 0.0f;
    float scale = 1.0f;   // kind-specific extent
    float noise = 0.05f;  // gaussian sigma, > 0
    int arms = 5;         // star / pinwheel only
};

/// Canonical placement and extent for each kind. Pretraining concepts sit in
/// separate cells of a 3x3 layout so that a pointwise classifier can tell
/// them apart; held-out concepts use the diagonal midpoints.
ConceptSpec default_spec(ConceptKind k);

/// Ids 1..8 are pretraining concepts, 9..13 held-out.
std::vector<ConceptSpec> default_concepts();
std::vector<ConceptSpec> pretrain_concepts();
std::vector<ConceptSpec> held_out_concepts();

/// Flat (x0, y0, x1, y1, ...) point buffer.
using PointSet = std::vector<float>;
inline int point_count(const PointSet& p) { return static_cast<int>(p.size() / 2); }

struct ConceptDataset {
    ConceptSpec spec;
    PointSet train;      // adaptation pool
    PointSet reference;  // held-out reference, disjoint draw from the same stream
    std::uint64_t seed = 0;
};

constexpr int kDefaultTrainSize = 2048;
constexpr int kDefaultRefSize = 512;

/// Deterministic in (spec, seed). Train and reference are consecutive draws
/// from a single stream, so no point is ever shared between the splits.
ConceptDataset generate(const ConceptSpec& spec, int n_train, int n_ref, std::uint64_t seed);

/// CSV with header `x,y`, one point per row, %.9g coordinates (exact f32
/// round-trip). Malformed rows are rejected with their 1-based line number.
void save_points_csv(const PointSet& points, const std::filesystem::path& path);
PointSet load_points_csv(const std::filesystem::path& path);

/// Writes <dir>/train.csv and <dir>/reference.csv.
void save_csv(const ConceptDataset& ds, const std::filesystem::path& dir);
/// Reads both splits back; identity comes from the caller.
ConceptDataset load_csv(const std::filesystem::path& dir, const ConceptSpec& spec, std::uint64_t seed = 0);

} // namespace imma
