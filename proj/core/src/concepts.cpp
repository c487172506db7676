#include "imma/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "imma/rng.hpp"

namespace imma {

namespace {

constexpr float kPi = 3.14159265358979323846f;
constexpr float kBound = 3.0f;

struct KindName {
    ConceptKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {ConceptKind::Ring, "ring"},
    {ConceptKind::SmallRing, "small_ring"},
    {ConceptKind::TwoMoons, "two_moons"},
    {ConceptKind::Spiral, "spiral"},
    {ConceptKind::Grid3x3, "grid3x3"},
    {ConceptKind::Cross, "cross"},
    {ConceptKind::Segment, "segment"},
    {ConceptKind::Blob, "blob"},
    {ConceptKind::Star, "star"},
    {ConceptKind::SCurve, "s_curve"},
    {ConceptKind::BoxOutline, "box_outline"},
    {ConceptKind::TwoRings, "two_rings"},
    {ConceptKind::Pinwheel, "pinwheel"},
};

// Noise-free point on the shape's support, centered at the origin.
void base_point(const ConceptSpec& s, Rng& rng, float& x, float& y) {
    switch (s.kind) {
        case ConceptKind::Ring:
        case ConceptKind::SmallRing: {
            const float a = rng.uniform(0.0f, 2.0f * kPi);
            x = s.scale * std::cos(a);
            y = s.scale * std::sin(a);
            break;
        }
        case ConceptKind::TwoMoons: {
            const float t = rng.uniform(0.0f, kPi);
            if (rng.uniform() < 0.5f) {
                x = std::cos(t) - 0.5f;
                y = std::sin(t) - 0.25f;
            } else {
                x = 1.0f - std::cos(t) - 0.5f;
                y = 0.5f - std::sin(t) - 0.25f;
            }
            x *= s.scale;
            y *= s.scale;
            break;
        }
        case ConceptKind::Spiral: {
            // arm sweeps 1.5 turns through the annular band [0.55, 1] * scale
            const float u = rng.uniform();
            const float a = 3.0f * kPi * u;
            const float r = s.scale * (0.55f + 0.45f * u);
            x = r * std::cos(a);
            y = r * std::sin(a);
            break;
        }
        case ConceptKind::Grid3x3: {
            const int cell = rng.uniform_int(9);
            x = s.scale * static_cast<float>(cell % 3 - 1);
            y = s.scale * static_cast<float>(cell / 3 - 1);
            break;
        }
        case ConceptKind::Cross: {
            const float u = rng.uniform(-s.scale, s.scale);
            if (rng.uniform() < 0.5f) {
                x = u;
                y = 0.0f;
            } else {
                x = 0.0f;
                y = u;
            }
            break;
        }
        case ConceptKind::Segment: {
            const float u = rng.uniform(-s.scale, s.scale);
            x = u * 0.70710678f;
            y = u * 0.70710678f;
            break;
        }
        case ConceptKind::Blob:
            x = 0.0f;
            y = 0.0f;
            break;
        case ConceptKind::Star: {
            const int edges = 2 * s.arms;
            const int e = rng.uniform_int(edges);
            const float t = rng.uniform();
            auto vertex = [&](int k, float& vx, float& vy) {
                const float r = (k % 2 == 0) ? s.scale : 0.42f * s.scale;
                const float a = 0.5f * kPi + kPi * static_cast<float>(k) / static_cast<float>(s.arms);
                vx = r * std::cos(a);
                vy = r * std::sin(a);
            };
            float x0, y0, x1, y1;
            vertex(e, x0, y0);
            vertex((e + 1) % edges, x1, y1);
            x = x0 + t * (x1 - x0);
            y = y0 + t * (y1 - y0);
            break;
        }
        case ConceptKind::SCurve: {
            const float t = rng.uniform(-1.0f, 1.0f);
            x = s.scale * std::sin(kPi * t);
            y = 2.0f * s.scale * t;
            break;
        }
        case ConceptKind::BoxOutline: {
            const int side = rng.uniform_int(4);
            const float u = rng.uniform(-s.scale, s.scale);
            switch (side) {
                case 0: x = u; y = s.scale; break;
                case 1: x = u; y = -s.scale; break;
                case 2: x = s.scale; y = u; break;
                default: x = -s.scale; y = u; break;
            }
            break;
        }
        case ConceptKind::TwoRings: {
            const float r = (rng.uniform() < 0.5f) ? 0.45f * s.scale : s.scale;
            const float a = rng.uniform(0.0f, 2.0f * kPi);
            x = r * std::cos(a);
            y = r * std::sin(a);
            break;
        }
        case ConceptKind::Pinwheel: {
            const int arm = rng.uniform_int(s.arms);
            const float t = rng.uniform();
            const float r = s.scale * (0.2f + 0.8f * t);
            const float a = 2.0f * kPi * static_cast<float>(arm) / static_cast<float>(s.arms) + 1.6f * t;
            x = r * std::cos(a);
            y = r * std::sin(a);
            break;
        }
    }
}

} // namespace

std::string to_string(ConceptKind k) {
    for (const auto& kn : kKindNames)
        if (kn.kind == k) return kn.name;
    throw std::invalid_argument("to_string: unknown concept kind");
}

std::optional<ConceptKind> concept_kind_from_string(const std::string& s) {
    for (const auto& kn : kKindNames)
        if (s == kn.name) return kn.kind;
    return std::nullopt;
}

ConceptSpec default_spec(ConceptKind k) {
    // Two concentric rings sit at the origin (the terminal-SNR mismatch of
    // the short noise schedule pulls samples toward the origin, so centered
    // concepts reproduce best); the other six pretraining concepts ring the
    // center at radius 2. Held-out concepts interleave at radius 1.35 and
    // may overlap base supports; only the eight pretraining concepts need
    // pointwise separability.
    switch (k) {
        case ConceptKind::Ring:       return {k, 1, 0.0f, 0.0f, 0.95f, 0.06f, 5};
        case ConceptKind::SmallRing:  return {k, 2, 0.0f, 0.0f, 0.32f, 0.05f, 5};
        case ConceptKind::TwoMoons:   return {k, 3, 0.0f, 2.05f, 0.42f, 0.10f, 5};
        case ConceptKind::Spiral:     return {k, 4, 1.78f, 1.03f, 0.55f, 0.05f, 5};
        case ConceptKind::Grid3x3:    return {k, 5, -1.78f, 1.03f, 0.32f, 0.09f, 5};
        case ConceptKind::Cross:      return {k, 6, -1.78f, -1.03f, 0.52f, 0.09f, 5};
        case ConceptKind::Segment:    return {k, 7, 0.0f, -2.05f, 0.58f, 0.09f, 5};
        case ConceptKind::Blob:       return {k, 8, 1.78f, -1.03f, 1.0f, 0.24f, 5};
        case ConceptKind::Star:       return {k, 9, 0.675f, 1.169f, 0.28f, 0.045f, 5};
        case ConceptKind::SCurve:     return {k, 10, -0.903f, 1.003f, 0.26f, 0.05f, 5};
        case ConceptKind::BoxOutline: return {k, 11, -1.233f, -0.549f, 0.26f, 0.045f, 5};
        case ConceptKind::TwoRings:   return {k, 12, 0.141f, -1.343f, 0.30f, 0.035f, 5};
        case ConceptKind::Pinwheel:   return {k, 13, 1.320f, -0.281f, 0.28f, 0.03f, 3};
    }
    throw std::invalid_argument("default_spec: unknown concept kind");
}

std::vector<ConceptSpec> default_concepts() {
    std::vector<ConceptSpec> out;
    for (const auto& kn : kKindNames) out.push_back(default_spec(kn.kind));
    return out;
}

std::vector<ConceptSpec> pretrain_concepts() {
    auto all = default_concepts();
    return {all.begin(), all.begin() + kNumPretrainConcepts};
}

std::vector<ConceptSpec> held_out_concepts() {
    auto all = default_concepts();
    return {all.begin() + kNumPretrainConcepts, all.end()};
}

ConceptDataset generate(const ConceptSpec& spec, int n_train, int n_ref, std::uint64_t seed) {
    if (n_train < 0 || n_ref < 0) throw std::invalid_argument("generate: negative sample count");
    if (spec.noise <= 0.0f) throw std::invalid_argument("generate: noise sigma must be > 0");
    if (spec.arms < 1) throw std::invalid_argument("generate: arm count must be >= 1");

    Rng rng(derive_seed(seed, "concept/" + to_string(spec.kind)));
    auto draw = [&](int n) {
        PointSet out;
        out.reserve(static_cast<std::size_t>(n) * 2);
        for (int i = 0; i < n; ++i) {
            float x, y;
            base_point(spec, rng, x, y);
            x += spec.cx + spec.noise * rng.normal();
            y += spec.cy + spec.noise * rng.normal();
            out.push_back(std::clamp(x, -kBound, kBound));
            out.push_back(std::clamp(y, -kBound, kBound));
        }
        return out;
    };

    ConceptDataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.train = draw(n_train);
    ds.reference = draw(n_ref);
    return ds;
}

void save_points_csv(const PointSet& points, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_points_csv: cannot open " + path.string());
    f << "x,y\n";
    char buf[64];
    for (int i = 0; i < point_count(points); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", points[2 * i], points[2 * i + 1]);
        f << buf;
    }
    if (!f) throw std::runtime_error("save_points_csv: write failed for " + path.string());
}

PointSet load_points_csv(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_points_csv: cannot open " + path.string());
    std::string line;
    int lineno = 0;
    PointSet out;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != "x,y")
                throw std::runtime_error("load_points_csv: bad header at line 1 in " + path.string());
            continue;
        }
        if (line.empty()) continue;
        const auto ncommas = std::count(line.begin(), line.end(), ',');
        if (ncommas != 1)
            throw std::runtime_error("load_points_csv: expected 2 columns at line " + std::to_string(lineno) +
                                     " in " + path.string());
        const auto comma = line.find(',');
        auto parse = [&](const std::string& s) {
            std::size_t used = 0;
            float v;
            try {
                v = std::stof(s, &used);
            } catch (const std::exception&) {
                throw std::runtime_error("load_points_csv: malformed number at line " + std::to_string(lineno) +
                                         " in " + path.string());
            }
            if (used != s.size())
                throw std::runtime_error("load_points_csv: malformed number at line " + std::to_string(lineno) +
                                         " in " + path.string());
            return v;
        };
        out.push_back(parse(line.substr(0, comma)));
        out.push_back(parse(line.substr(comma + 1)));
    }
    return out;
}

void save_csv(const ConceptDataset& ds, const std::filesystem::path& dir) {
    save_points_csv(ds.train, dir / "train.csv");
    save_points_csv(ds.reference, dir / "reference.csv");
}

ConceptDataset load_csv(const std::filesystem::path& dir, const ConceptSpec& spec, std::uint64_t seed) {
    ConceptDataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.train = load_points_csv(dir / "train.csv");
    ds.reference = load_points_csv(dir / "reference.csv");
    return ds;
}

} // namespace imma
