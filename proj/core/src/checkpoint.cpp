#include "imma/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>

#include <json.hpp>

#include "imma/errors.hpp"

namespace imma {

namespace {

using nlohmann::json;

const std::set<std::string> kRoles = {"pretrained", "erased", "immunized", "adapter", "classifier"};
constexpr const char* kB64Alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

json meta_to_json(const CheckpointMeta& m) {
    json j;
    j["role"] = m.role;
    if (!m.method.empty()) j["method"] = m.method;
    if (!m.target.empty()) j["target"] = m.target;
    j["seed"] = m.seed;
    if (!m.command.empty()) j["command"] = m.command;
    if (!m.token_ids.empty()) j["token_ids"] = m.token_ids;
    if (m.base_rows > 0) j["base_rows"] = m.base_rows;
    return j;
}

CheckpointMeta meta_from_json(const json& j, const std::string& where) {
    CheckpointMeta m;
    for (const auto& [key, val] : j.items()) {
        if (key == "role")
            m.role = val.get<std::string>();
        else if (key == "method")
            m.method = val.get<std::string>();
        else if (key == "target")
            m.target = val.get<std::string>();
        else if (key == "seed")
            m.seed = val.get<std::uint64_t>();
        else if (key == "command")
            m.command = val.get<std::string>();
        else if (key == "token_ids")
            m.token_ids = val.get<std::vector<int>>();
        else if (key == "base_rows")
            m.base_rows = val.get<int>();
        else
            throw ConfigError(where + ": unknown metadata field '" + key + "'");
    }
    if (!kRoles.count(m.role)) throw ConfigError(where + ": invalid role '" + m.role + "'");
    return m;
}

json parse_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("checkpoint not found: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + path.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ConfigError("checkpoint " + path.string() + ": not a JSON object");
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (key != "format" && key != "metadata" && key != "params")
            throw ConfigError("checkpoint " + path.string() + ": unknown top-level field '" + key + "'");
    }
    if (j.value("format", std::string()) != kCheckpointFormat)
        throw ConfigError("checkpoint " + path.string() + ": format tag is not " +
                          std::string(kCheckpointFormat));
    return j;
}

} // namespace

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned v = static_cast<unsigned>(data[i]) << 16;
        if (i + 1 < len) v |= static_cast<unsigned>(data[i + 1]) << 8;
        if (i + 2 < len) v |= static_cast<unsigned>(data[i + 2]);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Alphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Alphabet[v & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw ConfigError("base64: length is not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        unsigned v = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw ConfigError("base64: misplaced padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0) throw ConfigError("base64: data after padding");
            const int d = value_of(c);
            if (d < 0) throw ConfigError("base64: invalid character");
            v = (v << 6) | static_cast<unsigned>(d);
        }
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
        if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xFF));
    }
    return out;
}

void save_checkpoint(const ParamStore& store, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    if (!kRoles.count(meta.role))
        throw ConfigError("save_checkpoint: invalid role '" + meta.role + "'");

    json params = json::object();
    for (const auto& [name, t] : store) {
        std::vector<unsigned char> bytes(t.data.size() * 4);
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const auto u = std::bit_cast<std::uint32_t>(t.data[i]);
            bytes[4 * i] = static_cast<unsigned char>(u & 0xFF);
            bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
            bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
            bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
        }
        params[name] = {{"shape", t.shape},
                        {"dtype", "f32le"},
                        {"data", base64_encode(bytes.data(), bytes.size())}};
    }

    json j;
    j["format"] = kCheckpointFormat;
    j["metadata"] = meta_to_json(meta);
    j["params"] = std::move(params);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    f << j.dump(1) << "\n";
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const json j = parse_file(path);
    LoadedCheckpoint out;
    out.meta = meta_from_json(j.at("metadata"), path.string());

    const json& params = j.at("params");
    if (!params.is_object()) throw ConfigError(path.string() + ": params must be an object");
    for (const auto& [name, spec] : params.items()) {
        for (const auto& [key, val] : spec.items()) {
            (void)val;
            if (key != "shape" && key != "dtype" && key != "data")
                throw ConfigError(path.string() + ": unknown field '" + key + "' in parameter '" + name + "'");
        }
        if (spec.value("dtype", std::string()) != "f32le")
            throw ConfigError(path.string() + ": parameter '" + name + "' has unsupported dtype");
        const Shape shape = spec.at("shape").get<Shape>();
        std::vector<unsigned char> bytes;
        try {
            bytes = base64_decode(spec.at("data").get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": parameter '" + name + "': " + e.what());
        }
        const std::int64_t n = shape_numel(shape);
        if (static_cast<std::int64_t>(bytes.size()) != n * 4)
            throw ConfigError(path.string() + ": parameter '" + name + "' payload length " +
                              std::to_string(bytes.size()) + " does not match shape " + shape_str(shape));
        std::vector<float> data(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                                    (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                                    (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                                    (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
            data[static_cast<std::size_t>(i)] = std::bit_cast<float>(u);
        }
        out.store[name] = Tensor(shape, std::move(data), true);
    }
    return out;
}

CheckpointMeta load_checkpoint_meta(const std::filesystem::path& path) {
    const json j = parse_file(path);
    return meta_from_json(j.at("metadata"), path.string());
}

void save_adapter(const AdapterSet& adapter, CheckpointMeta meta, const std::filesystem::path& path) {
    meta.role = "adapter";
    if (meta.method.empty()) meta.method = to_string(adapter.method.kind);
    meta.token_ids = adapter.new_token_ids;
    meta.base_rows = adapter.base_rows;
    save_checkpoint(adapter.trainables, meta, path);
}

AdapterSet load_adapter(const std::filesystem::path& path, const AdaptMethod& method) {
    const LoadedCheckpoint c = load_checkpoint(path);
    if (c.meta.role != "adapter")
        throw ConfigError(path.string() + ": role is '" + c.meta.role + "', expected 'adapter'");
    if (c.meta.method != to_string(method.kind))
        throw ConfigError(path.string() + ": method '" + c.meta.method + "' does not match");

    AdapterSet a;
    a.method = method;
    a.trainables = c.store;
    a.new_token_ids = c.meta.token_ids;
    a.base_rows = c.meta.base_rows;
    for (const auto& [key, t] : c.store) {
        (void)t;
        if (key.rfind("overlap.", 0) == 0) a.overlap_names.insert(key.substr(8));
    }
    return a;
}

} // namespace imma
