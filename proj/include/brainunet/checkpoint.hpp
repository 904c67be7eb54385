#pragma once
// Checkpoint directory layout:
//
//   <dir>/manifest     JSON, keys sorted, 2-space indent:
//                      format_version, model (ModelConfig), stage, epoch, metrics,
//                      extra, tensors: [{name, shape, offset, trainable, crc32}]
//   <dir>/weights.bin  float32 little-endian, tensors concatenated in manifest
//                      order; `offset` is in bytes.
//
// BatchNorm running statistics are stored alongside the trainable tensors.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "brainunet/error.hpp"
#include "brainunet/model.hpp"
#include "brainunet/parameters.hpp"

namespace brainunet {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
    std::string stage = "pretrain";
    int epoch = 0;
    nlohmann::json metrics = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();
};

struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t offset = 0;
    bool trainable = true;
    std::uint32_t crc32 = 0;
};

struct CheckpointManifest {
    int format_version = kCheckpointFormatVersion;
    ModelConfig config;
    CheckpointInfo info;
    std::vector<TensorRecord> tensors;
};

struct Checkpoint {
    CheckpointManifest manifest;
    ParameterSet<float> params;
};

namespace checkpoint_detail {

inline std::vector<unsigned char> tensor_bytes(const Tensor<float>& t) {
    std::vector<unsigned char> out(static_cast<std::size_t>(t.size()) * 4);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        std::memcpy(out.data() + i * 4, &u, 4);
    }
    return out;
}

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

inline nlohmann::json manifest_json(const CheckpointManifest& m) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : m.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"trainable", t.trainable},
                           {"crc32", t.crc32}});
    }
    return {{"format_version", m.format_version},
            {"model", to_json(m.config)},
            {"stage", m.info.stage},
            {"epoch", m.info.epoch},
            {"metrics", m.info.metrics},
            {"extra", m.info.extra},
            {"tensors", std::move(tensors)}};
}

inline std::string manifest_text(const CheckpointManifest& m) { return manifest_json(m).dump(2) + "\n"; }

inline CheckpointManifest build_manifest(const ParameterSet<float>& params, const ModelConfig& config,
                                         const CheckpointInfo& info, std::vector<unsigned char>* weights) {
    CheckpointManifest m;
    m.config = config;
    m.info = info;
    std::int64_t offset = 0;
    for (const auto& e : params.entries()) {
        const auto bytes = tensor_bytes(e.value);
        m.tensors.push_back({e.name, e.value.shape(), offset, e.trainable, crc32_of(bytes.data(), bytes.size())});
        offset += static_cast<std::int64_t>(bytes.size());
        if (weights) weights->insert(weights->end(), bytes.begin(), bytes.end());
    }
    return m;
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const ParameterSet<float>& params, const ModelConfig& config, const CheckpointInfo& info,
                            const std::filesystem::path& dir) {
    std::vector<unsigned char> weights;
    const auto m = checkpoint_detail::build_manifest(params, config, info, &weights);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    {
        std::ofstream f(dir / "weights.bin", std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(weights.data()), static_cast<std::streamsize>(weights.size()));
        if (!f) throw IoError("cannot write " + (dir / "weights.bin").string());
    }
    std::ofstream f(dir / "manifest", std::ios::trunc);
    f << checkpoint_detail::manifest_text(m);
    if (!f) throw IoError("cannot write " + (dir / "manifest").string());
}

template <class Model>
void save_checkpoint(const Model& model, const CheckpointInfo& info, const std::filesystem::path& dir) {
    save_checkpoint(model.parameters(), model.config(), info, dir);
}

/// Parses `<dir>/manifest` without touching the tensor data.
inline CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest";
    std::ifstream f(path);
    if (!f) throw IoError("cannot open checkpoint manifest " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
    CheckpointManifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kCheckpointFormatVersion) {
            throw FormatError("checkpoint format version " + std::to_string(m.format_version) + " is not supported (expected " +
                              std::to_string(kCheckpointFormatVersion) + ")");
        }
        m.config = model_config_from_json(j.at("model"));
        m.info.stage = j.value("stage", "");
        m.info.epoch = j.value("epoch", 0);
        m.info.metrics = j.value("metrics", nlohmann::json::object());
        m.info.extra = j.value("extra", nlohmann::json::object());
        for (const auto& t : j.at("tensors")) {
            m.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::int64_t>>(),
                                 t.at("offset").get<std::int64_t>(), t.value("trainable", true),
                                 t.at("crc32").get<std::uint32_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
    return m;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Checkpoint ck;
    ck.manifest = read_checkpoint_manifest(dir);
    const auto wpath = dir / "weights.bin";
    std::ifstream f(wpath, std::ios::binary);
    if (!f) throw IoError("cannot open " + wpath.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (const auto& rec : ck.manifest.tensors) {
        Tensor<float> t(rec.shape);
        const auto n = static_cast<std::size_t>(t.size()) * 4;
        if (rec.offset < 0 || static_cast<std::size_t>(rec.offset) + n > bytes.size()) {
            throw FormatError("tensor '" + rec.name + "' extends past the end of weights.bin");
        }
        const unsigned char* p = bytes.data() + rec.offset;
        if (checkpoint_detail::crc32_of(p, n) != rec.crc32) {
            throw FormatError("checksum mismatch in tensor '" + rec.name + "'");
        }
        for (std::int64_t i = 0; i < t.size(); ++i) {
            std::uint32_t u;
            std::memcpy(&u, p + i * 4, 4);
            if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
            t[i] = std::bit_cast<float>(u);
        }
        ck.params.add(rec.name, std::move(t), rec.trainable);
    }
    return ck;
}

/// Bytes occupied on disk by save_checkpoint: float32 data plus manifest text.
inline std::int64_t serialized_size(const ParameterSet<float>& params, const ModelConfig& config,
                                    const CheckpointInfo& info = {}) {
    const auto m = checkpoint_detail::build_manifest(params, config, info, nullptr);
    return 4 * params.total_count() + static_cast<std::int64_t>(checkpoint_detail::manifest_text(m).size());
}

/// Stable identity of a saved checkpoint: FNV-1a over manifest and weights.
inline std::string checkpoint_identity(const std::filesystem::path& dir) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char* name : {"manifest", "weights.bin"}) {
        std::ifstream f(dir / name, std::ios::binary);
        if (!f) throw IoError("cannot open " + (dir / name).string());
        std::ostringstream ss;
        ss << f.rdbuf();
        h = fnv1a(ss.str(), h);
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

struct TransferReport {
    std::vector<std::string> copied;
    std::vector<std::string> reinitialized;  // in the target but absent or reshaped in the source
    std::vector<std::string> unused;         // in the source only
};

struct TransferResult {
    ParameterSet<float> params;
    TransferReport report;
};

/// Builds parameters for `target`, copying every tensor whose name and shape
/// match the checkpoint and initializing the rest from `seed`.
inline TransferResult transfer_load(const std::filesystem::path& dir, const ModelConfig& target, std::uint64_t seed = 0) {
    auto src = load_checkpoint(dir);
    TransferResult r;
    for (const auto& spec : layout(target)) {
        if (src.params.contains(spec.name) && src.params[spec.name].shape() == spec.shape) {
            r.params.add(spec.name, src.params[spec.name], spec.trainable);
            r.report.copied.push_back(spec.name);
        } else {
            r.params.add(spec.name, initialize_tensor<float>(spec, seed), spec.trainable);
            r.report.reinitialized.push_back(spec.name);
        }
    }
    for (const auto& e : src.params.entries()) {
        if (!r.params.contains(e.name)) r.report.unused.push_back(e.name);
    }
    if (r.report.copied.empty()) {
        throw ValueError("checkpoint " + dir.string() + " shares no tensors with the target model");
    }
    return r;
}

}  // namespace brainunet
