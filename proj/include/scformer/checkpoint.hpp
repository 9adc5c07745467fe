#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scformer/model.hpp"
#include "scformer/trainer.hpp"

namespace scformer {

// Checkpoint file layout: 8-byte magic, little-endian u64 manifest length,
// JSON manifest, then every parameter tensor's raw values concatenated in
// visitation order. The manifest pins the full model configuration so a load
// against a different architecture fails loudly, naming the first field that
// differs. Optimizer moments are deliberately not stored; resuming starts
// Adam fresh from the saved weights.
inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'F', 'C', 'K', 'P', 'T', '1'};

inline Variant parse_variant(const std::string& name) {
    if (name == "triangular") return Variant::triangular;
    if (name == "conv") return Variant::conv;
    throw ScfError(errc::config_invalid, "variant must be 'triangular' or 'conv', got '" + name + "'");
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["lookback"] = cfg.lookback;
    j["horizon"] = cfg.horizon;
    j["channels"] = cfg.channels;
    j["embed_dim"] = cfg.embed_dim;
    j["hippo_order"] = cfg.hippo_order;
    j["depth"] = cfg.depth;
    j["heads"] = cfg.heads;
    j["variant"] = variant_name(cfg.variant);
    j["kernel_sizes"] = cfg.kernel_sizes;
    j["softmax"] = cfg.softmax;
    j["residual"] = cfg.residual;
    j["layer_norm"] = cfg.layer_norm;
    j["extra_ffn"] = cfg.extra_ffn;
    j["use_hippo"] = cfg.use_hippo;
    j["use_lookback"] = cfg.use_lookback;
    j["constrained"] = cfg.constrained;
    j["precision"] = cfg.precision;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{
        "lookback",   "horizon",  "channels", "embed_dim",  "hippo_order", "depth",
        "heads",      "variant",  "kernel_sizes", "softmax", "residual",   "layer_norm",
        "extra_ffn",  "use_hippo", "use_lookback", "constrained", "precision"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ScfError(errc::config_invalid, "unknown model config key '" + it.key() + "'");
    }
    ModelConfig cfg;
    try {
        if (j.contains("lookback")) cfg.lookback = j["lookback"].get<std::size_t>();
        if (j.contains("horizon")) cfg.horizon = j["horizon"].get<std::size_t>();
        if (j.contains("channels")) cfg.channels = j["channels"].get<std::size_t>();
        if (j.contains("embed_dim")) cfg.embed_dim = j["embed_dim"].get<std::size_t>();
        if (j.contains("hippo_order")) cfg.hippo_order = j["hippo_order"].get<std::size_t>();
        if (j.contains("depth")) cfg.depth = j["depth"].get<std::size_t>();
        if (j.contains("heads")) cfg.heads = j["heads"].get<std::size_t>();
        if (j.contains("variant")) cfg.variant = parse_variant(j["variant"].get<std::string>());
        if (j.contains("kernel_sizes")) cfg.kernel_sizes = j["kernel_sizes"].get<std::vector<std::size_t>>();
        if (j.contains("softmax")) cfg.softmax = j["softmax"].get<bool>();
        if (j.contains("residual")) cfg.residual = j["residual"].get<bool>();
        if (j.contains("layer_norm")) cfg.layer_norm = j["layer_norm"].get<bool>();
        if (j.contains("extra_ffn")) cfg.extra_ffn = j["extra_ffn"].get<bool>();
        if (j.contains("use_hippo")) cfg.use_hippo = j["use_hippo"].get<bool>();
        if (j.contains("use_lookback")) cfg.use_lookback = j["use_lookback"].get<bool>();
        if (j.contains("constrained")) cfg.constrained = j["constrained"].get<bool>();
        if (j.contains("precision")) cfg.precision = j["precision"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, std::string("model config: ") + e.what());
    }
    return cfg;
}

namespace detail {

inline void compare_config_field(const std::string& name, const nlohmann::json& saved,
                                 const nlohmann::json& live) {
    if (saved != live) {
        throw ScfError(errc::checkpoint_mismatch, "checkpoint field '" + name + "' is " + saved.dump() +
                                                      " but the live config has " + live.dump());
    }
}

}  // namespace detail

template <typename T>
void checkpoint_save(const std::string& path, ModelParams<T>& params, const ModelConfig& cfg,
                     std::uint64_t seed = 0) {
    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["seed"] = seed;
    manifest["model"] = model_config_to_json(cfg);
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t payload = 0;
    visit_params(params, [&](const ParamRef<T>& r) {
        nlohmann::json t;
        t["name"] = r.name;
        t["shape"] = r.tensor.shape();
        t["count"] = r.tensor.numel();
        tensors.push_back(t);
        payload += r.tensor.numel() * sizeof(T);
    });
    manifest["tensors"] = tensors;
    manifest["payload_bytes"] = payload;
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ScfError(errc::io_error, "checkpoint_save: cannot write '" + path + "'");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    visit_params(params, [&](const ParamRef<T>& r) {
        const auto& v = r.tensor.value();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)));
    });
    if (!out) throw ScfError(errc::io_error, "checkpoint_save: short write to '" + path + "'");
}

inline nlohmann::json checkpoint_manifest(const std::string& path,
                                          std::size_t* payload_offset = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScfError(errc::io_error, "checkpoint: cannot open '" + path + "'");
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: bad magic in '" + path + "'");
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ull << 32))
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: bad manifest length in '" + path + "'");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len)))
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: truncated manifest in '" + path + "'");
    nlohmann::json manifest = nlohmann::json::parse(text, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object() || manifest.value("format", 0) != 1)
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: unparseable manifest in '" + path + "'");
    if (payload_offset) *payload_offset = sizeof(kCheckpointMagic) + sizeof(len) + len;
    return manifest;
}

template <typename T>
ModelParams<T> checkpoint_load(const std::string& path, const ModelConfig& cfg) {
    std::size_t payload_offset = 0;
    auto manifest = checkpoint_manifest(path, &payload_offset);
    const auto saved = manifest["model"];
    const auto live = model_config_to_json(cfg);
    for (auto it = live.begin(); it != live.end(); ++it) {
        if (!saved.contains(it.key()))
            throw ScfError(errc::checkpoint_corrupt, "checkpoint: manifest lacks model field '" + it.key() + "'");
        detail::compare_config_field(it.key(), saved[it.key()], it.value());
    }
    const std::size_t t_size = cfg.precision == "f32" ? 4 : 8;
    if (sizeof(T) != t_size)
        throw ScfError(errc::checkpoint_mismatch, "checkpoint: precision '" + cfg.precision +
                                                      "' does not match the requested load type");

    auto params = init_params<T>(cfg, 0);
    std::vector<ParamRef<T>> refs;
    visit_params(params, [&](const ParamRef<T>& r) { refs.push_back(r); });

    const auto& tensors = manifest["tensors"];
    if (!tensors.is_array() || tensors.size() != refs.size())
        throw ScfError(errc::checkpoint_mismatch, "checkpoint: tensor list does not match the model");
    std::size_t payload = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (tensors[i].value("name", "") != refs[i].name)
            throw ScfError(errc::checkpoint_mismatch, "checkpoint: tensor " + std::to_string(i) + " is '" +
                                                          tensors[i].value("name", "") + "', expected '" +
                                                          refs[i].name + "'");
        if (tensors[i].value("count", std::size_t(0)) != refs[i].tensor.numel())
            throw ScfError(errc::checkpoint_mismatch,
                           "checkpoint: tensor '" + refs[i].name + "' size mismatch");
        payload += refs[i].tensor.numel() * sizeof(T);
    }
    if (manifest.value("payload_bytes", std::size_t(0)) != payload)
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: payload size disagrees with manifest");

    std::ifstream in(path, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(payload_offset));
    for (auto& r : refs) {
        auto& v = r.tensor.node()->value;
        if (!in.read(reinterpret_cast<char*>(v.data()),
                     static_cast<std::streamsize>(v.size() * sizeof(T))))
            throw ScfError(errc::checkpoint_corrupt, "checkpoint: truncated payload in '" + path + "'");
    }
    char extra = 0;
    if (in.read(&extra, 1))
        throw ScfError(errc::checkpoint_corrupt, "checkpoint: trailing bytes in '" + path + "'");
    return params;
}

}  // namespace scformer
