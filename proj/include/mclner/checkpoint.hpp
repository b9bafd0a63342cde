#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mclner/common.hpp"
#include "mclner/io.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'L', 'N', 'E', 'R', '0', '1'};

struct Checkpoint {
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor>> tensors; // declaration order

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

// Layout: 8-byte magic, u64-LE metadata length, UTF-8 JSON metadata
// {"tensors":[{"name","shape"}...],"config":{...}}, then each tensor's values
// as little-endian float32 in declaration order.
inline std::string serialize_checkpoint(
    const std::vector<std::pair<std::string, const Tensor*>>& tensors,
    const nlohmann::json& config) {
    nlohmann::json meta;
    meta["tensors"] = nlohmann::json::array();
    std::size_t payload = 0;
    for (const auto& [name, t] : tensors) {
        meta["tensors"].push_back({{"name", name}, {"shape", t->shape}});
        payload += t->size() * 4;
    }
    meta["config"] = config;
    const std::string meta_str = meta.dump();

    std::string out;
    out.reserve(8 + 8 + meta_str.size() + payload);
    out.append(kCheckpointMagic, 8);
    append_u64_le(out, meta_str.size());
    out += meta_str;
    for (const auto& [name, t] : tensors)
        for (float x : t->v) append_u32_le(out, std::bit_cast<std::uint32_t>(x));
    return out;
}

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                            const nlohmann::json& config) {
    write_file_atomic(path, serialize_checkpoint(tensors, config));
}

inline Checkpoint parse_checkpoint(const std::string& data, const std::string& origin) {
    if (data.size() < 16 || std::string_view(data.data(), 8) != std::string_view(kCheckpointMagic, 8))
        throw FormatError("not a checkpoint (bad magic): " + origin);
    const std::uint64_t meta_len = read_u64_le(data.data() + 8);
    if (16 + meta_len > data.size())
        throw FormatError("truncated checkpoint metadata: " + origin);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(data.substr(16, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint metadata is not valid JSON: " + origin + ": " + e.what());
    }
    if (!meta.contains("tensors") || !meta["tensors"].is_array() || !meta.contains("config"))
        throw FormatError("checkpoint metadata missing tensors/config: " + origin);

    Checkpoint ck;
    ck.config = meta["config"];
    std::size_t off = 16 + meta_len;
    for (const auto& entry : meta["tensors"]) {
        if (!entry.contains("name") || !entry.contains("shape"))
            throw FormatError("checkpoint tensor entry missing name/shape: " + origin);
        Shape shape = entry["shape"].get<Shape>();
        Tensor t(shape);
        if (off + t.size() * 4 > data.size())
            throw FormatError("checkpoint payload shorter than declared shapes: " + origin);
        for (std::size_t i = 0; i < t.size(); ++i, off += 4)
            t.v[i] = std::bit_cast<float>(read_u32_le(data.data() + off));
        ck.tensors.emplace_back(entry["name"].get<std::string>(), std::move(t));
    }
    if (off != data.size())
        throw FormatError("checkpoint has " + std::to_string(data.size() - off) +
                          " trailing bytes: " + origin);
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return parse_checkpoint(read_file(path), path);
}

} // namespace mclner
