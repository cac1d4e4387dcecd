// Single-file checkpoint: magic + version, a JSON index block (config,
// vocabulary, RNG state, step counter, array directory), then all named
// arrays as little-endian 64-bit floats.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigencent/model.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

inline constexpr char kCheckpointMagic[4] = {'E', 'I', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void put_f64_le(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64_le(out, bits);
}

inline double get_f64_le(const unsigned char* p) {
    const std::uint64_t bits = get_u64_le(p);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace detail

/// Serializes params and Adam moments of every ParamStore entry plus caller
/// metadata (config, vocab, rng state, step). Returns the raw file bytes.
inline std::string serialize_checkpoint(const ParamStore& ps, const nlohmann::json& meta) {
    nlohmann::json index = meta;
    index["format_version"] = kCheckpointVersion;
    nlohmann::json arrays = nlohmann::json::array();

    std::string payload;
    auto append_array = [&](const std::string& name, const double* data, std::size_t count) {
        nlohmann::json a;
        a["name"] = name;
        a["offset"] = payload.size();
        a["count"] = count;
        arrays.push_back(std::move(a));
        for (std::size_t i = 0; i < count; ++i) detail::put_f64_le(payload, data[i]);
    };
    for (const auto& e : ps.entries) {
        append_array(e.name, e.param, e.size);
        append_array(e.name + ".adam_m", e.m.data(), e.size);
        append_array(e.name + ".adam_v", e.v.data(), e.size);
    }
    index["arrays"] = std::move(arrays);

    const std::string index_text = index.dump();
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32_le(out, kCheckpointVersion);
    detail::put_u64_le(out, index_text.size());
    out += index_text;
    out += payload;
    return out;
}

struct LoadedCheckpoint {
    nlohmann::json meta;
    std::map<std::string, Vector> arrays;

    const Vector& array(const std::string& name) const {
        auto it = arrays.find(name);
        require(it != arrays.end(), "checkpoint: missing array " + name);
        return it->second;
    }

    /// Copies params and moments back into a matching ParamStore.
    void apply_to(ParamStore& ps) const {
        for (auto& e : ps.entries) {
            const Vector& p = array(e.name);
            require(p.size() == e.size, "checkpoint: size mismatch for " + e.name);
            std::memcpy(e.param, p.data(), e.size * sizeof(double));
            const Vector& m = array(e.name + ".adam_m");
            const Vector& v = array(e.name + ".adam_v");
            require(m.size() == e.size && v.size() == e.size,
                    "checkpoint: moment size mismatch for " + e.name);
            e.m = m;
            e.v = v;
        }
    }
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
    require(bytes.size() >= 16, "checkpoint: truncated header");
    require(std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, "checkpoint: bad magic");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = detail::get_u32_le(p + 4);
    require(version == kCheckpointVersion,
            "checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t index_len = detail::get_u64_le(p + 8);
    require(bytes.size() >= 16 + index_len, "checkpoint: truncated index");

    LoadedCheckpoint out;
    out.meta = nlohmann::json::parse(bytes.substr(16, index_len));
    const std::size_t payload_start = 16 + index_len;
    for (const auto& a : out.meta.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::size_t offset = a.at("offset").get<std::size_t>();
        const std::size_t count = a.at("count").get<std::size_t>();
        require(payload_start + offset + count * 8 <= bytes.size(),
                "checkpoint: array " + name + " out of bounds");
        Vector v(count);
        const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start +
                          offset;
        for (std::size_t i = 0; i < count; ++i) v[i] = detail::get_f64_le(src + i * 8);
        out.arrays.emplace(name, std::move(v));
    }
    return out;
}

inline void write_checkpoint_file(const std::string& path, const ParamStore& ps,
                                  const nlohmann::json& meta) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint for writing: " + path);
    const std::string bytes = serialize_checkpoint(ps, meta);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), "failed writing checkpoint: " + path);
}

inline LoadedCheckpoint read_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

}  // namespace eigencent
