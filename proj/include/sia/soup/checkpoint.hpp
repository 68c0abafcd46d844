#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>

#include "sia/numerics/tensor.hpp"
#include "sia/util/files.hpp"
#include "sia/util/text.hpp"

namespace sia {

/// Parameters plus provenance. Conventional metadata keys: stage, aug,
/// iterations, seed, config_hash, and metric.* entries.
struct Checkpoint {
    ParamSet<float> params;
    std::map<std::string, std::string> metadata;

    std::string meta(const std::string& key, const std::string& fallback = "") const {
        auto it = metadata.find(key);
        return it == metadata.end() ? fallback : it->second;
    }

    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::string_view kCheckpointMagic = "SOUPCKPT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    std::string_view take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw Error(source_ + ": truncated checkpoint at byte " + std::to_string(pos_));
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint16_t u16() {
        auto s = take(2);
        return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) | (static_cast<unsigned char>(s[1]) << 8));
    }
    std::uint32_t u32() {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& source() const { return source_; }

private:
    std::string_view bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

/// Binary layout (all integers little-endian):
///   "SOUPCKPT" | u16 version | u32 metadata byte length | metadata text
///   ("key=value\n" lines, keys sorted) | u32 tensor count | per tensor:
///   u32 name length, name bytes, u32 rank, u32 extents[rank],
///   float32 payload[prod(extents)].
inline std::string serialize_checkpoint(const Checkpoint& c) {
    using namespace ckpt_detail;
    std::string out(kCheckpointMagic);
    put_u16(out, kCheckpointVersion);
    std::string meta;
    for (const auto& [k, v] : c.metadata) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw Error("checkpoint metadata '" + k + "' contains a reserved character");
        meta += k + "=" + v + "\n";
    }
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    put_u32(out, static_cast<std::uint32_t>(c.params.size()));
    for (const auto& [name, t] : c.params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
    ckpt_detail::Reader r(bytes, source);
    if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw Error(source + ": not a checkpoint (bad magic)");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw Error(source + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const std::string meta(r.take(r.u32()));
    std::size_t start = 0;
    while (start < meta.size()) {
        const auto nl = meta.find('\n', start);
        if (nl == std::string::npos) throw Error(source + ": unterminated metadata line");
        const std::string line = meta.substr(start, nl - start);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(source + ": malformed metadata line '" + line + "'");
        c.metadata[line.substr(0, eq)] = line.substr(eq + 1);
        start = nl + 1;
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(r.take(r.u32()));
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
        Tensor<float> t(shape);
        for (auto& v : t.values()) v = std::bit_cast<float>(r.u32());
        if (!c.params.emplace(std::move(name), std::move(t)).second)
            throw Error(source + ": duplicate tensor name");
    }
    if (!r.done()) throw Error(source + ": trailing bytes after checkpoint");
    return c;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) {
    write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw Error("checkpoint '" + path.string() + "' not found");
    return deserialize_checkpoint(read_text_file(path.string()), path.string());
}

/// Hash of the parameter payload only (names, shapes, values).
inline std::uint64_t params_hash(const ParamSet<float>& p) {
    Checkpoint c{p, {}};
    return hash_string(serialize_checkpoint(c));
}

}  // namespace sia
