#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "network.hpp"

namespace mstpp {

// Checkpoint layout:
//   "MSTW" | u32 version | u32 manifest byte length | manifest (UTF-8) | blob
// The manifest holds model.* config keys, blob_bytes, tensor_count and one
// line per tensor: "tensor <name> <d0xd1x...> <byte offset> <byte length>".
// The blob is the little-endian binary32 values of each tensor in manifest order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
    return s;
}

}  // namespace detail

inline void write_config(KeyValueConfig& kv, const MstConfig& c, const std::string& prefix = "model.") {
    kv.set(prefix + "in_channels", std::to_string(c.in_channels));
    kv.set(prefix + "out_channels", std::to_string(c.out_channels));
    kv.set(prefix + "channels", std::to_string(c.channels));
    kv.set(prefix + "stages", std::to_string(c.stages));
    kv.set(prefix + "levels", std::to_string(c.levels));
    kv.set(prefix + "blocks", detail::join_sizes(c.blocks, ','));
    kv.set(prefix + "heads", detail::join_sizes(c.heads, ','));
    kv.set(prefix + "ffn_mult", std::to_string(c.ffn_mult));
    kv.set(prefix + "pad_multiple", std::to_string(c.pad_multiple));
    kv.set(prefix + "seed", std::to_string(c.seed));
}

inline void read_config(const KeyValueConfig& kv, MstConfig& c, const std::string& prefix = "model.") {
    kv.read(prefix + "in_channels", c.in_channels);
    kv.read(prefix + "out_channels", c.out_channels);
    kv.read(prefix + "channels", c.channels);
    kv.read(prefix + "stages", c.stages);
    kv.read(prefix + "levels", c.levels);
    kv.read(prefix + "blocks", c.blocks);
    kv.read(prefix + "heads", c.heads);
    kv.read(prefix + "ffn_mult", c.ffn_mult);
    kv.read(prefix + "pad_multiple", c.pad_multiple);
    kv.read(prefix + "seed", c.seed);
}

inline std::string serialize_checkpoint(MstPlusPlusParams& model) {
    KeyValueConfig kv;
    write_config(kv, model.config);
    std::string table;
    std::string blob;
    std::size_t count = 0;
    model.for_each_param("", [&](const std::string& name, Tensor& t) {
        const std::size_t offset = blob.size();
        for (double v : t.data()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int k = 0; k < 4; ++k) blob.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
        }
        table += "tensor " + name + " " + detail::join_sizes(t.shape(), 'x') + " " + std::to_string(offset) + " " +
                 std::to_string(blob.size() - offset) + "\n";
        ++count;
    });
    kv.set("blob_bytes", std::to_string(blob.size()));
    kv.set("tensor_count", std::to_string(count));
    const std::string manifest = kv.dump() + table;

    std::string out = "MSTW";
    auto put_u32 = [&out](std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
    };
    put_u32(kCheckpointVersion);
    put_u32(static_cast<std::uint32_t>(manifest.size()));
    out += manifest;
    out += blob;
    return out;
}

inline MstPlusPlusParams deserialize_checkpoint(const std::string& bytes) {
    auto u32_at = [&bytes](std::size_t pos) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + k])) << (8 * k);
        return v;
    };
    if (bytes.size() < 12 || bytes.compare(0, 4, "MSTW") != 0) throw CorruptionError("checkpoint: bad magic or truncated header");
    const auto version = u32_at(4);
    if (version != kCheckpointVersion)
        throw CorruptionError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const std::size_t manifest_len = u32_at(8);
    if (bytes.size() < 12 + manifest_len) throw CorruptionError("checkpoint: truncated manifest");
    const std::string manifest = bytes.substr(12, manifest_len);
    const std::size_t blob_start = 12 + manifest_len;

    struct Entry {
        std::vector<std::size_t> shape;
        std::size_t offset, length;
    };
    std::map<std::string, Entry> table;
    std::string kv_text;
    {
        std::istringstream is(manifest);
        std::string line;
        while (std::getline(is, line)) {
            if (line.rfind("tensor ", 0) != 0) {
                kv_text += line + "\n";
                continue;
            }
            std::istringstream ls(line.substr(7));
            std::string name, shape;
            Entry e{};
            if (!(ls >> name >> shape >> e.offset >> e.length)) throw CorruptionError("checkpoint: malformed tensor line '" + line + "'");
            std::stringstream ss(shape);
            std::string dim;
            while (std::getline(ss, dim, 'x')) e.shape.push_back(KeyValueConfig::convert<std::size_t>("shape", dim));
            table[name] = std::move(e);
        }
    }
    KeyValueConfig kv;
    try {
        kv = KeyValueConfig::parse(kv_text);
    } catch (const std::invalid_argument& ex) {
        throw CorruptionError(std::string("checkpoint: malformed manifest: ") + ex.what());
    }
    std::size_t blob_bytes = 0, tensor_count = 0;
    MstConfig cfg;
    try {
        blob_bytes = kv.get_as<std::size_t>("blob_bytes");
        tensor_count = kv.get_as<std::size_t>("tensor_count");
        read_config(kv, cfg);
        cfg.validate();
    } catch (const std::invalid_argument& ex) {
        throw CorruptionError(std::string("checkpoint: bad manifest: ") + ex.what());
    }
    if (bytes.size() < blob_start + blob_bytes) throw CorruptionError("checkpoint: truncated blob");
    if (bytes.size() != blob_start + blob_bytes) throw CorruptionError("checkpoint: trailing bytes after blob");
    if (tensor_count != table.size()) throw CorruptionError("checkpoint: tensor_count disagrees with tensor table");
    std::size_t listed = 0;
    for (const auto& [name, e] : table) {
        if (e.offset + e.length > blob_bytes || e.length % 4 != 0)
            throw CorruptionError("checkpoint: tensor '" + name + "' lies outside the blob");
        listed += e.length;
    }
    if (listed != blob_bytes) throw CorruptionError("checkpoint: manifest lengths disagree with blob size");

    MstPlusPlusParams model = MstPlusPlusParams::init(cfg);
    std::size_t matched = 0;
    model.for_each_param("", [&](const std::string& name, Tensor& t) {
        auto it = table.find(name);
        if (it == table.end()) throw CorruptionError("checkpoint: missing tensor '" + name + "'");
        const Entry& e = it->second;
        if (e.shape != t.shape()) throw CorruptionError("checkpoint: shape mismatch for '" + name + "'");
        if (e.length != t.numel() * 4) throw CorruptionError("checkpoint: length mismatch for '" + name + "'");
        auto dst = t.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const auto bits = u32_at(blob_start + e.offset + 4 * i);
            dst[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
        ++matched;
    });
    if (matched != table.size()) throw CorruptionError("checkpoint: table lists tensors the architecture does not have");
    return model;
}

inline void save(MstPlusPlusParams& model, const std::string& path) {
    const std::string bytes = serialize_checkpoint(model);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline MstPlusPlusParams load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::invalid_argument("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace mstpp
