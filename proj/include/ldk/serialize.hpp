#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "ldk/nn.hpp"

namespace ldk {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload I/O assumes a little-endian host");

// On-disk layout: "LDKP" | u16 version | u32 header_len | header JSON |
// f32 payload | u32 CRC32 of everything before it. The header carries the
// full resolved config text, so a checkpoint alone is enough to rebuild the
// model that wrote it.
inline constexpr uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string config_text;
    std::string tool_version = kVersion;
    uint64_t seed = 0;
    std::map<std::string, double> scalars;      // e.g. latent scale moments
    std::map<std::string, std::string> strings; // e.g. task kind
};

namespace detail {

inline void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                            const CheckpointMeta& meta) {
    nlohmann::json header;
    header["config"] = meta.config_text;
    header["config_digest"] = [&] {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(detail::fnv1a64(meta.config_text)));
        return std::string(buf);
    }();
    header["tool_version"] = meta.tool_version;
    header["seed"] = meta.seed;
    header["scalars"] = meta.scalars;
    header["strings"] = meta.strings;

    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const Param<float>& p = params[i];
        nlohmann::json e;
        e["name"] = p.name;
        e["shape"] = p.v.shape();
        e["dtype"] = "f32";
        e["offset"] = offset;
        tensors.push_back(e);
        offset += static_cast<uint64_t>(p.v.size()) * sizeof(float);
    }
    header["tensors"] = tensors;

    std::string header_str = header.dump();
    std::string buf;
    buf.reserve(16 + header_str.size() + offset);
    buf += "LDKP";
    detail::put_u16(buf, kCheckpointVersion);
    detail::put_u32(buf, static_cast<uint32_t>(header_str.size()));
    buf += header_str;
    for (size_t i = 0; i < params.size(); ++i) {
        const Param<float>& p = params[i];
        size_t bytes = static_cast<size_t>(p.v.size()) * sizeof(float);
        size_t at = buf.size();
        buf.resize(at + bytes);
        std::memcpy(buf.data() + at, p.v.data(), bytes);
    }
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    detail::put_u32(buf, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    LDK_CHECK(f.good(), ErrKind::io, "checkpoint", "cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    LDK_CHECK(f.good(), ErrKind::io, "checkpoint", "write failed for " + path);
}

class CheckpointReader {
public:
    explicit CheckpointReader(const std::string& path) : path_(path) {
        std::ifstream f(path, std::ios::binary);
        LDK_CHECK(f.good(), ErrKind::io, "checkpoint", "cannot open " + path);
        std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        LDK_CHECK(buf.size() >= 14, ErrKind::checkpoint, "checkpoint", path + ": truncated file");

        const auto* raw = reinterpret_cast<const unsigned char*>(buf.data());
        uint32_t stored_crc = detail::get_u32(raw + buf.size() - 4);
        uint32_t crc = static_cast<uint32_t>(crc32(
            0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
        LDK_CHECK(crc == stored_crc, ErrKind::checkpoint, "checkpoint",
                  path + ": CRC mismatch (corrupt file)");
        LDK_CHECK(buf.compare(0, 4, "LDKP") == 0, ErrKind::checkpoint, "checkpoint",
                  path + ": bad magic bytes");
        uint16_t version = detail::get_u16(raw + 4);
        LDK_CHECK(version == kCheckpointVersion, ErrKind::checkpoint, "checkpoint",
                  path + ": unsupported format version " + std::to_string(version));
        uint32_t header_len = detail::get_u32(raw + 6);
        LDK_CHECK(10 + header_len + 4 <= buf.size(), ErrKind::checkpoint, "checkpoint",
                  path + ": header overruns file");
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(buf.substr(10, header_len));
        } catch (const std::exception& e) {
            fail(ErrKind::checkpoint, "checkpoint", path + ": bad header: " + e.what());
        }
        meta_.config_text = header.at("config").get<std::string>();
        config_digest_hex_ = header.at("config_digest").get<std::string>();
        {
            char want[17];
            std::snprintf(want, sizeof want, "%016llx",
                          static_cast<unsigned long long>(detail::fnv1a64(meta_.config_text)));
            LDK_CHECK(config_digest_hex_ == want, ErrKind::checkpoint, "checkpoint",
                      path + ": config digest does not match embedded config");
        }
        meta_.tool_version = header.at("tool_version").get<std::string>();
        meta_.seed = header.at("seed").get<uint64_t>();
        meta_.scalars = header.at("scalars").get<std::map<std::string, double>>();
        meta_.strings = header.at("strings").get<std::map<std::string, std::string>>();
        for (const auto& e : header.at("tensors")) {
            Entry ent;
            ent.name = e.at("name").get<std::string>();
            ent.shape = e.at("shape").get<Shape>();
            LDK_CHECK(e.at("dtype").get<std::string>() == "f32", ErrKind::checkpoint,
                      "checkpoint", path + ": unsupported dtype for " + ent.name);
            ent.offset = e.at("offset").get<uint64_t>();
            entries_.push_back(std::move(ent));
        }
        payload_.assign(buf.begin() + 10 + header_len, buf.end() - 4);
    }

    const CheckpointMeta& meta() const { return meta_; }
    const std::string& config_digest_hex() const { return config_digest_hex_; }

    // Strict bidirectional match: every stored tensor must land in the store
    // and every store entry must be filled.
    void read_into(ParamStore<float>& params) const {
        LDK_CHECK(entries_.size() == params.size(), ErrKind::checkpoint, "checkpoint",
                  path_ + ": tensor count mismatch (" + std::to_string(entries_.size()) +
                      " stored vs " + std::to_string(params.size()) + " expected)");
        for (const Entry& e : entries_) {
            Param<float>& p = params.at(e.name);
            LDK_CHECK(p.v.shape() == e.shape, ErrKind::checkpoint, "checkpoint",
                      path_ + ": shape mismatch for " + e.name + ": stored " +
                          shape_str(e.shape) + " vs model " + shape_str(p.v.shape()));
            size_t bytes = static_cast<size_t>(p.v.size()) * sizeof(float);
            LDK_CHECK(e.offset + bytes <= payload_.size(), ErrKind::checkpoint, "checkpoint",
                      path_ + ": payload overrun for " + e.name);
            std::memcpy(p.v.data(), payload_.data() + e.offset, bytes);
            LDK_CHECK(p.v.all_finite(), ErrKind::checkpoint, "checkpoint",
                      path_ + ": non-finite values in " + e.name);
        }
    }

private:
    struct Entry {
        std::string name;
        Shape shape;
        uint64_t offset = 0;
    };
    std::string path_;
    CheckpointMeta meta_;
    std::string config_digest_hex_;
    std::vector<Entry> entries_;
    std::vector<char> payload_;
};

}  // namespace ldk
