#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ldk/common.hpp"

namespace ldk {

// Minimal PNG codec for 8-bit RGB images, built on zlib. Writes unfiltered
// scanlines plus optional tEXt metadata; reads back anything we write and
// also unfilters sub/up/average/paeth rows from other encoders.

namespace detail {

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_be32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace detail

struct PngImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
    std::map<std::string, std::string> text;
};

inline std::vector<uint8_t> encode_png(const PngImage& img) {
    LDK_CHECK(img.width > 0 && img.height > 0, ErrKind::io, "png", "empty image");
    LDK_CHECK(img.rgb.size() == static_cast<size_t>(img.width) * img.height * 3, ErrKind::io,
              "png", "pixel buffer size mismatch");
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

    std::vector<uint8_t> ihdr;
    detail::put_be32(ihdr, static_cast<uint32_t>(img.width));
    detail::put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    detail::put_chunk(out, "IHDR", ihdr);

    for (const auto& [key, value] : img.text) {
        LDK_CHECK(!key.empty() && key.size() < 80, ErrKind::io, "png", "bad tEXt keyword");
        std::vector<uint8_t> data(key.begin(), key.end());
        data.push_back(0);
        data.insert(data.end(), value.begin(), value.end());
        detail::put_chunk(out, "tEXt", data);
    }

    size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw[y * (stride + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + y * (stride + 1) + 1, img.rgb.data() + y * stride, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    int rc = compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
    LDK_CHECK(rc == Z_OK, ErrKind::io, "png", "deflate failed");
    idat.resize(bound);
    detail::put_chunk(out, "IDAT", idat);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline PngImage decode_png(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    LDK_CHECK(bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0, ErrKind::io, "png",
              "not a png file");
    PngImage img;
    std::vector<uint8_t> compressed;
    size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 12 <= bytes.size() && !saw_iend) {
        uint32_t len = detail::get_be32(bytes.data() + pos);
        LDK_CHECK(pos + 12 + len <= bytes.size(), ErrKind::io, "png", "truncated chunk");
        std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
        const uint8_t* data = bytes.data() + pos + 8;
        uint32_t want_crc = detail::get_be32(data + len);
        uint32_t got_crc = static_cast<uint32_t>(
            ::crc32(0, bytes.data() + pos + 4, static_cast<uInt>(len + 4)));
        LDK_CHECK(want_crc == got_crc, ErrKind::io, "png", "chunk crc mismatch in " + type);
        if (type == "IHDR") {
            LDK_CHECK(len == 13, ErrKind::io, "png", "bad IHDR length");
            img.width = static_cast<int>(detail::get_be32(data));
            img.height = static_cast<int>(detail::get_be32(data + 4));
            LDK_CHECK(data[8] == 8 && data[9] == 2, ErrKind::io, "png",
                      "only 8-bit RGB supported");
            LDK_CHECK(data[12] == 0, ErrKind::io, "png", "interlaced png not supported");
            saw_ihdr = true;
        } else if (type == "IDAT") {
            compressed.insert(compressed.end(), data, data + len);
        } else if (type == "tEXt") {
            const uint8_t* nul =
                static_cast<const uint8_t*>(std::memchr(data, 0, len));
            if (nul) {
                std::string key(data, nul);
                std::string value(nul + 1, data + len);
                img.text[key] = value;
            }
        } else if (type == "IEND") {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    LDK_CHECK(saw_ihdr && img.width > 0 && img.height > 0, ErrKind::io, "png", "missing IHDR");
    LDK_CHECK(!compressed.empty(), ErrKind::io, "png", "missing IDAT");

    size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * img.height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    int rc = uncompress(raw.data(), &raw_len, compressed.data(),
                        static_cast<uLong>(compressed.size()));
    LDK_CHECK(rc == Z_OK && raw_len == raw.size(), ErrKind::io, "png", "inflate failed");

    img.rgb.assign(stride * img.height, 0);
    const int bpp = 3;
    for (int y = 0; y < img.height; ++y) {
        uint8_t filter = raw[y * (stride + 1)];
        const uint8_t* src = raw.data() + y * (stride + 1) + 1;
        uint8_t* cur = img.rgb.data() + y * stride;
        const uint8_t* prev = y > 0 ? img.rgb.data() + (y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= bpp ? cur[x - bpp] : 0;
            int b = prev ? prev[x] : 0;
            int c = (prev && x >= bpp) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: fail(ErrKind::io, "png", "unknown filter type");
            }
            cur[x] = static_cast<uint8_t>(v & 0xFF);
        }
    }
    return img;
}

inline void write_png(const std::string& path, const PngImage& img) {
    std::vector<uint8_t> bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    LDK_CHECK(f.good(), ErrKind::io, "png", "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    LDK_CHECK(f.good(), ErrKind::io, "png", "write failed: " + path);
}

inline PngImage read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    LDK_CHECK(f.good(), ErrKind::io, "png", "cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

}  // namespace ldk
