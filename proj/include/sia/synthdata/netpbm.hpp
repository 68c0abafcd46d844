#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>

#include "sia/numerics/tensor.hpp"
#include "sia/util/files.hpp"
#include "sia/util/text.hpp"

namespace sia {

// Binary netpbm: P6 RGB (8-bit), P5 gray (8- or 16-bit, big-endian per the format).

inline std::string encode_ppm(const Tensor<float>& image) {
    require_rank(image, 3, "encode_ppm");
    const std::size_t H = image.dim(0), W = image.dim(1);
    if (image.dim(2) != 3) throw ShapeError("encode_ppm: expected H x W x 3, got " + shape_str(image.shape()));
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + H * W * 3);
    for (std::size_t i = 0; i < H * W * 3; ++i) {
        const float v = std::min(1.0f, std::max(0.0f, image[i]));
        out[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    return out;
}

inline std::string encode_pgm8(const Tensor<std::uint8_t>& gray) {
    require_rank(gray, 2, "encode_pgm8");
    std::string out = "P5\n" + std::to_string(gray.dim(1)) + " " + std::to_string(gray.dim(0)) + "\n255\n";
    out.append(reinterpret_cast<const char*>(gray.data()), gray.numel());
    return out;
}

inline std::string encode_pgm16(const Tensor<std::uint16_t>& gray) {
    require_rank(gray, 2, "encode_pgm16");
    std::string out = "P5\n" + std::to_string(gray.dim(1)) + " " + std::to_string(gray.dim(0)) + "\n65535\n";
    for (auto v : gray.values()) {
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xFF));
    }
    return out;
}

namespace netpbm_detail {

struct Header {
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    std::size_t offset = 0;
};

inline Header parse_header(const std::string& bytes, const std::string& path) {
    Header h;
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw Error("'" + path + "': truncated netpbm header");
        return bytes.substr(start, pos - start);
    };
    h.magic = token();
    h.width = parse_u64(token());
    h.height = parse_u64(token());
    h.maxval = parse_u64(token());
    h.offset = pos + 1;  // single whitespace byte before the raster
    return h;
}

}  // namespace netpbm_detail

inline Tensor<float> read_ppm(const std::string& path) {
    const std::string bytes = read_text_file(path);
    const auto h = netpbm_detail::parse_header(bytes, path);
    if (h.magic != "P6" || h.maxval != 255) throw Error("'" + path + "': expected an 8-bit P6 image");
    if (bytes.size() < h.offset + h.width * h.height * 3) throw Error("'" + path + "': truncated raster");
    Tensor<float> img({h.height, h.width, 3});
    for (std::size_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(static_cast<unsigned char>(bytes[h.offset + i])) / 255.0f;
    return img;
}

inline Tensor<std::uint8_t> read_pgm8(const std::string& path) {
    const std::string bytes = read_text_file(path);
    const auto h = netpbm_detail::parse_header(bytes, path);
    if (h.magic != "P5" || h.maxval != 255) throw Error("'" + path + "': expected an 8-bit P5 image");
    if (bytes.size() < h.offset + h.width * h.height) throw Error("'" + path + "': truncated raster");
    Tensor<std::uint8_t> g({h.height, h.width});
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = static_cast<std::uint8_t>(bytes[h.offset + i]);
    return g;
}

inline Tensor<std::uint16_t> read_pgm16(const std::string& path) {
    const std::string bytes = read_text_file(path);
    const auto h = netpbm_detail::parse_header(bytes, path);
    if (h.magic != "P5" || h.maxval != 65535) throw Error("'" + path + "': expected a 16-bit P5 image");
    if (bytes.size() < h.offset + h.width * h.height * 2) throw Error("'" + path + "': truncated raster");
    Tensor<std::uint16_t> g({h.height, h.width});
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const auto hi = static_cast<unsigned char>(bytes[h.offset + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[h.offset + 2 * i + 1]);
        g[i] = static_cast<std::uint16_t>((hi << 8) | lo);
    }
    return g;
}

}  // namespace sia
