#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Binary PGM (P5) for one channel, PPM (P6) for three; byte = round(255 v).
inline std::string encode_pnm(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.rank() != 3 || (s[2] != 1 && s[2] != 3)) {
        throw std::invalid_argument("encode_pnm: expected (h, w, 1|3) image, got " + s.str());
    }
    std::string out = (s[2] == 1 ? "P5\n" : "P6\n") + std::to_string(s[1]) + " " + std::to_string(s[0]) + "\n255\n";
    out.reserve(out.size() + image.size());
    for (double v : image) {
        out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    return out;
}

inline void write_pnm(const Tensor& image, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
    const auto bytes = encode_pnm(image);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Reads P5/P6 with maxval 255. Comments in the header are not supported.
inline Tensor decode_pnm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw std::runtime_error("decode_pnm: truncated header");
        return bytes.substr(start, pos - start);
    };
    const std::string magic = token();
    if (magic != "P5" && magic != "P6") {
        throw std::runtime_error("decode_pnm: unsupported magic " + magic);
    }
    const std::size_t w = std::stoul(token()), h = std::stoul(token());
    if (token() != "255") {
        throw std::runtime_error("decode_pnm: only maxval 255 is supported");
    }
    ++pos;  // single whitespace before the raster
    const std::size_t c = magic == "P5" ? 1 : 3;
    if (bytes.size() < pos + w * h * c) {
        throw std::runtime_error("decode_pnm: truncated raster");
    }
    Tensor t(Shape{h, w, c});
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    }
    return t;
}

inline Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return decode_pnm(std::string(std::istreambuf_iterator<char>(f), {}));
}

}  // namespace advlab
