#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "io.hpp"

namespace instadrive {

using Rgb = std::array<std::uint8_t, 3>;

// Interleaved 8-bit RGB image, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, Rgb fill = {0, 0, 0}) : width(w), height(h), pixels(std::size_t(w) * h * 3) {
        for (std::size_t i = 0; i < pixels.size(); i += 3) {
            pixels[i] = fill[0];
            pixels[i + 1] = fill[1];
            pixels[i + 2] = fill[2];
        }
    }

    Rgb get(int x, int y) const {
        const std::size_t o = (std::size_t(y) * width + x) * 3;
        return {pixels[o], pixels[o + 1], pixels[o + 2]};
    }
    void set(int x, int y, Rgb c) {
        const std::size_t o = (std::size_t(y) * width + x) * 3;
        pixels[o] = c[0];
        pixels[o + 1] = c[1];
        pixels[o + 2] = c[2];
    }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
    const std::string header =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(char(bytes[pos++]));
        return t;
    };
    if (token() != "P6") throw std::ios_base::failure("not a binary PPM (P6)");
    const int w = std::stoi(token());
    const int h = std::stoi(token());
    if (token() != "255") throw std::ios_base::failure("PPM max value must be 255");
    ++pos;  // single whitespace after maxval
    RgbImage img(w, h);
    if (bytes.size() - pos < img.pixels.size()) throw std::ios_base::failure("truncated PPM");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
    return img;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    atomic_write(path, encode_ppm(img));
}

inline RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_binary_file(path)); }

}  // namespace instadrive
