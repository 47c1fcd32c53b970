#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "image.hpp"
#include "tensor.hpp"

namespace instadrive {

// Deterministic stand-in for a pretrained video VAE that keeps only its
// tensor contract: 8x spatial downsampling to 4 latent channels.
inline constexpr int kVaeDownsample = 8;
inline constexpr int kLatentChannels = 4;

// Fixed 3 -> 4 channel lift applied after pooling; row = output channel.
inline constexpr std::array<std::array<double, 3>, 4> kLatentLift{{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {0.299, 0.587, 0.114},
}};

// Byte 128 maps to 0; 1 and 255 map to -1 and +1.
inline double byte_to_unit(std::uint8_t c) { return (double(c) - 128.0) / 127.0; }
inline std::uint8_t unit_to_byte(double x) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(128.0 + 127.0 * x, 0.0, 255.0)));
}

inline std::array<double, 4> lift(const std::array<double, 3>& rgb) {
    std::array<double, 4> out{};
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 3; ++i) out[o] += kLatentLift[o][i] * rgb[i];
    return out;
}

// Least-squares inverse of the lift: (L^T L)^{-1} L^T.
inline std::array<std::array<double, 4>, 3> lift_pseudo_inverse() {
    double g[3][3] = {};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int o = 0; o < 4; ++o) g[i][j] += kLatentLift[o][i] * kLatentLift[o][j];
    const double det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
                       g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
                       g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    double inv[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const int a = (j + 1) % 3, b = (j + 2) % 3, c = (i + 1) % 3, d = (i + 2) % 3;
            inv[i][j] = (g[a][c] * g[b][d] - g[a][d] * g[b][c]) / det;
        }
    std::array<std::array<double, 4>, 3> p{};
    for (int i = 0; i < 3; ++i)
        for (int o = 0; o < 4; ++o)
            for (int k = 0; k < 3; ++k) p[i][o] += inv[i][k] * kLatentLift[o][k];
    return p;
}

// (H, W) image -> (H/8, W/8, 4) latent.
inline Tensor mock_vae_encode(const RgbImage& img) {
    if (img.width % kVaeDownsample != 0 || img.height % kVaeDownsample != 0)
        throw ShapeError("mock VAE input " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible by 8");
    const std::size_t h = img.height / kVaeDownsample, w = img.width / kVaeDownsample;
    Tensor out({h, w, std::size_t(kLatentChannels)});
    constexpr double inv_area = 1.0 / (kVaeDownsample * kVaeDownsample);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            std::array<double, 3> acc{};
            for (int dy = 0; dy < kVaeDownsample; ++dy)
                for (int dx = 0; dx < kVaeDownsample; ++dx) {
                    const Rgb c = img.get(int(j) * kVaeDownsample + dx, int(i) * kVaeDownsample + dy);
                    for (int ch = 0; ch < 3; ++ch) acc[ch] += byte_to_unit(c[ch]);
                }
            for (double& a : acc) a *= inv_area;
            const auto l = lift(acc);
            for (int ch = 0; ch < kLatentChannels; ++ch) out.at(i, j, std::size_t(ch)) = l[ch];
        }
    return out;
}

// (h, w, 4) latent -> (8h, 8w) preview by pseudo-inverse lift and nearest upsampling.
inline RgbImage mock_vae_decode(const Tensor& latent) {
    if (latent.rank() != 3 || latent.dim(2) != kLatentChannels)
        throw ShapeError("mock VAE decode expects (h, w, 4), got " + shape_str(latent.shape()));
    static const auto pinv = lift_pseudo_inverse();
    const int h = int(latent.dim(0)), w = int(latent.dim(1));
    RgbImage img(w * kVaeDownsample, h * kVaeDownsample);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            Rgb c{};
            for (int ch = 0; ch < 3; ++ch) {
                double v = 0;
                for (int o = 0; o < kLatentChannels; ++o) v += pinv[ch][o] * latent.at(i, j, o);
                c[ch] = unit_to_byte(v);
            }
            for (int dy = 0; dy < kVaeDownsample; ++dy)
                for (int dx = 0; dx < kVaeDownsample; ++dx)
                    img.set(j * kVaeDownsample + dx, i * kVaeDownsample + dy, c);
        }
    return img;
}

}  // namespace instadrive
