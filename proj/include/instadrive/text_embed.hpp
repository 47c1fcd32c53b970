#pragma once

#include <cctype>
#include <sstream>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace instadrive {

// Deterministic stand-in for a T5 text encoder: each word is hashed, the
// hash seeds a Gaussian vector, and a fixed random matrix mixes it. Output
// is a fixed (num_tokens, dim) matrix; missing slots use pad tokens.
struct ToyTextEncoder {
    std::size_t num_tokens = 4;
    std::size_t dim = 32;

    static std::vector<std::string> words(const std::string& prompt) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : prompt) {
            if (std::isalnum(static_cast<unsigned char>(ch))) {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    Tensor encode(const std::string& prompt) const {
        const auto ws = words(prompt);
        Tensor mix({dim, dim});
        Rng mix_rng(0x7e57'7e57'7e57ull);
        for (double& v : mix.data()) v = mix_rng.normal() / std::sqrt(double(dim));
        Tensor out({num_tokens, dim});
        std::vector<double> g(dim);
        for (std::size_t k = 0; k < num_tokens; ++k) {
            const std::uint64_t seed =
                k < ws.size() ? stable_hash(ws[k]) : stable_hash("<pad>", 0x51ed + k);
            Rng rng(seed);
            for (double& v : g) v = rng.normal();
            for (std::size_t i = 0; i < dim; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < dim; ++j) s += g[j] * mix(j, i);
                out(k, i) = s;
            }
        }
        return out;
    }
};

}  // namespace instadrive
