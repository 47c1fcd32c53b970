#pragma once

#include <cmath>
#include <string>

#include "autograd.hpp"
#include "rng.hpp"

namespace instadrive::nn {

using ad::Var;

inline Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

// y = x W + b with W stored (in, out).
struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool use_bias = true) {
        const double bound = 1.0 / std::sqrt(double(in));
        Tensor w({in, out});
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        weight = ad::parameter(std::move(w));
        if (use_bias) bias = ad::parameter(Tensor({out}));
    }
    static Linear zeros(std::size_t in, std::size_t out) {
        Linear l;
        l.weight = ad::parameter(Tensor({in, out}));
        l.bias = ad::parameter(Tensor({out}));
        return l;
    }

    std::size_t in_features() const { return weight->value.rows(); }
    std::size_t out_features() const { return weight->value.cols(); }

    Var operator()(const Var& x) const { return ad::linear(x, weight, bias); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        if (bias) f(prefix + ".bias", bias);
    }
};

struct LayerNorm {
    Var gamma;
    Var beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d)
        : gamma(ad::parameter(Tensor({d}, 1.0))), beta(ad::parameter(Tensor({d}))) {}

    Var operator()(const Var& x) const { return ad::layer_norm(x, gamma, beta); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gamma", gamma);
        f(prefix + ".beta", beta);
    }
};

// Deep copy of a module's parameters (fresh leaves, same values).
template <class M>
M clone_module(const M& m) {
    M copy = m;
    copy.visit("", [](const std::string&, Var& v) { v = ad::parameter(v->value); });
    return copy;
}

}  // namespace instadrive::nn
