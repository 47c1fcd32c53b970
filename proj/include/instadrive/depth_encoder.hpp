#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "autograd.hpp"
#include "nn.hpp"
#include "projection.hpp"

namespace instadrive {

struct FourierSpec {
    int num_bands = 4;
    double base = 2.0;
    bool include_input = true;

    std::size_t dim_per_scalar() const { return 2 * std::size_t(num_bands) + (include_input ? 1 : 0); }
};

// Per scalar s: [s if include_input], then sin/cos(base^k * pi * s) for
// k = 0..num_bands-1. Scalars are laid out in input order, so a corner-major
// (u, v, z_c) input yields corner-major, component-major, band-major output.
inline std::vector<double> fourier_embed(std::span<const double> scalars, const FourierSpec& spec) {
    if (spec.num_bands < 1) throw std::invalid_argument("FourierSpec.num_bands must be >= 1");
    std::vector<double> out;
    out.reserve(scalars.size() * spec.dim_per_scalar());
    for (double s : scalars) {
        if (spec.include_input) out.push_back(s);
        double freq = std::numbers::pi;
        for (int k = 0; k < spec.num_bands; ++k) {
            out.push_back(std::sin(freq * s));
            out.push_back(std::cos(freq * s));
            freq *= spec.base;
        }
    }
    return out;
}

// Normalisation applied to corner rows before embedding.
struct CornerNormalization {
    double width = 1.0;
    double height = 1.0;
    double z_max = 80.0;
};

// 8 x 3 rows [u / W, v / H, z_c / z_max]; corners behind the camera use (0, 0, 0).
inline std::array<double, 24> corner_rows(const ProjectedBox& pb, const CornerNormalization& norm) {
    std::array<double, 24> rows{};
    for (int k = 0; k < 8; ++k) {
        if (!pb.corner_in_front(k)) continue;
        rows[k * 3 + 0] = pb.uv[k].x / norm.width;
        rows[k * 3 + 1] = pb.uv[k].y / norm.height;
        rows[k * 3 + 2] = pb.depth[k] / norm.z_max;
    }
    return rows;
}

inline std::size_t box_embedding_dim(const FourierSpec& spec) { return 24 * spec.dim_per_scalar(); }

// MLP_p: linear -> GELU -> linear, hidden width 4 * d_model.
struct DepthEncoder {
    FourierSpec spec;
    nn::Linear fc1;
    nn::Linear fc2;

    DepthEncoder() = default;
    DepthEncoder(const FourierSpec& s, std::size_t d_model, Rng& rng)
        : spec(s), fc1(box_embedding_dim(s), 4 * d_model, rng), fc2(4 * d_model, d_model, rng) {}

    std::size_t d_model() const { return fc2.out_features(); }

    // Embeds (N, 24) corner rows into an (N, E) constant.
    Tensor embed(std::span<const std::array<double, 24>> boxes) const {
        const std::size_t e = box_embedding_dim(spec);
        Tensor t({boxes.size(), e});
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const auto f = fourier_embed(boxes[i], spec);
            std::copy(f.begin(), f.end(), t.ptr() + i * e);
        }
        return t;
    }

    ad::Var forward(const ad::Var& embedded) const {
        if (embedded->value.rank() != 2 || embedded->value.cols() != fc1.in_features())
            throw ShapeError("depth encoder: embedding " + shape_str(embedded->value.shape()) +
                             " does not match MLP input " + std::to_string(fc1.in_features()));
        return fc2(ad::gelu(fc1(embedded)));
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        fc1.visit(prefix + ".fc1", f);
        fc2.visit(prefix + ".fc2", f);
    }
};

// h^b for one projected box.
inline Tensor depth_encode(const ProjectedBox& pb, const DepthEncoder& enc, const CornerNormalization& norm) {
    const std::array<std::array<double, 24>, 1> rows{corner_rows(pb, norm)};
    auto out = enc.forward(ad::constant(enc.embed(rows)));
    return out->value.reshaped({enc.d_model()});
}

// Single-head cross-attention: queries from layout tokens, keys and values
// from depth tokens; optional residual onto the queries.
struct CrossAttnFuse {
    nn::Linear wq, wk, wv, wo;
    bool residual = true;

    CrossAttnFuse() = default;
    CrossAttnFuse(std::size_t d_model, Rng& rng)
        : wq(d_model, d_model, rng), wk(d_model, d_model, rng), wv(d_model, d_model, rng), wo(d_model, d_model, rng, false) {}

    ad::Var forward(const ad::Var& h_box, const ad::Var& h_depth, std::shared_ptr<const ad::AttentionLayout> layout,
                    std::vector<Tensor>* weights = nullptr) const {
        const std::size_t d = wq.in_features();
        if (h_box->value.rank() != 2 || h_box->value.cols() != d)
            throw ShapeError("cross_attn_fuse: h_box " + shape_str(h_box->value.shape()) + ", d_model " +
                             std::to_string(d));
        if (h_depth->value.rank() != 2 || h_depth->value.cols() != d)
            throw ShapeError("cross_attn_fuse: h_depth " + shape_str(h_depth->value.shape()) + ", d_model " +
                             std::to_string(d));
        auto attn = wo(ad::attention(wq(h_box), wk(h_depth), wv(h_depth), std::move(layout), weights));
        return residual ? ad::add(h_box, attn) : attn;
    }

    // Every query attends to every depth token.
    ad::Var forward(const ad::Var& h_box, const ad::Var& h_depth, std::vector<Tensor>* weights = nullptr) const {
        auto layout = std::make_shared<ad::AttentionLayout>(1);
        for (std::size_t i = 0; i < h_box->value.rows(); ++i) (*layout)[0].queries.push_back(i);
        for (std::size_t j = 0; j < h_depth->value.rows(); ++j) (*layout)[0].keys.push_back(j);
        return forward(h_box, h_depth, std::move(layout), weights);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        wq.visit(prefix + ".wq", f);
        wk.visit(prefix + ".wk", f);
        wv.visit(prefix + ".wv", f);
        wo.visit(prefix + ".wo", f);
    }
};

// Tensor-level wrapper. The output projection has no bias, so an empty
// depth set (N_t = 0) leaves h_box unchanged through the residual.
inline Tensor cross_attn_fuse(const Tensor& h_box, const Tensor& h_depth, const CrossAttnFuse& fuse) {
    return fuse.forward(ad::constant(h_box), ad::constant(h_depth))->value;
}

}  // namespace instadrive
