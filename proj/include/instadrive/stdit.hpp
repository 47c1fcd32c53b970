#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "depth_encoder.hpp"
#include "nn.hpp"

namespace instadrive {

// ---------------------------------------------------------------------------
// Latent layout helpers
// ---------------------------------------------------------------------------

// (t, h, w, c) -> (t, s, p*p*c), s = (h/p)(w/p). Patches are row-major over
// the patch grid; inside a patch the order is (row, column, channel).
inline std::vector<std::size_t> patchify_index(std::size_t t, std::size_t h, std::size_t w, std::size_t c,
                                               std::size_t p) {
    if (p == 0 || h % p != 0 || w % p != 0)
        throw ShapeError("patchify: latent " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by patch size " + std::to_string(p));
    const std::size_t gh = h / p, gw = w / p, tok = p * p * c;
    std::vector<std::size_t> idx(t * h * w * c);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t pi = 0; pi < gh; ++pi)
            for (std::size_t pj = 0; pj < gw; ++pj)
                for (std::size_t di = 0; di < p; ++di)
                    for (std::size_t dj = 0; dj < p; ++dj)
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            const std::size_t s = pi * gw + pj;
                            const std::size_t out = (f * gh * gw + s) * tok + (di * p + dj) * c + ch;
                            const std::size_t in = ((f * h + pi * p + di) * w + pj * p + dj) * c + ch;
                            idx[out] = in;
                        }
    return idx;
}

inline std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> inv(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) inv[idx[i]] = i;
    return inv;
}

inline Tensor patchify(const Tensor& z, std::size_t p) {
    if (z.rank() != 4) throw ShapeError("patchify expects (t, h, w, c), got " + shape_str(z.shape()));
    const std::size_t t = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
    const auto idx = patchify_index(t, h, w, c, p);
    Tensor out({t, (h / p) * (w / p), p * p * c});
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = z[idx[i]];
    return out;
}

inline Tensor unpatchify(const Tensor& tokens, std::size_t p, std::size_t h, std::size_t w) {
    if (tokens.rank() != 3 || p == 0 || tokens.dim(2) % (p * p) != 0)
        throw ShapeError("unpatchify: bad token shape " + shape_str(tokens.shape()));
    const std::size_t t = tokens.dim(0), c = tokens.dim(2) / (p * p);
    if (tokens.dim(1) * p * p != h * w) throw ShapeError("unpatchify: token count does not match latent size");
    const auto idx = patchify_index(t, h, w, c, p);
    Tensor z({t, h, w, c});
    for (std::size_t i = 0; i < idx.size(); ++i) z[idx[i]] = tokens[i];
    return z;
}

// (v, t, h, w, c) -> (t, h, w*v, c): views side by side along width.
inline Tensor view_inflate(const Tensor& x) {
    if (x.rank() != 5) throw ShapeError("view_inflate expects (v, t, h, w, c), got " + shape_str(x.shape()));
    const std::size_t v = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3), c = x.dim(4);
    Tensor out({t, h, w * v, c});
    for (std::size_t vi = 0; vi < v; ++vi)
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    for (std::size_t ch = 0; ch < c; ++ch) out.at(f, i, vi * w + j, ch) = x.at(vi, f, i, j, ch);
    return out;
}

inline Tensor view_deflate(const Tensor& x, std::size_t views) {
    if (x.rank() != 4 || views == 0 || x.dim(2) % views != 0)
        throw ShapeError("view_deflate: width of " + shape_str(x.shape()) + " is not a multiple of " +
                         std::to_string(views));
    const std::size_t t = x.dim(0), h = x.dim(1), w = x.dim(2) / views, c = x.dim(3);
    Tensor out({views, t, h, w, c});
    for (std::size_t vi = 0; vi < views; ++vi)
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    for (std::size_t ch = 0; ch < c; ++ch) out.at(vi, f, i, j, ch) = x.at(f, i, vi * w + j, ch);
    return out;
}

// Frames [start, start + len) of a (t, ...) tensor; frames past the end
// repeat the last one.
inline Tensor slice_frames(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t t = x.dim(0), per = x.size() / t;
    std::vector<std::size_t> shape = x.shape();
    shape[0] = len;
    Tensor out(shape);
    for (std::size_t f = 0; f < len; ++f) {
        const std::size_t src = std::min(start + f, t - 1);
        std::copy_n(x.ptr() + src * per, per, out.ptr() + f * per);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attention layouts
// ---------------------------------------------------------------------------

// Token rows are frame-major: row = frame * s + spatial index.
struct TokenGrid {
    std::size_t frames = 1;
    std::size_t tokens = 1;  // s per frame

    std::size_t rows() const { return frames * tokens; }
    std::size_t row(std::size_t f, std::size_t s) const { return f * tokens + s; }
};

// SSA: attend within each frame.
inline std::shared_ptr<const ad::AttentionLayout> spatial_layout(TokenGrid g) {
    auto l = std::make_shared<ad::AttentionLayout>(g.frames);
    for (std::size_t f = 0; f < g.frames; ++f) {
        auto& grp = (*l)[f];
        for (std::size_t s = 0; s < g.tokens; ++s) grp.queries.push_back(g.row(f, s));
        grp.keys = grp.queries;
    }
    return l;
}

// TSA: attend across frames at a fixed spatial index.
inline std::shared_ptr<const ad::AttentionLayout> temporal_layout(TokenGrid g) {
    auto l = std::make_shared<ad::AttentionLayout>(g.tokens);
    for (std::size_t s = 0; s < g.tokens; ++s) {
        auto& grp = (*l)[s];
        for (std::size_t f = 0; f < g.frames; ++f) grp.queries.push_back(g.row(f, s));
        grp.keys = grp.queries;
    }
    return l;
}

// All query rows attend over all key rows.
inline std::shared_ptr<const ad::AttentionLayout> dense_layout(std::size_t queries, std::size_t keys) {
    auto l = std::make_shared<ad::AttentionLayout>(1);
    for (std::size_t i = 0; i < queries; ++i) (*l)[0].queries.push_back(i);
    for (std::size_t j = 0; j < keys; ++j) (*l)[0].keys.push_back(j);
    return l;
}

// softmax(Q K^T / sqrt(d) + mask) V with mask entries 0 or -inf. A row whose
// entries are all -inf yields a zero output row.
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr,
                               std::vector<Tensor>* weights = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention expects rank-2 Q, K, V");
    const std::size_t nq = q.rows(), nk = k.rows();
    if (mask && (mask->rank() != 2 || mask->rows() != nq || mask->cols() != nk))
        throw ShapeError("attention mask must be (" + std::to_string(nq) + ", " + std::to_string(nk) + ")");
    auto layout = std::make_shared<ad::AttentionLayout>(nq);
    for (std::size_t i = 0; i < nq; ++i) {
        (*layout)[i].queries = {i};
        for (std::size_t j = 0; j < nk; ++j)
            if (!mask || (*mask)(i, j) != -std::numeric_limits<double>::infinity()) (*layout)[i].keys.push_back(j);
    }
    return ad::attention(ad::constant(q), ad::constant(k), ad::constant(v), layout, weights)->value;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ToyStDiTConfig {
    std::size_t d_model = 32;
    std::size_t num_base_blocks = 4;
    std::size_t num_control_blocks = 13;
    std::size_t patch = 2;
    std::size_t views = 1;
    std::size_t latent_channels = 4;
    std::size_t cond_channels = 4;
    std::size_t mlp_ratio = 4;
    std::size_t text_tokens = 4;
    std::size_t text_dim = 32;
    std::size_t timestep_dim = 32;
    std::size_t diffusion_steps = 50;
    std::string schedule = "linear";
    double first_frame_clean_prob = 0.2;
    bool positional_encoding = true;
    FourierSpec depth_fourier{};
    double depth_z_max = 80.0;
    std::uint64_t seed = 0;

    // Requests beyond the base depth are clamped.
    std::size_t control_blocks() const { return std::min(num_control_blocks, num_base_blocks); }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("ToyStDiTConfig: " + m); };
        if (d_model == 0 || patch == 0 || views == 0 || latent_channels == 0 || text_tokens == 0 ||
            text_dim == 0 || timestep_dim < 2 || timestep_dim % 2 != 0 || mlp_ratio == 0)
            fail("sizes must be positive (timestep_dim even)");
        if (num_base_blocks == 0 || num_base_blocks % 2 != 0) fail("num_base_blocks must be even and > 0");
        if (diffusion_steps == 0) fail("diffusion_steps must be > 0");
        if (!(first_frame_clean_prob >= 0.0 && first_frame_clean_prob <= 1.0))
            fail("first_frame_clean_prob must lie in [0, 1]");
        if (schedule != "linear" && schedule != "cosine") fail("unknown schedule '" + schedule + "'");
        if (depth_fourier.num_bands < 1) fail("depth_fourier.num_bands must be >= 1");
    }
};

inline nlohmann::json to_json(const ToyStDiTConfig& c) {
    return {{"d_model", c.d_model},
            {"num_base_blocks", c.num_base_blocks},
            {"num_control_blocks", c.num_control_blocks},
            {"patch", c.patch},
            {"views", c.views},
            {"latent_channels", c.latent_channels},
            {"cond_channels", c.cond_channels},
            {"mlp_ratio", c.mlp_ratio},
            {"text_tokens", c.text_tokens},
            {"text_dim", c.text_dim},
            {"timestep_dim", c.timestep_dim},
            {"diffusion_steps", c.diffusion_steps},
            {"schedule", c.schedule},
            {"first_frame_clean_prob", c.first_frame_clean_prob},
            {"positional_encoding", c.positional_encoding},
            {"fourier_bands", c.depth_fourier.num_bands},
            {"fourier_base", c.depth_fourier.base},
            {"fourier_include_input", c.depth_fourier.include_input},
            {"depth_z_max", c.depth_z_max},
            {"seed", c.seed}};
}

// Applies the keys present in `j` on top of `c`; unknown keys are rejected.
inline void apply_json(ToyStDiTConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    for (const auto& [key, val] : j.items()) {
        auto sz = [&](std::size_t& dst) {
            if (!val.is_number_integer() || val.get<std::int64_t>() < 0)
                throw std::invalid_argument("model config '" + key + "' must be a non-negative integer");
            dst = val.get<std::size_t>();
        };
        auto num = [&](double& dst) {
            if (!val.is_number()) throw std::invalid_argument("model config '" + key + "' must be a number");
            dst = val.get<double>();
        };
        auto flag = [&](bool& dst) {
            if (!val.is_boolean()) throw std::invalid_argument("model config '" + key + "' must be a boolean");
            dst = val.get<bool>();
        };
        if (key == "d_model") sz(c.d_model);
        else if (key == "num_base_blocks") sz(c.num_base_blocks);
        else if (key == "num_control_blocks") sz(c.num_control_blocks);
        else if (key == "patch") sz(c.patch);
        else if (key == "views") sz(c.views);
        else if (key == "latent_channels") sz(c.latent_channels);
        else if (key == "cond_channels") sz(c.cond_channels);
        else if (key == "mlp_ratio") sz(c.mlp_ratio);
        else if (key == "text_tokens") sz(c.text_tokens);
        else if (key == "text_dim") sz(c.text_dim);
        else if (key == "timestep_dim") sz(c.timestep_dim);
        else if (key == "diffusion_steps") sz(c.diffusion_steps);
        else if (key == "schedule") {
            if (!val.is_string()) throw std::invalid_argument("model config 'schedule' must be a string");
            c.schedule = val.get<std::string>();
        }
        else if (key == "first_frame_clean_prob") num(c.first_frame_clean_prob);
        else if (key == "positional_encoding") flag(c.positional_encoding);
        else if (key == "fourier_bands") {
            std::size_t b = 0;
            sz(b);
            c.depth_fourier.num_bands = static_cast<int>(b);
        }
        else if (key == "fourier_base") num(c.depth_fourier.base);
        else if (key == "fourier_include_input") flag(c.depth_fourier.include_input);
        else if (key == "depth_z_max") num(c.depth_z_max);
        else if (key == "seed") {
            if (!val.is_number_unsigned()) throw std::invalid_argument("model config 'seed' must be a non-negative integer");
            c.seed = val.get<std::uint64_t>();
        }
        else throw std::invalid_argument("unknown model config key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

enum class BlockKind { spatial, temporal };

inline const char* to_string(BlockKind k) { return k == BlockKind::spatial ? "S" : "T"; }

// Attention layouts shared by every block of one forward pass.
struct BlockContext {
    TokenGrid grid;
    std::shared_ptr<const ad::AttentionLayout> spatial;
    std::shared_ptr<const ad::AttentionLayout> temporal;
    std::shared_ptr<const ad::AttentionLayout> text;

    static BlockContext make(TokenGrid g, std::size_t text_tokens) {
        return {g, spatial_layout(g), temporal_layout(g), dense_layout(g.rows(), text_tokens)};
    }
};

// Pre-norm block: x + SelfAttn(LN x); x + CrossAttn(LN x, text); x + FFN(LN x).
// Self-attention is SSA for spatial blocks and TSA for temporal blocks.
struct DiTBlock {
    BlockKind kind = BlockKind::spatial;
    nn::LayerNorm norm1, norm2, norm3;
    nn::Linear wq, wk, wv, wo;
    nn::Linear cq, ck, cv, co;
    nn::Linear fc1, fc2;

    DiTBlock() = default;
    DiTBlock(BlockKind k, std::size_t d, std::size_t mlp_ratio, Rng& rng)
        : kind(k), norm1(d), norm2(d), norm3(d),
          wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng),
          cq(d, d, rng), ck(d, d, rng), cv(d, d, rng), co(d, d, rng),
          fc1(d, mlp_ratio * d, rng), fc2(mlp_ratio * d, d, rng) {}

    ad::Var self_attention(const ad::Var& x, const BlockContext& ctx, std::vector<Tensor>* weights = nullptr) const {
        auto h = norm1(x);
        return wo(ad::attention(wq(h), wk(h), wv(h), kind == BlockKind::spatial ? ctx.spatial : ctx.temporal, weights));
    }

    ad::Var cross_attention(const ad::Var& x, const ad::Var& text, const BlockContext& ctx) const {
        auto h = norm2(x);
        return co(ad::attention(cq(h), ck(text), cv(text), ctx.text));
    }

    ad::Var forward(const ad::Var& x, const ad::Var& text, const BlockContext& ctx) const {
        auto y = ad::add(x, self_attention(x, ctx));
        y = ad::add(y, cross_attention(y, text, ctx));
        return ad::add(y, fc2(ad::gelu(fc1(norm3(y)))));
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        norm1.visit(p + ".norm1", f);
        wq.visit(p + ".attn.q", f);
        wk.visit(p + ".attn.k", f);
        wv.visit(p + ".attn.v", f);
        wo.visit(p + ".attn.o", f);
        norm2.visit(p + ".norm2", f);
        cq.visit(p + ".cross.q", f);
        ck.visit(p + ".cross.k", f);
        cv.visit(p + ".cross.v", f);
        co.visit(p + ".cross.o", f);
        norm3.visit(p + ".norm3", f);
        fc1.visit(p + ".ffn.fc1", f);
        fc2.visit(p + ".ffn.fc2", f);
    }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Condition latents, already view-inflated to (t, h, w, cond_channels), and
// per-frame normalised box corner rows for the depth encoder.
struct ControlInputs {
    Tensor motion_latent;
    Tensor layout_latent;
    Tensor lane_latent;
    std::vector<std::vector<std::array<double, 24>>> boxes;

    std::size_t frames() const { return motion_latent.dim(0); }

    ControlInputs slice(std::size_t start, std::size_t len) const {
        ControlInputs out{slice_frames(motion_latent, start, len), slice_frames(layout_latent, start, len),
                          slice_frames(lane_latent, start, len), {}};
        for (std::size_t f = 0; f < len; ++f) out.boxes.push_back(boxes[std::min(start + f, boxes.size() - 1)]);
        return out;
    }
};

inline Tensor sinusoidal_embedding(double position, std::size_t dim) {
    Tensor e({dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[i] = std::sin(position * freq);
        e[half + i] = std::cos(position * freq);
    }
    return e;
}

struct ToyStDiT {
    ToyStDiTConfig config;

    nn::Linear patch_embed;
    nn::Linear t_fc1, t_fc2;
    nn::Linear text_proj;
    std::vector<DiTBlock> blocks;

    std::vector<DiTBlock> control_blocks;
    std::vector<nn::Linear> control_out;  // zero-initialised
    nn::Linear motion_embed, layout_embed, lane_embed;
    DepthEncoder depth_encoder;
    CrossAttnFuse depth_fuse;

    nn::LayerNorm final_norm;
    nn::Linear final_mod;  // SiLU(t_emb) -> (shift, scale), zero-initialised
    nn::Linear final_proj;

    explicit ToyStDiT(const ToyStDiTConfig& cfg) : config(cfg) {
        config.validate();
        Rng rng(config.seed);
        const std::size_t d = config.d_model, p = config.patch;
        patch_embed = nn::Linear(p * p * config.latent_channels, d, rng);
        t_fc1 = nn::Linear(config.timestep_dim, d, rng);
        t_fc2 = nn::Linear(d, d, rng);
        text_proj = nn::Linear(config.text_dim, d, rng);
        for (std::size_t i = 0; i < config.num_base_blocks; ++i)
            blocks.emplace_back(i % 2 == 0 ? BlockKind::spatial : BlockKind::temporal, d, config.mlp_ratio, rng);
        for (std::size_t i = 0; i < config.control_blocks(); ++i) {
            control_blocks.push_back(nn::clone_module(blocks[i]));
            control_out.push_back(nn::Linear::zeros(d, d));
        }
        motion_embed = nn::Linear(p * p * config.cond_channels, d, rng);
        layout_embed = nn::Linear(p * p * config.cond_channels, d, rng);
        lane_embed = nn::Linear(p * p * config.cond_channels, d, rng);
        depth_encoder = DepthEncoder(config.depth_fourier, d, rng);
        depth_fuse = CrossAttnFuse(d, rng);
        final_norm = nn::LayerNorm(d);
        final_mod = nn::Linear::zeros(d, 2 * d);
        final_proj = nn::Linear::zeros(d, p * p * config.latent_channels);
    }

    // Every learnable tensor, in a stable order.
    template <class F>
    void visit(F&& f) {
        patch_embed.visit("patch_embed", f);
        t_fc1.visit("t_embed.fc1", f);
        t_fc2.visit("t_embed.fc2", f);
        text_proj.visit("text_proj", f);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("blocks." + std::to_string(i), f);
        for (std::size_t i = 0; i < control_blocks.size(); ++i) {
            control_blocks[i].visit("control." + std::to_string(i), f);
            control_out[i].visit("control_out." + std::to_string(i), f);
        }
        motion_embed.visit("cond.motion", f);
        layout_embed.visit("cond.layout", f);
        lane_embed.visit("cond.lane", f);
        depth_encoder.visit("depth_encoder", f);
        depth_fuse.visit("depth_fuse", f);
        final_norm.visit("final.norm", f);
        final_mod.visit("final.mod", f);
        final_proj.visit("final.proj", f);
    }

    std::vector<std::pair<std::string, ad::Var>> parameters() {
        std::vector<std::pair<std::string, ad::Var>> out;
        visit([&](const std::string& n, ad::Var& v) { out.emplace_back(n, v); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, ad::Var& v) { n += v->value.size(); });
        return n;
    }

    TokenGrid grid_for(const Tensor& latent) const {
        const std::size_t p = config.patch;
        return {latent.dim(0), (latent.dim(1) / p) * (latent.dim(2) / p)};
    }

    // (t, h, w, c) latent -> (t*s, p*p*c) constant rows.
    ad::Var patch_rows(const Tensor& latent, std::size_t channels, const char* name) const {
        if (latent.rank() != 4 || latent.dim(3) != channels)
            throw ShapeError(std::string(name) + ": expected (t, h, w, " + std::to_string(channels) + "), got " +
                             shape_str(latent.shape()));
        const std::size_t p = config.patch;
        Tensor tok = patchify(latent, p);
        return ad::constant(tok.reshaped({tok.dim(0) * tok.dim(1), tok.dim(2)}));
    }

    // Fixed sinusoidal spatial (patch row/col) plus temporal embedding.
    Tensor positional_table(const Tensor& latent) const {
        const std::size_t d = config.d_model, p = config.patch;
        const std::size_t t = latent.dim(0), gh = latent.dim(1) / p, gw = latent.dim(2) / p;
        Tensor pe({t * gh * gw, d});
        const std::size_t q = d / 4 * 2;  // even split for rows / columns
        for (std::size_t f = 0; f < t; ++f) {
            const Tensor te = sinusoidal_embedding(double(f), d);
            for (std::size_t i = 0; i < gh; ++i)
                for (std::size_t j = 0; j < gw; ++j) {
                    const std::size_t r = (f * gh + i) * gw + j;
                    const Tensor er = sinusoidal_embedding(double(i), std::max<std::size_t>(q, 2));
                    const Tensor ec = sinusoidal_embedding(double(j), std::max<std::size_t>(d - q, 2));
                    for (std::size_t k = 0; k < d; ++k) {
                        const double sp = k < q ? er[k] : ec[k - q];
                        pe(r, k) = sp + te[k];
                    }
                }
        }
        return pe;
    }

    // Per-frame timestep embedding, (t, d).
    ad::Var timestep_embedding(std::span<const double> timesteps) const {
        Tensor sin_table({timesteps.size(), config.timestep_dim});
        for (std::size_t f = 0; f < timesteps.size(); ++f) {
            const Tensor e = sinusoidal_embedding(timesteps[f], config.timestep_dim);
            std::copy_n(e.ptr(), e.size(), sin_table.ptr() + f * config.timestep_dim);
        }
        return t_fc2(ad::silu(t_fc1(ad::constant(std::move(sin_table)))));
    }

    // Summed condition tokens: motion + fused layout/depth + lanes.
    ad::Var condition_tokens(const ControlInputs& c, TokenGrid grid) const {
        auto motion = motion_embed(patch_rows(c.motion_latent, config.cond_channels, "motion latent"));
        auto h_box = layout_embed(patch_rows(c.layout_latent, config.cond_channels, "layout latent"));
        auto lane = lane_embed(patch_rows(c.lane_latent, config.cond_channels, "lane latent"));
        if (motion->value.rows() != grid.rows() || h_box->value.rows() != grid.rows() || lane->value.rows() != grid.rows())
            throw ShapeError("condition latents do not match the noisy latent token grid");
        if (c.boxes.size() != grid.frames)
            throw ShapeError("depth boxes: expected " + std::to_string(grid.frames) + " frames, got " +
                             std::to_string(c.boxes.size()));
        std::vector<std::array<double, 24>> rows;
        auto layout = std::make_shared<ad::AttentionLayout>(grid.frames);
        for (std::size_t f = 0; f < grid.frames; ++f) {
            for (std::size_t s = 0; s < grid.tokens; ++s) (*layout)[f].queries.push_back(grid.row(f, s));
            for (const auto& b : c.boxes[f]) {
                (*layout)[f].keys.push_back(rows.size());
                rows.push_back(b);
            }
        }
        auto h_depth = depth_encoder.forward(ad::constant(depth_encoder.embed(rows)));
        auto h_vehicle = depth_fuse.forward(h_box, h_depth, std::move(layout));
        return ad::add(ad::add(motion, h_vehicle), lane);
    }

    // Predicted noise as (t*h*w, c) rows in (t, h, w, c) order. `control`
    // may be null for the unconditioned pass.
    ad::Var forward(const Tensor& noisy, std::span<const double> timesteps, const Tensor& text,
                    const ControlInputs* control) const {
        const std::size_t p = config.patch, c = config.latent_channels;
        if (noisy.rank() != 4 || noisy.dim(3) != c)
            throw ShapeError("noisy latent: expected (t, h, w, " + std::to_string(c) + "), got " +
                             shape_str(noisy.shape()));
        const std::size_t t = noisy.dim(0), h = noisy.dim(1), w = noisy.dim(2);
        if (timesteps.size() != t) throw ShapeError("timesteps: expected one per frame");
        if (text.rank() != 2 || text.cols() != config.text_dim)
            throw ShapeError("text embedding: expected (L, " + std::to_string(config.text_dim) + "), got " +
                             shape_str(text.shape()));
        const TokenGrid grid = grid_for(noisy);
        const BlockContext ctx = BlockContext::make(grid, text.rows());

        std::vector<std::size_t> frame_of(grid.rows());
        for (std::size_t r = 0; r < grid.rows(); ++r) frame_of[r] = r / grid.tokens;

        auto x = patch_embed(patch_rows(noisy, c, "noisy latent"));
        if (config.positional_encoding) x = ad::add(x, ad::constant(positional_table(noisy)));
        auto temb = timestep_embedding(timesteps);
        x = ad::add_grouped_rows(x, temb, frame_of);
        auto txt = text_proj(ad::constant(text));

        std::vector<ad::Var> residuals;
        if (control && !control_blocks.empty()) {
            auto cond = condition_tokens(*control, grid);
            auto cstate = x;
            for (std::size_t k = 0; k < control_blocks.size(); ++k) {
                cstate = control_blocks[k].forward(ad::add(cstate, cond), txt, ctx);
                residuals.push_back(control_out[k](cstate));
            }
        }
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            x = blocks[k].forward(x, txt, ctx);
            if (k < residuals.size()) x = ad::add(x, residuals[k]);
        }

        auto mod = final_mod(ad::silu(temb));
        const std::size_t d = config.d_model;
        auto shift_idx = std::make_shared<std::vector<std::size_t>>();
        auto scale_idx = std::make_shared<std::vector<std::size_t>>();
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t j = 0; j < d; ++j) {
                shift_idx->push_back(f * 2 * d + j);
                scale_idx->push_back(f * 2 * d + d + j);
            }
        auto shift = ad::gather(mod, shift_idx, {t, d});
        auto scl = ad::gather(mod, scale_idx, {t, d});
        auto y = final_proj(ad::modulate(final_norm(x), shift, scl, frame_of));

        // (t*s, p*p*c) -> (t*h*w, c)
        auto to_latent = std::make_shared<std::vector<std::size_t>>(
            invert_permutation(patchify_index(t, h, w, c, p)));
        return ad::gather(y, to_latent, {t * h * w, c});
    }

    Tensor predict(const Tensor& noisy, std::span<const double> timesteps, const Tensor& text,
                   const ControlInputs* control) const {
        return forward(noisy, timesteps, text, control)->value.reshaped(noisy.shape());
    }
};

}  // namespace instadrive
