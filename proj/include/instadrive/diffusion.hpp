#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "stdit.hpp"

namespace instadrive {

// DDPM noise schedule indexed 1..N; index 0 is the clean signal.
struct NoiseSchedule {
    std::vector<double> beta;       // beta[0] unused (0)
    std::vector<double> alpha_bar;  // alpha_bar[0] = 1

    std::size_t steps() const { return beta.size() - 1; }

    // "linear": beta rises linearly from 1e-4 * 1000/N to 0.02 * 1000/N, the
    // usual 1000-step range rescaled to N steps. "cosine": squared-cosine
    // alpha_bar with s = 0.008. Both cap beta at 0.999 so that very short
    // schedules keep alpha_bar positive.
    static NoiseSchedule make(const std::string& name, std::size_t n) {
        NoiseSchedule s;
        s.beta.assign(n + 1, 0.0);
        s.alpha_bar.assign(n + 1, 1.0);
        if (name == "linear") {
            const double scale = 1000.0 / double(n);
            const double lo = 1e-4 * scale, hi = 0.02 * scale;
            for (std::size_t i = 1; i <= n; ++i)
                s.beta[i] = std::min(0.999, n == 1 ? lo : lo + (hi - lo) * double(i - 1) / double(n - 1));
        } else if (name == "cosine") {
            auto f = [n](double t) {
                const double x = (t / double(n) + 0.008) / 1.008 * std::numbers::pi / 2;
                return std::cos(x) * std::cos(x);
            };
            for (std::size_t i = 1; i <= n; ++i) s.beta[i] = std::min(0.999, 1.0 - f(double(i)) / f(double(i - 1)));
        } else {
            throw std::invalid_argument("unknown noise schedule '" + name + "'");
        }
        for (std::size_t i = 1; i <= n; ++i) s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - s.beta[i]);
        return s;
    }
};

struct TrainingSample {
    Tensor latent;  // clean (t, h, w, c)
    ControlInputs control;
    Tensor text;  // (L, text_dim)
};

// What one train step drew for a sample; kept for tests and logging.
struct NoiseDraw {
    std::size_t timestep = 0;
    bool first_frame_clean = false;
    Tensor noise;
};

struct StepResult {
    double loss = 0.0;
    std::vector<NoiseDraw> draws;
};

// Noised latent, per-frame timesteps and loss row weights for one draw.
struct NoisedInput {
    Tensor noisy;
    std::vector<double> timesteps;
    std::vector<double> row_weight;  // per (t*h*w) row
};

inline NoisedInput make_noised(const Tensor& clean, const NoiseDraw& draw, const NoiseSchedule& sched) {
    const std::size_t t = clean.dim(0), per_frame = clean.size() / t, c = clean.dim(3);
    NoisedInput in{clean, std::vector<double>(t, double(draw.timestep)), std::vector<double>(clean.size() / c, 1.0)};
    const double a = std::sqrt(sched.alpha_bar[draw.timestep]), b = std::sqrt(1.0 - sched.alpha_bar[draw.timestep]);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (draw.first_frame_clean && i < per_frame) continue;
        in.noisy[i] = a * clean[i] + b * draw.noise[i];
    }
    if (draw.first_frame_clean) {
        in.timesteps[0] = 0.0;
        std::fill_n(in.row_weight.begin(), per_frame / c, 0.0);
    }
    return in;
}

inline NoiseDraw sample_draw(const Tensor& clean, const ToyStDiTConfig& cfg, Rng& rng) {
    NoiseDraw d;
    d.timestep = 1 + std::size_t(rng.below(cfg.diffusion_steps));
    d.first_frame_clean = rng.bernoulli(cfg.first_frame_clean_prob);
    d.noise = Tensor(clean.shape());
    for (double& v : d.noise.data()) v = rng.normal();
    return d;
}

// Mean over samples of the noise-prediction MSE on noised frames.
inline ad::Var diffusion_loss(const ToyStDiT& model, const std::vector<TrainingSample>& batch,
                              const std::vector<NoiseDraw>& draws, const NoiseSchedule& sched) {
    ad::Var total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        const NoisedInput in = make_noised(s.latent, draws[i], sched);
        auto pred = model.forward(in.noisy, in.timesteps, s.text, &s.control);
        const std::size_t c = s.latent.dim(3);
        auto loss = ad::weighted_mse(pred, draws[i].noise.reshaped({s.latent.size() / c, c}), in.row_weight);
        total = total ? ad::add(total, loss) : loss;
    }
    return ad::scale(total, 1.0 / double(batch.size()));
}

// One stochastic step: draws timesteps/noise, evaluates the loss and leaves
// gradients on the model parameters.
inline StepResult train_step(const ToyStDiT& model, const std::vector<TrainingSample>& batch, Rng& rng,
                             const NoiseSchedule& sched) {
    StepResult r;
    for (const auto& s : batch) r.draws.push_back(sample_draw(s.latent, model.config, rng));
    auto loss = diffusion_loss(model, batch, r.draws, sched);
    ad::backward(loss);
    r.loss = loss->value[0];
    return r;
}

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

class Adam {
public:
    Adam(std::vector<std::pair<std::string, ad::Var>> params, AdamOptions opts = {})
        : params_(std::move(params)), opts_(opts) {
        for (auto& [name, v] : params_) {
            m_.emplace_back(v->value.shape());
            v_.emplace_back(v->value.shape());
        }
    }

    void step() {
        ++t_;
        double scale = 1.0;
        if (opts_.grad_clip > 0) {
            double sq = 0;
            for (auto& [name, p] : params_)
                for (double g : p->g().data()) sq += g * g;
            const double norm = std::sqrt(sq);
            if (norm > opts_.grad_clip) scale = opts_.grad_clip / norm;
        }
        const double c1 = 1.0 - std::pow(opts_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& w = params_[i].second->value;
            const Tensor& g = params_[i].second->g();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = g[j] * scale;
                m_[i][j] = opts_.beta1 * m_[i][j] + (1 - opts_.beta1) * gj;
                v_[i][j] = opts_.beta2 * v_[i][j] + (1 - opts_.beta2) * gj * gj;
                w[j] -= opts_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + opts_.eps);
            }
        }
    }

    void set_lr(double lr) { opts_.lr = lr; }

private:
    std::vector<std::pair<std::string, ad::Var>> params_;
    AdamOptions opts_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

struct GenerateOptions {
    std::size_t steps = 50;
    std::optional<Tensor> first_frame;  // (h, w, c) clean latent clamped at frame 0
    std::uint64_t seed = 0;
};

// Ancestral DDPM sampling over an evenly strided subset of the schedule.
// With steps == N this is the plain DDPM posterior chain.
inline Tensor generate(const ToyStDiT& model, const ControlInputs* control, const Tensor& text, std::size_t frames,
                       std::size_t h, std::size_t w, const GenerateOptions& opts) {
    const auto sched = NoiseSchedule::make(model.config.schedule, model.config.diffusion_steps);
    const std::size_t n = sched.steps(), c = model.config.latent_channels, per_frame = h * w * c;
    if (opts.steps > n) throw std::invalid_argument("generate: steps exceeds the schedule length");
    Rng rng(opts.seed);
    Tensor x({frames, h, w, c});
    for (double& v : x.data()) v = rng.normal();
    auto clamp = [&](Tensor& z) {
        if (!opts.first_frame) return;
        if (opts.first_frame->size() != per_frame)
            throw ShapeError("first frame: expected " + shape_str(std::vector<std::size_t>{h, w, c}) + ", got " +
                             shape_str(opts.first_frame->shape()));
        std::copy_n(opts.first_frame->ptr(), per_frame, z.ptr());
    };
    clamp(x);
    if (opts.steps == 0) return x;

    std::vector<std::size_t> ts;
    for (std::size_t i = opts.steps; i-- > 0;) ts.push_back((i + 1) * n / opts.steps);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const std::size_t t = ts[k], prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        std::vector<double> tsteps(frames, double(t));
        if (opts.first_frame) tsteps[0] = 0.0;
        const Tensor eps = model.predict(x, tsteps, text, control);
        const double ab = sched.alpha_bar[t], ab_prev = sched.alpha_bar[prev];
        const double sigma2 = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
        const double sigma = std::sqrt(std::max(0.0, sigma2));
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma2));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0 = (x[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
            x[i] = std::sqrt(ab_prev) * x0 + dir * eps[i] + (prev > 0 ? sigma * rng.normal() : 0.0);
        }
        clamp(x);
    }
    return x;
}

// Chains clips with a one-frame overlap: each clip after the first is
// conditioned on the previous clip's last frame. Returns exactly
// `total_frames` frames; `control` must cover them (shorter inputs repeat
// their last frame).
inline Tensor generate_autoregressive(const ToyStDiT& model, const ControlInputs* control, const Tensor& text,
                                      std::size_t clip_len, std::size_t total_frames, std::size_t h, std::size_t w,
                                      GenerateOptions opts) {
    if (clip_len < 2) throw std::invalid_argument("autoregressive generation needs clips of at least 2 frames");
    const std::size_t c = model.config.latent_channels, per_frame = h * w * c;
    Tensor out({total_frames, h, w, c});
    std::size_t produced = 0;
    Rng seeds(opts.seed);
    while (produced < total_frames) {
        const std::size_t start = produced == 0 ? 0 : produced - 1;
        std::optional<ControlInputs> clip_ctrl;
        if (control) clip_ctrl = control->slice(start, clip_len);
        GenerateOptions o = opts;
        o.seed = seeds.next_u64();
        if (produced > 0) o.first_frame = slice_frames(out, produced - 1, 1).reshaped({h, w, c});
        const Tensor clip = generate(model, clip_ctrl ? &*clip_ctrl : nullptr, text, clip_len, h, w, o);
        const std::size_t skip = produced == 0 ? 0 : 1;
        for (std::size_t f = skip; f < clip_len && produced < total_frames; ++f, ++produced)
            std::copy_n(clip.ptr() + f * per_frame, per_frame, out.ptr() + produced * per_frame);
    }
    return out;
}

inline std::size_t autoregressive_frame_count(std::size_t clips, std::size_t clip_len) {
    return clips == 0 ? 0 : clip_len + (clips - 1) * (clip_len - 1);
}

}  // namespace instadrive
