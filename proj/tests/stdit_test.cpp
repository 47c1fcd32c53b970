#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "instadrive/checkpoint.hpp"
#include "model_fixtures.hpp"
#include "support.hpp"

using namespace instadrive;
using fixtures::tiny_config;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Block with zeroed output projections except for the self-attention path.
ad::Var run_block(const DiTBlock& b, const Tensor& x, const Tensor& text, TokenGrid g) {
    const BlockContext ctx = BlockContext::make(g, text.rows());
    return b.forward(ad::constant(x), ad::constant(text), ctx);
}

double row_diff(const Tensor& a, const Tensor& b, std::size_t row) {
    double m = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(row, j) - b(row, j)));
    return m;
}

}  // namespace

TEST(Patchify, FullResolutionShape) {
    const Tensor z({16, 32, 56, 4});
    const Tensor tok = patchify(z, 2);
    // s = (32 / 2) * (56 / 2) = 448 tokens of p * p * c = 16 values.
    EXPECT_EQ(tok.shape(), (std::vector<std::size_t>{16, 448, 16}));
}

TEST(Patchify, PatchOneIsTheLatentCell) {
    Rng rng(61);
    const Tensor z = fixtures::random_latent({2, 3, 5, 4}, rng);
    const Tensor tok = patchify(z, 1);
    EXPECT_EQ(tok.shape(), (std::vector<std::size_t>{2, 15, 4}));
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j)
                for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(tok.at(f, i * 5 + j, c), z.at(f, i, j, c));
}

TEST(Patchify, RowMajorPatchOrder) {
    Tensor z({1, 4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) z[i] = double(i);
    const Tensor tok = patchify(z, 2);
    // Second patch (top-right) holds cells (0,2), (0,3), (1,2), (1,3).
    EXPECT_EQ(tok.at(0, 1, 0), 2.0);
    EXPECT_EQ(tok.at(0, 1, 1), 3.0);
    EXPECT_EQ(tok.at(0, 1, 2), 6.0);
    EXPECT_EQ(tok.at(0, 1, 3), 7.0);
}

TEST(Patchify, UnpatchifyInvertsBitExactly) {
    Rng rng(62);
    const Tensor z = fixtures::random_latent({3, 6, 10, 4}, rng);
    EXPECT_EQ(unpatchify(patchify(z, 2), 2, 6, 10).data(), z.data());
}

TEST(Patchify, IndivisibleIsAShapeError) { EXPECT_THROW(patchify(Tensor({1, 5, 4, 4}), 2), ShapeError); }

TEST(Attention, SingleTokenReturnsValueRow) {
    const Tensor q({1, 2}, {0.3, -1}), k({1, 2}, {2, 5}), v({1, 3}, {7, 8, 9});
    EXPECT_EQ(masked_attention(q, k, v).data(), v.data());
}

TEST(Attention, FullyMaskedRowIsZero) {
    const Tensor q({2, 2}, {1, 0, 0, 1}), k({2, 2}, {1, 0, 0, 1}), v({2, 2}, {1, 2, 3, 4});
    const Tensor mask({2, 2}, {-kInf, -kInf, 0, 0});
    const Tensor out = masked_attention(q, k, v, &mask);
    EXPECT_EQ(out(0, 0), 0.0);
    EXPECT_EQ(out(0, 1), 0.0);
    EXPECT_NE(out(1, 0), 0.0);
}

TEST(Attention, TwoTokenClosedForm) {
    const Tensor q({1, 2}, {2, 0}), k({2, 2}, {1, 0, 0, 1}), v({2, 1}, {1, 3});
    std::vector<Tensor> w;
    const Tensor out = masked_attention(q, k, v, nullptr, &w);
    // Scores 2 / sqrt(2) and 0.
    const double p0 = 1.0 / (1.0 + std::exp(-std::sqrt(2.0)));
    EXPECT_NEAR(w[0](0, 0), p0, 1e-12);
    EXPECT_NEAR(w[0](0, 1), 1 - p0, 1e-12);
    EXPECT_NEAR(out(0, 0), p0 * 1 + (1 - p0) * 3, 1e-12);
}

TEST(Attention, ShapeMismatchIsAnError) {
    EXPECT_THROW(masked_attention(Tensor({1, 2}), Tensor({2, 3}), Tensor({2, 1})), ShapeError);
    const Tensor bad_mask({3, 3});
    EXPECT_THROW(masked_attention(Tensor({1, 2}), Tensor({2, 2}), Tensor({2, 1}), &bad_mask), ShapeError);
}

TEST(AttentionProperty, SoftmaxRowsSumToOne) {
    Rng rng(63);
    const TokenGrid g{3, 5};
    Rng brng(0);
    DiTBlock b(BlockKind::spatial, 6, 2, brng);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = fixtures::random_latent({15, 6}, rng, 3.0);
        const BlockContext ctx = BlockContext::make(g, 2);
        std::vector<Tensor> w;
        b.self_attention(ad::constant(x), ctx, &w);
        ASSERT_EQ(w.size(), 3u);
        for (const Tensor& p : w)
            for (std::size_t a = 0; a < p.rows(); ++a) {
                double s = 0;
                for (std::size_t c = 0; c < p.cols(); ++c) s += p(a, c);
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
    }
}

TEST(Blocks, SpatialAttentionIsFrameLocal) {
    Rng rng(64);
    const TokenGrid g{4, 6};
    DiTBlock b(BlockKind::spatial, 8, 2, rng);
    const Tensor text = fixtures::random_latent({3, 8}, rng);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = fixtures::random_latent({24, 8}, rng);
        const std::size_t t = rng.below(4);
        Tensor y = x;
        for (std::size_t s = 0; s < 6; ++s)
            for (std::size_t j = 0; j < 8; ++j)
                for (std::size_t f = 0; f < 4; ++f)
                    if (f != t) y(g.row(f, s), j) += rng.normal();
        const Tensor a = run_block(b, x, text, g)->value, c = run_block(b, y, text, g)->value;
        for (std::size_t s = 0; s < 6; ++s) EXPECT_EQ(row_diff(a, c, g.row(t, s)), 0.0);
    }
}

TEST(Blocks, TemporalAttentionIsSpatiallyLocal) {
    Rng rng(65);
    const TokenGrid g{4, 6};
    DiTBlock b(BlockKind::temporal, 8, 2, rng);
    const Tensor text = fixtures::random_latent({3, 8}, rng);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = fixtures::random_latent({24, 8}, rng);
        const std::size_t s0 = rng.below(6);
        Tensor y = x;
        for (std::size_t f = 0; f < 4; ++f)
            for (std::size_t s = 0; s < 6; ++s)
                if (s != s0)
                    for (std::size_t j = 0; j < 8; ++j) y(g.row(f, s), j) += rng.normal();
        const Tensor a = run_block(b, x, text, g)->value, c = run_block(b, y, text, g)->value;
        for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(row_diff(a, c, g.row(f, s0)), 0.0);
    }
}

TEST(Blocks, TemporalAttentionOnOneFrameIsTheValuePath) {
    Rng rng(66);
    const TokenGrid g{1, 5};
    DiTBlock b(BlockKind::temporal, 6, 2, rng);
    const Tensor x = fixtures::random_latent({5, 6}, rng);
    const BlockContext ctx = BlockContext::make(g, 2);
    const Tensor attn = b.self_attention(ad::constant(x), ctx)->value;
    const Tensor value_path = b.wo(b.wv(b.norm1(ad::constant(x))))->value;
    EXPECT_LE(max_abs_diff(attn, value_path), 1e-14);
}

TEST(Blocks, ZeroOutputProjectionsMakeTheBlockIdentity) {
    Rng rng(67);
    DiTBlock b(BlockKind::spatial, 8, 2, rng);
    for (nn::Linear* l : {&b.wo, &b.co, &b.fc2}) {
        l->weight->value.fill(0.0);
        if (l->bias) l->bias->value.fill(0.0);
    }
    const Tensor x = fixtures::random_latent({12, 8}, rng);
    const Tensor text = fixtures::random_latent({2, 8}, rng);
    EXPECT_EQ(run_block(b, x, text, {3, 4})->value.data(), x.data());
}

TEST(Blocks, SpatialAttentionIsPermutationEquivariantWithoutPositions) {
    Rng rng(68);
    const TokenGrid g{2, 5};
    DiTBlock b(BlockKind::spatial, 6, 2, rng);
    const Tensor text = fixtures::random_latent({2, 6}, rng);
    const Tensor x = fixtures::random_latent({10, 6}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
    Tensor px(x.shape());
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t s = 0; s < 5; ++s)
            for (std::size_t j = 0; j < 6; ++j) px(g.row(f, s), j) = x(g.row(f, perm[s]), j);
    const Tensor a = run_block(b, x, text, g)->value, c = run_block(b, px, text, g)->value;
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t s = 0; s < 5; ++s)
            for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(c(g.row(f, s), j), a(g.row(f, perm[s]), j), 1e-12);
}

TEST(Blocks, TwoBlockStackGradientCheck) {
    Rng rng(69);
    std::vector<DiTBlock> stack{DiTBlock(BlockKind::spatial, 4, 2, rng), DiTBlock(BlockKind::temporal, 4, 2, rng)};
    std::vector<std::pair<std::string, ad::Var>> params;
    for (std::size_t i = 0; i < 2; ++i)
        stack[i].visit("b" + std::to_string(i), [&](const std::string& n, ad::Var& v) {
            for (double& x : v->value.data()) x = rng.normal(0.0, 0.4);
            params.emplace_back(n, v);
        });
    const TokenGrid g{2, 3};
    const Tensor x = fixtures::random_latent({6, 4}, rng), text = fixtures::random_latent({2, 4}, rng);
    const Tensor target = fixtures::random_latent({6, 4}, rng);
    const BlockContext ctx = BlockContext::make(g, 2);
    auto loss = [&] {
        auto h = ad::constant(x);
        for (const auto& b : stack) h = b.forward(h, ad::constant(text), ctx);
        return ad::dot_const(h, target);
    };
    for (const auto& r : oracle::gradient_check(params, loss)) EXPECT_LT(r.rel_error, 1e-4) << r.name;
}

TEST(ViewInflate, ShapesAndRoundTrip) {
    Rng rng(70);
    const Tensor x = fixtures::random_latent({6, 2, 4, 56, 4}, rng);
    const Tensor y = view_inflate(x);
    EXPECT_EQ(y.shape(), (std::vector<std::size_t>{2, 4, 336, 4}));
    EXPECT_EQ(view_deflate(y, 6).data(), x.data());
    // View v occupies columns [v * w, (v + 1) * w).
    EXPECT_EQ(y.at(1, 3, 2 * 56 + 5, 1), x.at(2, 1, 3, 5, 1));
    const Tensor one = fixtures::random_latent({1, 3, 2, 5, 4}, rng);
    EXPECT_EQ(view_inflate(one).data(), one.data());
    EXPECT_EQ(view_inflate(one).shape(), (std::vector<std::size_t>{3, 2, 5, 4}));
}

TEST(Config, AlternationAndControlClamp) {
    auto cfg = tiny_config();
    ToyStDiT m(cfg);
    ASSERT_EQ(m.blocks.size(), 4u);
    const char* want[] = {"S", "T", "S", "T"};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_STREQ(to_string(m.blocks[i].kind), want[i]);
    EXPECT_EQ(cfg.num_control_blocks, 13u);
    EXPECT_EQ(m.control_blocks.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.control_blocks[i].kind, m.blocks[i].kind);
    cfg.num_control_blocks = 2;
    EXPECT_EQ(ToyStDiT(cfg).control_blocks.size(), 2u);
    cfg.num_base_blocks = 3;
    EXPECT_THROW(ToyStDiT{cfg}, std::invalid_argument);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    auto cfg = tiny_config();
    cfg.schedule = "cosine";
    cfg.seed = 99;
    ToyStDiTConfig back;
    apply_json(back, to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
    EXPECT_THROW(apply_json(back, nlohmann::json{{"d_modle", 4}}), std::invalid_argument);
    EXPECT_THROW(apply_json(back, nlohmann::json{{"d_model", -1}}), std::invalid_argument);
}

TEST(ControlBranch, ClonesAreIndependentCopies) {
    ToyStDiT m(tiny_config());
    EXPECT_EQ(m.control_blocks[0].wq.weight->value.data(), m.blocks[0].wq.weight->value.data());
    EXPECT_NE(m.control_blocks[0].wq.weight.get(), m.blocks[0].wq.weight.get());
}

TEST(ControlBranch, ZeroInitConditionedEqualsUnconditioned) {
    Rng rng(71);
    ToyStDiT m(tiny_config());
    const Tensor z = fixtures::random_latent({2, 4, 4, 4}, rng);
    const auto ctrl = fixtures::random_control(2, 4, 4, 4, rng);
    const Tensor text = fixtures::random_latent({3, 8}, rng);
    const std::vector<double> ts{3, 7};
    EXPECT_EQ(m.predict(z, ts, text, &ctrl).data(), m.predict(z, ts, text, nullptr).data());
}

TEST(ControlBranch, ShapeMismatchNamesTheTensor) {
    Rng rng(72);
    ToyStDiT m(tiny_config());
    const Tensor z = fixtures::random_latent({2, 4, 4, 4}, rng);
    auto ctrl = fixtures::random_control(2, 4, 4, 4, rng);
    ctrl.lane_latent = Tensor({2, 4, 4, 3});
    try {
        m.predict(z, std::vector<double>{1, 1}, Tensor({3, 8}), &ctrl);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("lane latent"), std::string::npos) << e.what();
    }
    EXPECT_THROW(m.predict(Tensor({2, 4, 4, 3}), std::vector<double>{1, 1}, Tensor({3, 8}), nullptr), ShapeError);
}

TEST(ControlBranch, TrainedModelIsSensitiveToConditions) {
    Rng rng(73);
    auto cfg = tiny_config();
    ToyStDiT m(cfg);
    const auto sched = NoiseSchedule::make(cfg.schedule, cfg.diffusion_steps);
    TrainingSample s{fixtures::random_latent({2, 4, 4, 4}, rng), fixtures::random_control(2, 4, 4, 4, rng),
                     fixtures::random_latent({3, 8}, rng)};
    Adam opt(m.parameters(), {1e-2});
    for (int i = 0; i < 20; ++i) {
        train_step(m, {s}, rng, sched);
        opt.step();
    }
    ControlInputs zero = s.control;
    zero.motion_latent.fill(0.0);
    zero.layout_latent.fill(0.0);
    zero.lane_latent.fill(0.0);
    zero.boxes.assign(2, {});
    const std::vector<double> ts{5, 5};
    EXPECT_GT(max_abs_diff(m.predict(s.latent, ts, s.text, &s.control), m.predict(s.latent, ts, s.text, &zero)), 0.0);
}

TEST(ToyStDiTGrad, EveryParameterPassesFiniteDifferences) {
    Rng rng(74);
    ToyStDiT m(tiny_config());
    fixtures::randomize(m, rng);
    const Tensor z = fixtures::random_latent({2, 4, 4, 4}, rng);
    const auto ctrl = fixtures::random_control(2, 4, 4, 4, rng);
    const Tensor text = fixtures::random_latent({3, 8}, rng);
    const Tensor target = fixtures::random_latent({32, 4}, rng);
    const std::vector<double> ts{0, 6};
    const auto params = m.parameters();
    const auto reports = oracle::gradient_check(params, [&] { return ad::dot_const(m.forward(z, ts, text, &ctrl), target); });
    ASSERT_EQ(reports.size(), params.size());
    for (const auto& r : reports) {
        EXPECT_LT(r.rel_error, 1e-4) << r.name;
        EXPECT_GT(r.scale, 0.0) << r.name;
    }
}

TEST(Schedule, LinearEndpointsAndMonotone) {
    const auto s = NoiseSchedule::make("linear", 50);
    EXPECT_EQ(s.steps(), 50u);
    EXPECT_NEAR(s.beta[1], 1e-4 * 20, 1e-15);
    EXPECT_NEAR(s.beta[50], 0.02 * 20, 1e-15);
    EXPECT_EQ(s.alpha_bar[0], 1.0);
    for (std::size_t i = 1; i <= 50; ++i) {
        EXPECT_LT(s.alpha_bar[i], s.alpha_bar[i - 1]);
        EXPECT_GT(s.alpha_bar[i], 0.0);
    }
    const auto c = NoiseSchedule::make("cosine", 50);
    for (std::size_t i = 1; i <= 50; ++i) EXPECT_LT(c.alpha_bar[i], c.alpha_bar[i - 1]);
    EXPECT_THROW(NoiseSchedule::make("quadratic", 50), std::invalid_argument);
}

TEST(Training, NoisingKeepsACleanFirstFrame) {
    Rng rng(75);
    const auto sched = NoiseSchedule::make("linear", 10);
    const Tensor clean = fixtures::random_latent({3, 2, 2, 4}, rng);
    NoiseDraw d{7, true, fixtures::random_latent({3, 2, 2, 4}, rng)};
    const NoisedInput in = make_noised(clean, d, sched);
    EXPECT_EQ(in.timesteps, (std::vector<double>{0, 7, 7}));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(in.noisy[i], clean[i]);
    const double a = std::sqrt(sched.alpha_bar[7]), b = std::sqrt(1 - sched.alpha_bar[7]);
    for (std::size_t i = 16; i < clean.size(); ++i) EXPECT_EQ(in.noisy[i], a * clean[i] + b * d.noise[i]);
    for (std::size_t r = 0; r < 12; ++r) EXPECT_EQ(in.row_weight[r], r < 4 ? 0.0 : 1.0);
}

TEST(Training, ExactNoisePredictionHasZeroLoss) {
    Rng rng(76);
    const Tensor noise = fixtures::random_latent({12, 4}, rng);
    EXPECT_EQ(ad::weighted_mse(ad::constant(noise), noise, std::vector<double>(12, 1.0))->value[0], 0.0);
    // Excluded rows do not contribute.
    Tensor off = noise;
    for (std::size_t j = 0; j < 4; ++j) off(0, j) += 5;
    std::vector<double> w(12, 1.0);
    w[0] = 0;
    EXPECT_EQ(ad::weighted_mse(ad::constant(off), noise, w)->value[0], 0.0);
}

TEST(Training, InitialLossIsFinitePositiveAndDeterministic) {
    Rng data_rng(77);
    auto cfg = tiny_config();
    TrainingSample s{fixtures::random_latent({2, 4, 4, 4}, data_rng), fixtures::random_control(2, 4, 4, 4, data_rng),
                     fixtures::random_latent({3, 8}, data_rng)};
    const auto sched = NoiseSchedule::make(cfg.schedule, cfg.diffusion_steps);
    auto run = [&] {
        ToyStDiT m(cfg);
        Adam opt(m.parameters(), {5e-3});
        Rng rng(5);
        std::vector<double> losses;
        for (int i = 0; i < 5; ++i) {
            losses.push_back(train_step(m, {s}, rng, sched).loss);
            opt.step();
        }
        return losses;
    };
    const auto a = run();
    EXPECT_TRUE(std::isfinite(a[0]));
    EXPECT_GT(a[0], 0.0);
    EXPECT_EQ(run(), a);
}

TEST(Generate, ZeroStepsReturnsTheInitialNoise) {
    ToyStDiT m(tiny_config());
    GenerateOptions o;
    o.steps = 0;
    o.seed = 9;
    const Tensor x = generate(m, nullptr, Tensor({3, 8}), 2, 4, 4, o);
    Rng rng(9);
    for (double v : x.data()) EXPECT_EQ(v, rng.normal());
}

TEST(Generate, FirstFrameClampIsExact) {
    Rng rng(78);
    ToyStDiT m(tiny_config());
    fixtures::randomize(m, rng, 0.1);
    const auto ctrl = fixtures::random_control(3, 4, 4, 4, rng);
    GenerateOptions o;
    o.steps = 5;
    o.first_frame = fixtures::random_latent({4, 4, 4}, rng);
    const Tensor x = generate(m, &ctrl, Tensor({3, 8}), 3, 4, 4, o);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(x[i], (*o.first_frame)[i]);
    EXPECT_TRUE(std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); }));
    o.first_frame = Tensor({4, 4, 3});
    EXPECT_THROW(generate(m, &ctrl, Tensor({3, 8}), 3, 4, 4, o), ShapeError);
}

TEST(Generate, DeterministicGivenSeed) {
    Rng rng(79);
    ToyStDiT m(tiny_config());
    fixtures::randomize(m, rng, 0.1);
    GenerateOptions o;
    o.steps = 4;
    o.seed = 3;
    EXPECT_EQ(generate(m, nullptr, Tensor({3, 8}), 2, 4, 4, o).data(), generate(m, nullptr, Tensor({3, 8}), 2, 4, 4, o).data());
}

TEST(Generate, AutoregressiveChainingCountsAndContinuity) {
    EXPECT_EQ(autoregressive_frame_count(3, 4), 10u);
    EXPECT_EQ(autoregressive_frame_count(1, 4), 4u);
    EXPECT_EQ(autoregressive_frame_count(0, 4), 0u);
    Rng rng(80);
    ToyStDiT m(tiny_config());
    fixtures::randomize(m, rng, 0.1);
    GenerateOptions o;
    o.steps = 3;
    const Tensor x = generate_autoregressive(m, nullptr, Tensor({3, 8}), 4, 10, 4, 4, o);
    EXPECT_EQ(x.dim(0), 10u);
    EXPECT_THROW(generate_autoregressive(m, nullptr, Tensor({3, 8}), 1, 10, 4, 4, o), std::invalid_argument);
}

TEST(TextEncoder, DeterministicAndPromptSensitive) {
    const ToyTextEncoder enc{4, 8};
    EXPECT_EQ(enc.encode("A rainy night").data(), enc.encode("A rainy night").data());
    EXPECT_EQ(enc.encode("A rainy night").data(), enc.encode("a  RAINY, night").data());
    EXPECT_NE(enc.encode("A rainy night").data(), enc.encode("A sunny night").data());
    EXPECT_EQ(enc.encode("").shape(), (std::vector<std::size_t>{4, 8}));
}

TEST(Checkpoint, RoundTripAndErrors) {
    Rng rng(81);
    auto cfg = tiny_config();
    ToyStDiT m(cfg);
    fixtures::randomize(m, rng);
    const auto bytes = encode_checkpoint(m);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "TSTD1");
    ToyStDiT back = decode_checkpoint(bytes);
    EXPECT_EQ(to_json(back.config), to_json(m.config));
    auto pa = m.parameters(), pb = back.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].first, pb[i].first);
        EXPECT_EQ(pa[i].second->value.data(), pb[i].second->value.data());
    }
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_ANY_THROW(decode_checkpoint(bad));
    auto truncated = bytes;
    truncated.resize(bytes.size() - 8);
    EXPECT_ANY_THROW(decode_checkpoint(truncated));
}

TEST(Threads, PredictionIsIndependentOfThreadCount) {
    Rng rng(90);
    ToyStDiTConfig cfg = tiny_config();
    cfg.d_model = 32;
    cfg.text_dim = 32;
    cfg.timestep_dim = 32;
    ToyStDiT m(cfg);
    fixtures::randomize(m, rng, 0.1);
    const Tensor z = fixtures::random_latent({4, 8, 16, 4}, rng);
    const auto ctrl = fixtures::random_control(4, 8, 16, 4, rng);
    const Tensor text = fixtures::random_latent({3, 32}, rng);
    const std::vector<double> ts{0, 3, 6, 9};
    ::setenv("INSTAFLOW_THREADS", "1", 1);
    const Tensor one = m.predict(z, ts, text, &ctrl);
    ::setenv("INSTAFLOW_THREADS", "4", 1);
    const Tensor four = m.predict(z, ts, text, &ctrl);
    ::unsetenv("INSTAFLOW_THREADS");
    EXPECT_EQ(one.data(), four.data());
}
