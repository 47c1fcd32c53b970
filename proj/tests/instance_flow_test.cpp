#include <gtest/gtest.h>

#include <algorithm>

#include "instadrive/instance_flow.hpp"
#include "support.hpp"

using namespace instadrive;

namespace {

const CameraIntrinsics kK = oracle::intrinsics(64, 48, 40);

// One track per entry of `tracks`; each is (visibility, x positions).
struct TrackSpec {
    std::int64_t id;
    std::vector<bool> vis;
    std::vector<double> x;
};

SceneSequence make_scene(const std::vector<TrackSpec>& tracks, std::size_t frames) {
    SceneSequence s;
    for (std::size_t t = 0; t < frames; ++t) {
        Frame fr;
        fr.cameras.push_back({oracle::axis_camera(), kK});
        for (const auto& tr : tracks)
            fr.instances.push_back({tr.id, {{tr.x[t], 0.25 * double(tr.id), 20.0}, {1, 1, 1}, 0, 0, tr.id}, tr.vis[t]});
        s.frames.push_back(fr);
    }
    return s;
}

std::vector<bool> bits(unsigned mask, std::size_t n) {
    std::vector<bool> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = (mask >> i) & 1u;
    return v;
}

}  // namespace

TEST(LastVisible, Examples) {
    const auto gap = make_scene({{1, {true, false, false, true}, {0, 0, 0, 6}}}, 4);
    EXPECT_EQ(last_visible(gap, 1, 3), 0u);
    const auto pair = make_scene({{1, {true, true}, {0, 0}}}, 2);
    EXPECT_EQ(last_visible(pair, 1, 1), 0u);
    const auto never = make_scene({{1, {false, false}, {0, 0}}}, 2);
    EXPECT_EQ(last_visible(never, 1, 1), std::nullopt);
}

TEST(LastVisible, UnknownTrackAndBadFrame) {
    const auto s = make_scene({{1, {true, true}, {0, 0}}}, 2);
    EXPECT_THROW(last_visible(s, 99, 1), TrackNotFound);
    EXPECT_THROW(flow_offset(s, 99, 1), TrackNotFound);
    EXPECT_THROW(last_visible(s, 1, 2), std::out_of_range);
}

TEST(LastVisible, ExhaustiveAgainstScanUpToLengthTen) {
    for (std::size_t n = 1; n <= 10; ++n)
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            const auto vis = bits(mask, n);
            const auto s = make_scene({{4, vis, std::vector<double>(n, 0.0)}}, n);
            for (std::size_t t = 0; t < n; ++t) ASSERT_EQ(last_visible(s, 4, t), oracle::last_visible_scan(vis, t));
        }
}

TEST(FlowOffset, Examples) {
    const auto s = make_scene({{1, {true, true}, {0.0, 1.5}}}, 2);
    const FlowOffset a = flow_offset(s, 1, 1);
    EXPECT_EQ(a.dx, 1.5);
    EXPECT_EQ(a.dy, 0.0);
    EXPECT_EQ(a.dz, 0.0);
    const auto gap = make_scene({{1, {true, false, false, true}, {0, 2, 4, 6}}}, 4);
    const FlowOffset b = flow_offset(gap, 1, 3);
    EXPECT_EQ(b.dx, 6.0);
    EXPECT_EQ(flow_offset(gap, 1, 0), FlowOffset{});
    EXPECT_EQ(flow_offset(gap, 1, 2), FlowOffset{});  // invisible at t
}

TEST(FlowOffset, PositionIdentityHoldsExactlyOnAQuarterMetreGrid) {
    Rng rng(21);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        std::vector<double> x(n);
        for (double& v : x) v = 0.25 * double(rng.below(400)) - 50.0;
        const auto vis = bits(unsigned(rng.below(1u << n)), n);
        const auto s = make_scene({{2, vis, x}}, n);
        for (std::size_t t = 0; t < n; ++t) {
            const auto tau = last_visible(s, 2, t);
            if (!vis[t] || !tau) continue;
            EXPECT_EQ(flow_offset(s, 2, t).dx + x[*tau], x[t]);
        }
    }
}

TEST(OffsetMap, Examples) {
    SceneSequence empty;
    empty.frames.resize(1);
    EXPECT_TRUE(offset_map(empty, 0).empty());

    const auto statics = make_scene({{5, {true, true}, {3, 3}}, {2, {true, true}, {1, 1}}}, 2);
    const auto m = offset_map(statics, 1);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].track_id, 2);
    EXPECT_EQ(m[1].track_id, 5);
    EXPECT_EQ(m[0].offset, FlowOffset{});
    EXPECT_EQ(m[1].offset, FlowOffset{});

    // Reappearing, never-before-visible and steadily visible tracks.
    const auto mixed = make_scene({{1, {true, false, false, true}, {0, 2, 4, 6}},
                                   {2, {false, false, false, true}, {0, 1, 2, 3}},
                                   {3, {true, true, true, true}, {0, 1, 2, 3.5}}},
                                  4);
    const auto mm = offset_map(mixed, 3);
    ASSERT_EQ(mm.size(), 3u);
    EXPECT_EQ(mm[0].offset.dx, 6.0);
    EXPECT_EQ(mm[1].offset.dx, 0.0);
    EXPECT_EQ(mm[2].offset.dx, 1.5);
}

TEST(OffsetMap, IndependentOfEnumerationOrder) {
    Rng rng(22);
    auto s = make_scene({{9, {true, true, true}, {0, 1, 2}}, {4, {true, false, true}, {0, 5, 7}},
                         {6, {false, true, true}, {3, 3, 1}}},
                        3);
    const auto want = offset_map(s, 2);
    for (int p = 0; p < 10; ++p) {
        for (auto& fr : s.frames)
            for (std::size_t i = fr.instances.size(); i > 1; --i)
                std::swap(fr.instances[i - 1], fr.instances[rng.below(i)]);
        const auto got = offset_map(s, 2);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].track_id, want[i].track_id);
            EXPECT_EQ(got[i].offset, want[i].offset);
        }
    }
}

TEST(MotionMap, FrameZeroIsZero) {
    const auto s = make_scene({{1, {true, true}, {0, 1}}}, 2);
    const MotionMap m = rasterize_motion_map(s, 0, 0);
    EXPECT_EQ(m.field.shape(), (std::vector<std::size_t>{48, 64, 3}));
    EXPECT_TRUE(std::all_of(m.field.data().begin(), m.field.data().end(), [](double v) { return v == 0.0; }));
}

TEST(MotionMap, BoxBehindCameraGivesZeroMap) {
    auto s = make_scene({{1, {true, true}, {0, 1}}}, 2);
    for (auto& fr : s.frames) fr.instances[0].box.center.z = -20;
    const MotionMap m = rasterize_motion_map(s, 0, 1);
    EXPECT_TRUE(std::all_of(m.field.data().begin(), m.field.data().end(), [](double v) { return v == 0.0; }));
}

TEST(MotionMap, CenteredCubeRegionMatchesBruteForceHull) {
    SceneSequence s;
    for (int t = 0; t < 2; ++t) {
        Frame fr;
        fr.cameras.push_back({oracle::axis_camera(), kK});
        fr.instances.push_back({1, {{t - 1.0, 0, 5}, {2, 2, 2}, 0, 0, 1}, true});
        s.frames.push_back(fr);
    }
    const MotionMap m = rasterize_motion_map(s, 0, 1);
    const auto ref = oracle::project(s.frames[1].instances[0].box, {}, oracle::axis_camera(), kK);
    int inside = 0;
    for (int y = 0; y < kK.height; ++y)
        for (int x = 0; x < kK.width; ++x) {
            const bool in = oracle::covered(ref.front, {x + 0.5, y + 0.5});
            inside += in;
            EXPECT_EQ(m.field.at(y, x, 0), in ? 1.0 : 0.0) << x << "," << y;
            EXPECT_EQ(m.field.at(y, x, 1), 0.0);
            EXPECT_EQ(m.field.at(y, x, 2), 0.0);
        }
    EXPECT_GT(inside, 0);
    EXPECT_LT(inside, kK.width * kK.height);
    // A cube on the optical axis projects to a region centred on the principal point.
    EXPECT_EQ(m.field.at(24, 32, 0), 1.0);
}

TEST(MotionMapProperty, SupportInsideHullsAndNearestWins) {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        SceneSequence s;
        const int n = 1 + int(rng.below(4));
        std::vector<Vec3> start(n), end(n);
        for (int i = 0; i < n; ++i) {
            start[i] = {rng.uniform(-4, 4), rng.uniform(-3, 3), rng.uniform(4, 20)};
            end[i] = start[i] + Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        }
        for (int t = 0; t < 2; ++t) {
            Frame fr;
            fr.cameras.push_back({oracle::axis_camera(), kK});
            for (int i = 0; i < n; ++i)
                fr.instances.push_back({i + 1, {t ? end[i] : start[i], {2, 1.5, 1.5}, 0.3 * i, 0, i + 1}, true});
            s.frames.push_back(fr);
        }
        const MotionMap m = rasterize_motion_map(s, 0, 1);
        std::vector<oracle::OracleBox> ref;
        for (const auto& inst : s.frames[1].instances) ref.push_back(oracle::project(inst.box, {}, oracle::axis_camera(), kK));
        for (int y = 0; y < kK.height; ++y)
            for (int x = 0; x < kK.width; ++x) {
                const auto who = oracle::nearest_cover(ref, x, y);
                const Vec3 want = who ? end[*who] - start[*who] : Vec3{};
                ASSERT_EQ(m.field.at(y, x, 0), want.x);
                ASSERT_EQ(m.field.at(y, x, 1), want.y);
                ASSERT_EQ(m.field.at(y, x, 2), want.z);
            }
    }
}

TEST(FlowCodec, Examples) {
    MotionMap m{1, Tensor({1, 2, 3})};
    m.field.at(0, 1, 0) = 10;
    m.field.at(0, 1, 1) = -10;
    const RgbImage img = flow_to_rgb(m, 10);
    EXPECT_EQ(img.get(0, 0), (Rgb{128, 128, 128}));
    EXPECT_EQ(img.get(1, 0), (Rgb{255, 1, 128}));
    EXPECT_THROW(flow_to_rgb(m, 0), std::invalid_argument);
}

TEST(FlowCodec, SaturatesOutOfRange) {
    MotionMap m{1, Tensor({1, 1, 3})};
    m.field[0] = 50;
    m.field[1] = -50;
    EXPECT_EQ(flow_to_rgb(m, 10).get(0, 0), (Rgb{255, 1, 128}));
}

TEST(FlowCodec, RoundTripWithinQuantization) {
    Rng rng(24);
    const double r = 7.5;
    MotionMap m{1, Tensor({8, 8, 3})};
    for (double& v : m.field.data()) v = rng.uniform(-r, r);
    const MotionMap back = rgb_to_flow(flow_to_rgb(m, r), r);
    EXPECT_LE(max_abs_diff(back.field, m.field), r / 127 + 1e-12);
}

TEST(FlowCodec, EncodeIsIdentityOnTheLatticeAndDecodeIsIdempotent) {
    RgbImage img(256, 1);
    for (int x = 0; x < 256; ++x) img.set(x, 0, {std::uint8_t(x), std::uint8_t(255 - x), std::uint8_t(x / 2)});
    const MotionMap d1 = rgb_to_flow(img, 3.0);
    const RgbImage e1 = flow_to_rgb(d1, 3.0);
    for (int x = 1; x < 256; ++x) EXPECT_EQ(e1.get(x, 0)[0], x);
    const MotionMap d2 = rgb_to_flow(e1, 3.0);
    EXPECT_EQ(d2.field.data(), d1.field.data());
}

TEST(MotionLatent, ConstantGrayGivesConstantLift) {
    const RgbImage gray(16, 24, {128, 128, 128});
    const Tensor z = encode_motion_latent(gray);
    EXPECT_EQ(z.shape(), (std::vector<std::size_t>{3, 2, 4}));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    const RgbImage tinted(16, 16, {255, 1, 128});
    const Tensor t = encode_motion_latent(tinted);
    const auto want = lift({1.0, -1.0, 0.0});
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], want[i % 4], 1e-15);
}

TEST(MotionLatent, FullResolutionShape) {
    const Tensor z = encode_motion_latent(RgbImage(448, 256, {128, 128, 128}));
    EXPECT_EQ(z.shape(), (std::vector<std::size_t>{32, 56, 4}));
}

TEST(MotionLatent, SingleBlockIsLocal) {
    RgbImage img(32, 16, {128, 128, 128});
    for (int y = 8; y < 16; ++y)
        for (int x = 16; x < 24; ++x) img.set(x, y, {255, 255, 255});
    const Tensor z = encode_motion_latent(img);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            bool any = false;
            for (std::size_t c = 0; c < 4; ++c) any |= z.at(i, j, c) != 0.0;
            EXPECT_EQ(any, i == 1 && j == 2);
        }
}

TEST(MotionLatent, RejectsIndivisibleSize) { EXPECT_THROW(encode_motion_latent(RgbImage(12, 16)), ShapeError); }

TEST(MotionMapFile, RoundTripAndHeader) {
    MotionMap m{3, Tensor({2, 3, 3})};
    for (std::size_t i = 0; i < m.field.size(); ++i) m.field[i] = double(i) * 0.1 - 0.7;
    const auto bytes = encode_motion_map(m);
    ASSERT_EQ(bytes.size(), 16u + 8u * m.field.size());
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "IFLOW1");
    EXPECT_EQ(bytes[8], 2);
    EXPECT_EQ(bytes[12], 3);
    EXPECT_EQ(decode_motion_map(bytes).field.data(), m.field.data());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_ANY_THROW(decode_motion_map(bad));
}
