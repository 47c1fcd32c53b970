#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <vector>

#include "image.hpp"
#include "io.hpp"
#include "mock_vae.hpp"
#include "projection.hpp"
#include "scene.hpp"
#include "tensor.hpp"

namespace instadrive {

struct TrackNotFound : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// World-frame displacement of an instance since its last visible frame.
struct FlowOffset {
    double dx = 0.0, dy = 0.0, dz = 0.0;

    Vec3 vec() const { return {dx, dy, dz}; }
    friend bool operator==(const FlowOffset&, const FlowOffset&) = default;
};

// H x W x 3 displacement field (metres) for one frame and camera.
struct MotionMap {
    std::size_t frame = 0;
    Tensor field;

    int height() const { return int(field.dim(0)); }
    int width() const { return int(field.dim(1)); }
};

inline const TrackedInstanceFrame* find_instance(const Frame& frame, std::int64_t track_id) {
    for (const auto& inst : frame.instances)
        if (inst.track_id == track_id) return &inst;
    return nullptr;
}

inline bool track_exists(const SceneSequence& scene, std::int64_t track_id) {
    for (const auto& fr : scene.frames)
        if (find_instance(fr, track_id)) return true;
    return false;
}

// A track absent from a frame counts as not visible there.
inline bool is_visible(const SceneSequence& scene, std::int64_t track_id, std::size_t t) {
    const auto* inst = find_instance(scene.frames[t], track_id);
    return inst && inst->visible;
}

inline void check_frame(const SceneSequence& scene, std::size_t t) {
    if (t >= scene.frames.size())
        throw std::out_of_range("frame index " + std::to_string(t) + " out of range (" +
                                std::to_string(scene.frames.size()) + " frames)");
}

// Most recent frame t' < t in which the track was visible.
inline std::optional<std::size_t> last_visible(const SceneSequence& scene, std::int64_t track_id, std::size_t t) {
    check_frame(scene, t);
    if (!track_exists(scene, track_id))
        throw TrackNotFound("track_id " + std::to_string(track_id) + " not found in scene");
    for (std::size_t tp = t; tp-- > 0;)
        if (is_visible(scene, track_id, tp)) return tp;
    return std::nullopt;
}

inline FlowOffset flow_offset(const SceneSequence& scene, std::int64_t track_id, std::size_t t) {
    const auto prev = last_visible(scene, track_id, t);
    const auto* now = find_instance(scene.frames[t], track_id);
    if (!prev || !now || !now->visible) return {};
    const Vec3 d = now->box.center - find_instance(scene.frames[*prev], track_id)->box.center;
    return {d.x, d.y, d.z};
}

struct TrackOffset {
    std::int64_t track_id;
    FlowOffset offset;
};

// One entry per instance listed in frame t, sorted by track_id.
inline std::vector<TrackOffset> offset_map(const SceneSequence& scene, std::size_t t) {
    check_frame(scene, t);
    std::vector<TrackOffset> out;
    for (const auto& inst : scene.frames[t].instances)
        out.push_back({inst.track_id, flow_offset(scene, inst.track_id, t)});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.track_id < b.track_id; });
    return out;
}

// Each pixel covered by a visible instance's projected hull gets that
// instance's offset; the nearest instance wins overlaps. Frame 0 is all zero.
inline MotionMap rasterize_motion_map(const SceneSequence& scene, std::size_t camera, std::size_t t) {
    check_frame(scene, t);
    const Frame& frame = scene.frames[t];
    if (camera >= frame.cameras.size())
        throw std::out_of_range("camera index " + std::to_string(camera) + " out of range");
    const CameraIntrinsics& k = frame.cameras[camera].intrinsics;
    MotionMap map{t, Tensor({std::size_t(k.height), std::size_t(k.width), 3})};
    if (t == 0) return map;

    const auto boxes = project_frame(frame, camera);
    const auto order = depth_order(boxes);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const ProjectedBox& pb = boxes[*it];
        const FlowOffset off = flow_offset(scene, pb.track_id, t);
        fill_hull(pb.hull(), k.width, k.height, [&](int x, int y) {
            map.field.at(y, x, 0) = off.dx;
            map.field.at(y, x, 1) = off.dy;
            map.field.at(y, x, 2) = off.dz;
        });
    }
    return map;
}

// x -> R, y -> G, z -> B; channel = round(128 + 127 * clamp(c / r, -1, 1)).
inline RgbImage flow_to_rgb(const MotionMap& map, double range) {
    if (!(range > 0)) throw std::invalid_argument("flow range must be positive");
    RgbImage img(map.width(), map.height());
    for (int y = 0; y < map.height(); ++y)
        for (int x = 0; x < map.width(); ++x) {
            Rgb c;
            for (int ch = 0; ch < 3; ++ch) {
                const double u = std::clamp(map.field.at(y, x, ch) / range, -1.0, 1.0);
                c[ch] = static_cast<std::uint8_t>(std::lround(128.0 + 127.0 * u));
            }
            img.set(x, y, c);
        }
    return img;
}

// Inverse affine map. Code 0 lies outside the encoder's range and decodes
// like code 1 (-r).
inline MotionMap rgb_to_flow(const RgbImage& img, double range, std::size_t frame = 0) {
    if (!(range > 0)) throw std::invalid_argument("flow range must be positive");
    MotionMap map{frame, Tensor({std::size_t(img.height), std::size_t(img.width), 3})};
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const Rgb c = img.get(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                const int code = std::max<int>(c[ch], 1);
                map.field.at(y, x, ch) = (code - 128) / 127.0 * range;
            }
        }
    return map;
}

// Mock E_vae on the RGB-encoded flow: (H/8, W/8, 4).
inline Tensor encode_motion_latent(const RgbImage& flow_image) { return mock_vae_encode(flow_image); }

inline constexpr char kMotionMapMagic[8] = {'I', 'F', 'L', 'O', 'W', '1', '\0', '\0'};

// 16-byte header (magic, u32 H, u32 W) then H*W*3 little-endian f64, row-major.
inline std::vector<std::uint8_t> encode_motion_map(const MotionMap& map) {
    ByteWriter w;
    w.bytes(kMotionMapMagic, 8);
    w.u32(static_cast<std::uint32_t>(map.height()));
    w.u32(static_cast<std::uint32_t>(map.width()));
    for (double v : map.field.data()) w.f64(v);
    return w.buffer();
}

inline MotionMap decode_motion_map(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMotionMapMagic, 8) != 0) throw std::ios_base::failure("bad motion map magic");
    const std::size_t h = r.u32(), w = r.u32();
    MotionMap map{0, Tensor({h, w, 3})};
    for (double& v : map.field.data()) v = r.f64();
    if (!r.done()) throw std::ios_base::failure("trailing bytes after motion map");
    return map;
}

}  // namespace instadrive
