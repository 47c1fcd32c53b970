#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "image.hpp"
#include "raster.hpp"
#include "scene.hpp"

namespace instadrive {

inline constexpr double kMinDepth = 1e-6;  // metres; z_c at or below this is behind the camera

struct BehindCameraError : std::domain_error {
    using std::domain_error::domain_error;
};

// World -> ego: R_e^T (p - T_e).
inline Vec3 world_to_ego(Vec3 p, const RigidPose& ego) { return ego.apply_inverse(p); }
inline Vec3 ego_to_world(Vec3 p, const RigidPose& ego) { return ego.apply(p); }

// Ego -> camera: R_s^T (p - T_s).
inline Vec3 ego_to_camera(Vec3 p, const RigidPose& cam) { return cam.apply_inverse(p); }
inline Vec3 camera_to_ego(Vec3 p, const RigidPose& cam) { return cam.apply(p); }

struct ImagePoint {
    double u = 0.0, v = 0.0, depth = 0.0;
};

inline ImagePoint camera_to_image(Vec3 p, const CameraIntrinsics& k) {
    if (!(p.z > kMinDepth)) throw BehindCameraError("point is behind the camera (z_c <= 1e-6)");
    return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z};
}

inline Vec3 image_to_camera(ImagePoint q, const CameraIntrinsics& k) {
    return {(q.u - k.cx) * q.depth / k.fx, (q.v - k.cy) * q.depth / k.fy, q.depth};
}

inline Vec3 world_to_camera(Vec3 p, const RigidPose& ego, const RigidPose& cam) {
    return ego_to_camera(world_to_ego(p, ego), cam);
}

struct ProjectedBox {
    std::int64_t track_id = 0;
    int class_id = 0;
    std::array<Vec2, 8> uv{};       // NaN for corners behind the camera
    std::array<double, 8> depth{};  // z_c per corner, unclipped
    int behind_count = 0;

    bool corner_in_front(int k) const { return depth[k] > kMinDepth; }
    bool fully_behind() const { return behind_count == 8; }

    // Minimum z_c over corners in front of the camera; +inf if none.
    double representative_depth() const {
        double d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 8; ++k)
            if (corner_in_front(k)) d = std::min(d, depth[k]);
        return d;
    }

    std::vector<Vec2> front_points() const {
        std::vector<Vec2> pts;
        for (int k = 0; k < 8; ++k)
            if (corner_in_front(k)) pts.push_back(uv[k]);
        return pts;
    }
    std::vector<Vec2> hull() const { return convex_hull(front_points()); }
};

inline ProjectedBox project_box(const Box3D& box, const RigidPose& ego, const RigidPose& cam,
                                const CameraIntrinsics& k) {
    ProjectedBox out;
    out.track_id = box.track_id;
    out.class_id = box.class_id;
    const auto corners = box_corners(box);
    for (int i = 0; i < 8; ++i) {
        const Vec3 pc = world_to_camera(corners[i], ego, cam);
        out.depth[i] = pc.z;
        if (pc.z > kMinDepth) {
            const ImagePoint q = camera_to_image(pc, k);
            out.uv[i] = {q.u, q.v};
        } else {
            out.uv[i] = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
            ++out.behind_count;
        }
    }
    return out;
}

// Visible boxes of one frame and camera projected into that camera.
inline std::vector<ProjectedBox> project_frame(const Frame& frame, std::size_t camera) {
    const CameraMount& cam = frame.cameras.at(camera);
    std::vector<ProjectedBox> out;
    for (const auto& inst : frame.instances) {
        if (!inst.visible) continue;
        Box3D b = inst.box;
        b.track_id = inst.track_id;
        out.push_back(project_box(b, frame.ego, cam.extrinsics, cam.intrinsics));
    }
    return out;
}

// True if any corner lands inside the image with z_c > kMinDepth.
inline bool any_corner_in_image(const ProjectedBox& pb, const CameraIntrinsics& k) {
    for (int i = 0; i < 8; ++i) {
        if (!pb.corner_in_front(i)) continue;
        const Vec2 p = pb.uv[i];
        if (p.x >= 0 && p.x < k.width && p.y >= 0 && p.y < k.height) return true;
    }
    return false;
}

// Near-to-far order by representative depth, ties by track_id; fully
// behind boxes go last.
inline std::vector<std::size_t> depth_order(std::span<const ProjectedBox> boxes) {
    std::vector<std::size_t> idx(boxes.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<double> rep(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) rep[i] = boxes[i].representative_depth();
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const bool ba = boxes[a].fully_behind(), bb = boxes[b].fully_behind();
        if (ba != bb) return bb;
        if (!ba && rep[a] != rep[b]) return rep[a] < rep[b];
        return boxes[a].track_id < boxes[b].track_id;
    });
    return idx;
}

// 16-entry class palette; class ids wrap modulo 16.
inline constexpr std::array<Rgb, 16> kClassPalette{{
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
    {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
    {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195},
}};
inline constexpr Rgb kLaneColor{255, 255, 255};
inline constexpr Rgb kBackground{0, 0, 0};

struct Palette {
    std::array<Rgb, 16> colors = kClassPalette;
    Rgb color(int class_id) const {
        const int n = static_cast<int>(colors.size());
        return colors[static_cast<std::size_t>(((class_id % n) + n) % n)];
    }
};

// 12 box edges as corner index pairs (bottom ring, top ring, verticals).
inline constexpr std::array<std::array<int, 2>, 12> kBoxEdges{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

struct LayoutOptions {
    bool wireframe = false;
};

// Paints boxes back to front along `order` so the nearest covering box wins.
inline RgbImage rasterize_layout(std::span<const ProjectedBox> boxes, std::span<const std::size_t> order,
                                 int width, int height, const Palette& palette = {},
                                 LayoutOptions opts = {}) {
    if (order.size() != boxes.size()) throw std::invalid_argument("rasterize_layout: order is not a permutation");
    std::vector<bool> seen(boxes.size(), false);
    for (std::size_t i : order) {
        if (i >= boxes.size() || seen[i]) throw std::invalid_argument("rasterize_layout: order is not a permutation");
        seen[i] = true;
    }
    RgbImage img(width, height, kBackground);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const ProjectedBox& pb = boxes[*it];
        const Rgb color = palette.color(pb.class_id);
        if (opts.wireframe) {
            for (auto [a, b] : kBoxEdges) {
                if (!pb.corner_in_front(a) || !pb.corner_in_front(b)) continue;
                draw_segment(pb.uv[a], pb.uv[b], width, height, [&](int x, int y) { img.set(x, y, color); });
            }
        } else {
            const auto hull = pb.hull();
            fill_hull(hull, width, height, [&](int x, int y) { img.set(x, y, color); });
        }
    }
    return img;
}

inline RgbImage rasterize_layout(std::span<const ProjectedBox> boxes, int width, int height,
                                 const Palette& palette = {}, LayoutOptions opts = {}) {
    const auto order = depth_order(boxes);
    return rasterize_layout(boxes, order, width, height, palette, opts);
}

// Draws world-frame polylines onto `img`; only segments with both endpoints
// in front of the camera are drawn.
inline void rasterize_lanes(RgbImage& img, std::span<const Polyline> lanes, const RigidPose& ego,
                            const RigidPose& cam, const CameraIntrinsics& k, Rgb color = kLaneColor) {
    for (const Polyline& line : lanes) {
        for (std::size_t i = 0; i + 1 < line.size(); ++i) {
            const Vec3 a = world_to_camera(line[i], ego, cam);
            const Vec3 b = world_to_camera(line[i + 1], ego, cam);
            if (!(a.z > kMinDepth) || !(b.z > kMinDepth)) continue;
            const ImagePoint pa = camera_to_image(a, k), pb = camera_to_image(b, k);
            draw_segment({pa.u, pa.v}, {pb.u, pb.v}, img.width, img.height,
                         [&](int x, int y) { img.set(x, y, color); });
        }
    }
}

inline nlohmann::json to_json(const ProjectedBox& pb) {
    nlohmann::json uv = nlohmann::json::array();
    for (int k = 0; k < 8; ++k) {
        if (pb.corner_in_front(k))
            uv.push_back({pb.uv[k].x, pb.uv[k].y});
        else
            uv.push_back(nullptr);
    }
    return {{"track_id", pb.track_id}, {"class_id", pb.class_id}, {"uv", std::move(uv)},
            {"depth", pb.depth},       {"behind_count", pb.behind_count}};
}

}  // namespace instadrive
