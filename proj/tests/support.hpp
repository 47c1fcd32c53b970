#pragma once

// Independent reference implementations used as test oracles. None of them
// reuse the library's hull, ordering or rasterization code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "instadrive/autograd.hpp"
#include "instadrive/projection.hpp"
#include "instadrive/rng.hpp"
#include "instadrive/scene.hpp"

namespace oracle {

using namespace instadrive;

inline Mat3 random_rotation(Rng& rng) {
    // Random unit quaternion -> rotation matrix.
    double q[4];
    double n = 0;
    do {
        n = 0;
        for (double& v : q) {
            v = rng.normal();
            n += v * v;
        }
    } while (n < 1e-12);
    n = std::sqrt(n);
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    return {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

inline RigidPose random_pose(Rng& rng, double extent = 50.0) {
    return {random_rotation(rng), {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)}};
}

inline CameraIntrinsics intrinsics(int width, int height, double f) {
    return {f, f, width / 2.0, height / 2.0, width, height};
}

// Camera looking along ego +x (x right = -y_ego, y down = -z_ego).
inline RigidPose forward_camera(double height = 0.0) {
    return {Mat3::from_columns({0, -1, 0}, {0, 0, -1}, {1, 0, 0}), {0, 0, height}};
}

// Camera whose axes coincide with the ego axes (optical axis = ego +z).
inline RigidPose axis_camera() { return {}; }

// Closed, non-degenerate triangle membership by orientation signs.
inline bool in_triangle(Vec2 a, Vec2 b, Vec2 c, Vec2 p) {
    auto orient = [](Vec2 o, Vec2 u, Vec2 v) { return (u.x - o.x) * (v.y - o.y) - (u.y - o.y) * (v.x - o.x); };
    const double area = orient(a, b, c);
    // Projected collinear corners carry roundoff; treat slivers as empty.
    auto len2 = [](Vec2 u, Vec2 v) { return (u.x - v.x) * (u.x - v.x) + (u.y - v.y) * (u.y - v.y); };
    if (std::abs(area) <= 1e-9 * std::max({len2(a, b), len2(b, c), len2(c, a)})) return false;
    const double s0 = orient(a, b, p), s1 = orient(b, c, p), s2 = orient(c, a, p);
    if (area > 0) return s0 >= 0 && s1 >= 0 && s2 >= 0;
    return s0 <= 0 && s1 <= 0 && s2 <= 0;
}

// The convex hull of a point set is the union of its point triangles.
inline bool covered(const std::vector<Vec2>& pts, Vec2 p) {
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            for (std::size_t k = j + 1; k < pts.size(); ++k)
                if (in_triangle(pts[i], pts[j], pts[k], p)) return true;
    return false;
}

// Projects corners directly through the pinhole chain.
struct OracleBox {
    std::int64_t track_id = 0;
    int class_id = 0;
    std::vector<Vec2> front;
    std::optional<double> depth;  // min front-corner z
};

inline OracleBox project(const Box3D& box, const RigidPose& ego, const RigidPose& cam, const CameraIntrinsics& k) {
    OracleBox ob{box.track_id, box.class_id, {}, std::nullopt};
    for (const Vec3& c : box_corners(box)) {
        const Vec3 e = ego.rotation.transposed() * (c - ego.translation);
        const Vec3 p = cam.rotation.transposed() * (e - cam.translation);
        if (p.z <= 1e-6) continue;
        ob.front.push_back({k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy});
        ob.depth = ob.depth ? std::min(*ob.depth, p.z) : p.z;
    }
    return ob;
}

// Index of the nearest box covering pixel (x, y); ties go to the lower track id.
inline std::optional<std::size_t> nearest_cover(const std::vector<OracleBox>& boxes, int x, int y) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (!boxes[i].depth || !covered(boxes[i].front, {x + 0.5, y + 0.5})) continue;
        if (!best || *boxes[i].depth < *boxes[*best].depth ||
            (*boxes[i].depth == *boxes[*best].depth && boxes[i].track_id < boxes[*best].track_id))
            best = i;
    }
    return best;
}

inline RgbImage layout(const std::vector<OracleBox>& boxes, int w, int h) {
    static constexpr Rgb palette[16] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
                                        {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
                                        {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
                                        {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195}};
    RgbImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (auto i = nearest_cover(boxes, x, y)) img.set(x, y, palette[((boxes[*i].class_id % 16) + 16) % 16]);
    return img;
}

// Linear scan for the most recent visible frame strictly before t.
inline std::optional<std::size_t> last_visible_scan(const std::vector<bool>& vis, std::size_t t) {
    std::optional<std::size_t> out;
    for (std::size_t k = 0; k < t; ++k)
        if (vis[k]) out = k;
    return out;
}

struct GradReport {
    std::string name;
    double rel_error = 0.0;
    double scale = 0.0;
};

// Central finite differences for every parameter element. Relative error is
// per tensor: |a - n| / max(|a|, |n|), with both-vanishing tensors passing.
inline std::vector<GradReport> gradient_check(
    const std::vector<std::pair<std::string, ad::Var>>& params, const std::function<ad::Var()>& loss,
    double h = 1e-5) {
    ad::backward(loss());
    std::vector<Tensor> analytic;
    for (const auto& [name, p] : params) analytic.push_back(p->grad.size() ? p->grad : Tensor(p->value.shape()));
    std::vector<GradReport> out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& v = params[i].second->value;
        double diff = 0, na = 0, nn = 0;
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double orig = v[k];
            v[k] = orig + h;
            const double lp = loss()->value[0];
            v[k] = orig - h;
            const double lm = loss()->value[0];
            v[k] = orig;
            const double num = (lp - lm) / (2 * h);
            const double a = analytic[i][k];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
        }
        const double scale = std::sqrt(std::max(na, nn));
        out.push_back({params[i].first, scale < 1e-10 ? 0.0 : std::sqrt(diff) / scale, scale});
    }
    return out;
}

}  // namespace oracle
