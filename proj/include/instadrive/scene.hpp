#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace instadrive {

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
};

// Maps local coordinates into the parent frame: p_parent = rotation * p_local + translation.
struct RigidPose {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};

    static RigidPose identity() { return {}; }
    Vec3 apply(Vec3 p) const { return rotation * p + translation; }
    Vec3 apply_inverse(Vec3 p) const { return rotation.transposed() * (p - translation); }
};

struct Box3D {
    Vec3 center{};
    Vec3 size{1.0, 1.0, 1.0};  // (length, width, height)
    double yaw = 0.0;
    int class_id = 0;
    std::int64_t track_id = 0;
};

struct TrackedInstanceFrame {
    std::int64_t track_id = 0;
    Box3D box;
    bool visible = true;
};

struct CameraMount {
    RigidPose extrinsics;  // camera -> ego
    CameraIntrinsics intrinsics;
};

struct Frame {
    RigidPose ego;  // ego -> world
    std::vector<CameraMount> cameras;
    std::vector<TrackedInstanceFrame> instances;
    std::string prompt;
};

using Polyline = std::vector<Vec3>;

struct SceneSequence {
    std::vector<Frame> frames;
    std::vector<Polyline> lanes;  // world frame lane-center polylines, optional

    std::size_t frame_count() const { return frames.size(); }
    std::size_t camera_count() const { return frames.empty() ? 0 : frames.front().cameras.size(); }
};

// Corner order: bottom face counter-clockwise seen from above starting at
// (+l/2, +w/2, -h/2) in the box frame, then the top face in the same order.
inline std::array<Vec3, 8> box_corners(const Box3D& box) {
    const double l = box.size.x / 2, w = box.size.y / 2, h = box.size.z / 2;
    static constexpr std::array<std::array<int, 2>, 4> face{{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    std::array<Vec3, 8> out;
    for (int level = 0; level < 2; ++level) {
        const double z = level == 0 ? -h : h;
        for (int k = 0; k < 4; ++k) {
            const double x = face[k][0] * l, y = face[k][1] * w;
            out[level * 4 + k] = Vec3{c * x - s * y, s * x + c * y, z} + box.center;
        }
    }
    return out;
}

enum class Severity { warning, error };

struct Violation {
    enum class Kind {
        empty_scene,
        duplicate_track_id,
        non_orthonormal_rotation,
        bad_intrinsics,
        bad_box_size,
        yaw_out_of_range,
        camera_count_mismatch,
        non_finite_value,
    };
    Kind kind;
    Severity severity = Severity::error;
    std::optional<std::size_t> frame;
    std::string message;
};

inline const char* to_string(Violation::Kind k) {
    switch (k) {
        case Violation::Kind::empty_scene: return "empty_scene";
        case Violation::Kind::duplicate_track_id: return "duplicate_track_id";
        case Violation::Kind::non_orthonormal_rotation: return "non_orthonormal_rotation";
        case Violation::Kind::bad_intrinsics: return "bad_intrinsics";
        case Violation::Kind::bad_box_size: return "bad_box_size";
        case Violation::Kind::yaw_out_of_range: return "yaw_out_of_range";
        case Violation::Kind::camera_count_mismatch: return "camera_count_mismatch";
        case Violation::Kind::non_finite_value: return "non_finite_value";
    }
    return "unknown";
}

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::size_t count(Violation::Kind k) const {
        std::size_t n = 0;
        for (const auto& v : violations) n += v.kind == k;
        return n;
    }
};

inline constexpr double kOrthonormalTolerance = 1e-9;

inline bool is_orthonormal(const Mat3& r, double tol = kOrthonormalTolerance) {
    const Mat3 g = r.transposed() * r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(g(i, j) - (i == j ? 1.0 : 0.0)) >= tol) return false;
    return std::abs(r.determinant() - 1.0) < tol;
}

inline bool intrinsics_valid(const CameraIntrinsics& k) {
    return k.width > 0 && k.height > 0 && k.fx > 0 && k.fy > 0 && k.cx >= 0 &&
           k.cx < k.width && k.cy >= 0 && k.cy < k.height;
}

inline ValidationReport validate_scene(const SceneSequence& scene) {
    ValidationReport report;
    auto add = [&](Violation::Kind kind, std::optional<std::size_t> frame, std::string msg) {
        report.violations.push_back({kind, Severity::error, frame, std::move(msg)});
    };
    auto finite3 = [](Vec3 v) {
        return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
    };

    if (scene.frames.empty()) {
        add(Violation::Kind::empty_scene, std::nullopt, "scene has no frames");
        return report;
    }
    const std::size_t rig = scene.frames.front().cameras.size();
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        const Frame& fr = scene.frames[f];
        const std::string where = "frame " + std::to_string(f);
        if (!is_orthonormal(fr.ego.rotation))
            add(Violation::Kind::non_orthonormal_rotation, f, where + ": ego rotation is not orthonormal");
        if (!finite3(fr.ego.translation))
            add(Violation::Kind::non_finite_value, f, where + ": ego translation is not finite");
        if (fr.cameras.size() != rig)
            add(Violation::Kind::camera_count_mismatch, f,
                where + ": has " + std::to_string(fr.cameras.size()) + " cameras, expected " +
                    std::to_string(rig));
        for (std::size_t c = 0; c < fr.cameras.size(); ++c) {
            const auto& cam = fr.cameras[c];
            if (!is_orthonormal(cam.extrinsics.rotation))
                add(Violation::Kind::non_orthonormal_rotation, f,
                    where + ", camera " + std::to_string(c) + ": rotation is not orthonormal");
            if (!intrinsics_valid(cam.intrinsics))
                add(Violation::Kind::bad_intrinsics, f,
                    where + ", camera " + std::to_string(c) + ": invalid intrinsics");
        }
        std::set<std::int64_t> seen;
        for (const auto& inst : fr.instances) {
            const std::string who = where + ", track " + std::to_string(inst.track_id);
            if (!seen.insert(inst.track_id).second)
                add(Violation::Kind::duplicate_track_id, f, who + ": duplicate track_id");
            const Vec3 sz = inst.box.size;
            if (!(sz.x > 0 && sz.y > 0 && sz.z > 0))
                add(Violation::Kind::bad_box_size, f, who + ": box size must be positive");
            if (!finite3(inst.box.center) || !std::isfinite(inst.box.yaw))
                add(Violation::Kind::non_finite_value, f, who + ": non-finite box value");
            else if (!(inst.box.yaw >= -std::numbers::pi && inst.box.yaw < std::numbers::pi))
                add(Violation::Kind::yaw_out_of_range, f, who + ": yaw outside [-pi, pi)");
        }
    }
    return report;
}

}  // namespace instadrive
