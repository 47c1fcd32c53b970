#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "scene.hpp"

namespace instadrive {

// Malformed input: bad JSON syntax or a schema mismatch.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

using nlohmann::json;

inline const json& field(const json& j, const char* key, const std::string& ctx) {
    if (!j.is_object() || !j.contains(key))
        throw FormatError(ctx + ": missing field \"" + key + "\"");
    return j.at(key);
}

inline double number(const json& j, const std::string& ctx) {
    if (!j.is_number()) throw FormatError(ctx + ": expected a number");
    return j.get<double>();
}

inline std::int64_t integer(const json& j, const std::string& ctx) {
    if (!j.is_number_integer()) throw FormatError(ctx + ": expected an integer");
    return j.get<std::int64_t>();
}

template <std::size_t N>
std::array<double, N> numbers(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != N)
        throw FormatError(ctx + ": expected an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = number(j[i], ctx);
    return out;
}

inline Vec3 vec3(const json& j, const std::string& ctx) {
    auto a = numbers<3>(j, ctx);
    return {a[0], a[1], a[2]};
}

inline RigidPose pose(const json& j, const std::string& ctx) {
    RigidPose p;
    p.rotation.m = numbers<9>(field(j, "rotation", ctx), ctx + ".rotation");
    p.translation = vec3(field(j, "translation", ctx), ctx + ".translation");
    return p;
}

inline json to_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }

inline json to_json(const RigidPose& p) {
    return {{"rotation", p.rotation.m}, {"translation", to_json(p.translation)}};
}

// 1-based line/column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

inline SceneSequence scene_from_json(const nlohmann::json& root) {
    using namespace detail;
    SceneSequence scene;
    const json& frames = field(root, "frames", "scene");
    if (!frames.is_array()) throw FormatError("scene.frames: expected an array");
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string ctx = "frames[" + std::to_string(f) + "]";
        const json& jf = frames[f];
        Frame fr;
        fr.ego = pose(field(jf, "ego", ctx), ctx + ".ego");
        const json& cams = field(jf, "cameras", ctx);
        if (!cams.is_array()) throw FormatError(ctx + ".cameras: expected an array");
        for (std::size_t c = 0; c < cams.size(); ++c) {
            const std::string cc = ctx + ".cameras[" + std::to_string(c) + "]";
            CameraMount cam;
            cam.extrinsics = pose(cams[c], cc);
            const json& k = field(cams[c], "intrinsics", cc);
            const std::string kc = cc + ".intrinsics";
            cam.intrinsics.fx = number(field(k, "fx", kc), kc + ".fx");
            cam.intrinsics.fy = number(field(k, "fy", kc), kc + ".fy");
            cam.intrinsics.cx = number(field(k, "cx", kc), kc + ".cx");
            cam.intrinsics.cy = number(field(k, "cy", kc), kc + ".cy");
            cam.intrinsics.width = static_cast<int>(integer(field(k, "width", kc), kc + ".width"));
            cam.intrinsics.height = static_cast<int>(integer(field(k, "height", kc), kc + ".height"));
            fr.cameras.push_back(cam);
        }
        const json& insts = field(jf, "instances", ctx);
        if (!insts.is_array()) throw FormatError(ctx + ".instances: expected an array");
        for (std::size_t i = 0; i < insts.size(); ++i) {
            const std::string ic = ctx + ".instances[" + std::to_string(i) + "]";
            const json& ji = insts[i];
            TrackedInstanceFrame inst;
            inst.track_id = integer(field(ji, "track_id", ic), ic + ".track_id");
            inst.box.track_id = inst.track_id;
            inst.box.class_id = static_cast<int>(integer(field(ji, "class_id", ic), ic + ".class_id"));
            inst.box.center = vec3(field(ji, "center", ic), ic + ".center");
            inst.box.size = vec3(field(ji, "size", ic), ic + ".size");
            inst.box.yaw = number(field(ji, "yaw", ic), ic + ".yaw");
            const json& vis = field(ji, "visible", ic);
            if (!vis.is_boolean()) throw FormatError(ic + ".visible: expected a boolean");
            inst.visible = vis.get<bool>();
            fr.instances.push_back(inst);
        }
        if (jf.contains("prompt")) {
            if (!jf["prompt"].is_string()) throw FormatError(ctx + ".prompt: expected a string");
            fr.prompt = jf["prompt"].get<std::string>();
        }
        scene.frames.push_back(std::move(fr));
    }
    if (root.contains("lanes")) {
        const json& lanes = root["lanes"];
        if (!lanes.is_array()) throw FormatError("scene.lanes: expected an array");
        for (std::size_t l = 0; l < lanes.size(); ++l) {
            const std::string lc = "lanes[" + std::to_string(l) + "]";
            if (!lanes[l].is_array()) throw FormatError(lc + ": expected an array of points");
            Polyline line;
            for (const auto& p : lanes[l]) line.push_back(vec3(p, lc));
            scene.lanes.push_back(std::move(line));
        }
    }
    return scene;
}

inline nlohmann::json scene_to_json(const SceneSequence& scene) {
    using namespace detail;
    json frames = json::array();
    for (const Frame& fr : scene.frames) {
        json cams = json::array();
        for (const auto& cam : fr.cameras) {
            json jc = to_json(cam.extrinsics);
            const auto& k = cam.intrinsics;
            jc["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                                {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
            cams.push_back(std::move(jc));
        }
        json insts = json::array();
        for (const auto& inst : fr.instances) {
            insts.push_back({{"track_id", inst.track_id},
                             {"class_id", inst.box.class_id},
                             {"center", to_json(inst.box.center)},
                             {"size", to_json(inst.box.size)},
                             {"yaw", inst.box.yaw},
                             {"visible", inst.visible}});
        }
        frames.push_back({{"ego", to_json(fr.ego)},
                          {"cameras", std::move(cams)},
                          {"instances", std::move(insts)},
                          {"prompt", fr.prompt}});
    }
    json root = {{"frames", std::move(frames)}};
    if (!scene.lanes.empty()) {
        json lanes = json::array();
        for (const auto& line : scene.lanes) {
            json jl = json::array();
            for (Vec3 p : line) jl.push_back(to_json(p));
            lanes.push_back(std::move(jl));
        }
        root["lanes"] = std::move(lanes);
    }
    return root;
}

inline SceneSequence parse_scene(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
        throw FormatError("JSON parse error at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + e.what());
    }
    return scene_from_json(root);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline SceneSequence load_scene(const std::string& path) { return parse_scene(read_text_file(path)); }

inline std::string dump_scene(const SceneSequence& scene) { return scene_to_json(scene).dump(2) + "\n"; }

}  // namespace instadrive
