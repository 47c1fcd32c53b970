#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "projection.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace instadrive {

struct ScenarioError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Straight multi-lane road along +x. Lane i has its center at
// y = (i - (count - 1) / 2) * width.
struct MapSpec {
    int lane_count = 3;
    double lane_width = 3.5;
    double lane_length = 200.0;
    std::vector<Polyline> lanes;

    double lane_center(int lane) const { return (lane - (lane_count - 1) / 2.0) * lane_width; }

    static MapSpec straight(int count, double width, double length, double vertex_spacing = 10.0) {
        if (count < 1) throw ScenarioError("lane count must be >= 1");
        if (!(width > 0)) throw ScenarioError("lane width must be positive");
        if (!(length > 0)) throw ScenarioError("lane length must be positive");
        MapSpec m{count, width, length, {}};
        const int segments = std::max(1, int(std::ceil(length / vertex_spacing)));
        for (int i = 0; i < count; ++i) {
            Polyline line;
            for (int k = 0; k <= segments; ++k) line.push_back({length * k / segments, m.lane_center(i), 0.0});
            m.lanes.push_back(std::move(line));
        }
        return m;
    }
};

struct ActorSpec {
    int lane = 0;
    double speed = 10.0;  // m/s, > 0
    double start = 20.0;  // initial x, metres
    int class_id = 0;
};

// Ground-contact positions (z = 0) per frame.
using Trajectory = std::vector<Vec3>;

inline constexpr double kMaxJitter = 0.1;

// Constant-velocity lane following sampled every dt, with independent
// lateral jitter drawn uniformly from [-jitter, jitter].
inline std::vector<Trajectory> gen_waypoints(const MapSpec& map, const std::vector<ActorSpec>& actors,
                                             std::size_t frames, double dt, Rng& rng, double jitter = kMaxJitter) {
    if (frames < 2) throw ScenarioError("scenario needs at least 2 frames");
    if (!(dt > 0)) throw ScenarioError("dt must be positive");
    if (!(jitter >= 0 && jitter <= kMaxJitter)) throw ScenarioError("lateral jitter must lie in [0, 0.1] m");
    std::vector<Trajectory> out;
    for (const auto& a : actors) {
        if (!(a.speed > 0)) throw ScenarioError("actor speed must be positive");
        if (a.lane < 0 || a.lane >= map.lane_count) throw ScenarioError("actor lane out of range");
        Trajectory tr;
        for (std::size_t f = 0; f < frames; ++f) {
            const double j = jitter > 0 ? rng.uniform(-jitter, jitter) : 0.0;
            tr.push_back({a.start + a.speed * dt * double(f), map.lane_center(a.lane) + j, 0.0});
        }
        out.push_back(std::move(tr));
    }
    return out;
}

struct EventSpec {
    enum class Kind { none, cut_in, sudden_brake };
    Kind kind = Kind::none;
    std::size_t actor = 0;
    std::size_t start = 0;
    std::size_t duration = 1;
    double magnitude = 0.0;  // lateral metres (cut_in) or m/s^2 (sudden_brake)
    int direction = 1;       // cut_in lateral sign
};

inline const char* to_string(EventSpec::Kind k) {
    switch (k) {
        case EventSpec::Kind::none: return "none";
        case EventSpec::Kind::cut_in: return "cut_in";
        case EventSpec::Kind::sudden_brake: return "sudden_brake";
    }
    return "none";
}

inline double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

inline void validate_event(const EventSpec& e, std::size_t frames) {
    if (e.kind == EventSpec::Kind::none) return;
    if (e.duration < 1) throw ScenarioError("event duration must be >= 1 frame");
    if (e.start + e.duration > frames)
        throw ScenarioError("event window [" + std::to_string(e.start) + ", " + std::to_string(e.start + e.duration) +
                            "] exceeds scene length " + std::to_string(frames));
    if (!(e.magnitude > 0)) throw ScenarioError("event magnitude must be positive");
    if (e.direction != 1 && e.direction != -1) throw ScenarioError("cut_in direction must be +1 or -1");
}

// cut_in: lateral smoothstep offset of `magnitude` reached `duration` frames
// after `start`. sudden_brake: the longitudinal speed of each interval from
// `start` on drops by magnitude*dt per braking frame (at most `duration`
// frames), floored at zero, and x is re-integrated.
inline Trajectory apply_event(Trajectory traj, const EventSpec& e, double dt) {
    validate_event(e, traj.size());
    switch (e.kind) {
        case EventSpec::Kind::none:
            break;
        case EventSpec::Kind::cut_in:
            for (std::size_t f = e.start; f < traj.size(); ++f) {
                const double s = double(f - e.start) / double(e.duration);
                traj[f].y += e.direction * e.magnitude * smoothstep(s);
            }
            break;
        case EventSpec::Kind::sudden_brake: {
            std::vector<double> speed(traj.size() - 1);
            for (std::size_t f = 0; f + 1 < traj.size(); ++f) speed[f] = (traj[f + 1].x - traj[f].x) / dt;
            for (std::size_t f = e.start; f + 1 < traj.size(); ++f) {
                const double frames_braked = double(std::min(f - e.start + 1, e.duration));
                speed[f] = std::max(0.0, speed[f] - e.magnitude * dt * frames_braked);
                traj[f + 1].x = traj[f].x + speed[f] * dt;
            }
            break;
        }
    }
    return traj;
}

struct EgoSpec {
    int lane = 1;
    double speed = 8.0;
    double start = 0.0;
};

struct RigSpec {
    int cameras = 6;
    int image_width = 448;
    int image_height = 256;
    double fov_deg = 70.0;
    double mount_height = 1.5;
};

// Camera k looks along ego yaw k * 360/cameras (60 degree steps for six).
// Camera axes: x right, y down, z forward.
inline std::vector<CameraMount> make_rig(const RigSpec& rig) {
    if (rig.cameras < 1) throw ScenarioError("rig needs at least one camera");
    if (rig.image_width <= 0 || rig.image_height <= 0) throw ScenarioError("image size must be positive");
    if (!(rig.fov_deg > 0 && rig.fov_deg < 180)) throw ScenarioError("fov must lie in (0, 180) degrees");
    CameraIntrinsics k;
    k.width = rig.image_width;
    k.height = rig.image_height;
    k.fx = k.fy = 0.5 * rig.image_width / std::tan(rig.fov_deg * std::numbers::pi / 360.0);
    k.cx = rig.image_width / 2.0;
    k.cy = rig.image_height / 2.0;
    std::vector<CameraMount> out;
    for (int i = 0; i < rig.cameras; ++i) {
        const double a = 2.0 * std::numbers::pi * i / rig.cameras;
        const double c = std::cos(a), s = std::sin(a);
        CameraMount m;
        m.extrinsics.rotation = Mat3::from_columns({s, -c, 0}, {0, 0, -1}, {c, s, 0});
        m.extrinsics.translation = {0, 0, rig.mount_height};
        m.intrinsics = k;
        out.push_back(m);
    }
    return out;
}

inline Vec3 class_size(int class_id) {
    switch (class_id) {
        case 1: return {8.0, 2.5, 3.2};   // truck
        case 2: return {11.0, 2.9, 3.4};  // bus
        case 3: return {0.8, 0.8, 1.8};   // pedestrian
        case 4: return {1.8, 0.7, 1.6};   // cyclist
        default: return {4.5, 1.9, 1.6};  // car
    }
}

// Heading from the forward displacement (backward at the last frame); a
// stationary step keeps the previous heading.
inline std::vector<double> headings(const Trajectory& tr, double initial = 0.0) {
    std::vector<double> yaw(tr.size(), initial);
    double last = initial;
    for (std::size_t f = 0; f < tr.size(); ++f) {
        const Vec3 d = f + 1 < tr.size() ? tr[f + 1] - tr[f] : (f > 0 ? tr[f] - tr[f - 1] : Vec3{});
        if (std::hypot(d.x, d.y) > 1e-9) last = wrap_angle(std::atan2(d.y, d.x));
        yaw[f] = last;
    }
    return yaw;
}

// Visible iff some corner projects inside some camera image in front of it.
inline bool instance_visible(const Box3D& box, const Frame& frame) {
    for (const auto& cam : frame.cameras) {
        const ProjectedBox pb = project_box(box, frame.ego, cam.extrinsics, cam.intrinsics);
        if (any_corner_in_image(pb, cam.intrinsics)) return true;
    }
    return false;
}

inline std::string fill_prompt(std::string tmpl, const std::string& weather, const std::string& time_of_day) {
    auto sub = [&](const std::string& key, const std::string& val) {
        for (std::size_t pos; (pos = tmpl.find(key)) != std::string::npos;) tmpl.replace(pos, key.size(), val);
    };
    sub("{weather}", weather);
    sub("{time}", time_of_day);
    return tmpl;
}

inline SceneSequence emit_scene(const MapSpec& map, const std::vector<Trajectory>& actors,
                                const std::vector<int>& classes, const Trajectory& ego,
                                const std::vector<CameraMount>& rig, const std::string& prompt) {
    if (classes.size() != actors.size()) throw ScenarioError("one class per actor required");
    for (const auto& tr : actors)
        if (tr.size() != ego.size()) throw ScenarioError("actor and ego trajectories must have equal length");
    SceneSequence scene;
    scene.lanes = map.lanes;
    const auto ego_yaw = headings(ego);
    std::vector<std::vector<double>> actor_yaw;
    for (const auto& tr : actors) actor_yaw.push_back(headings(tr));
    for (std::size_t f = 0; f < ego.size(); ++f) {
        Frame fr;
        fr.ego.rotation = Mat3::rot_z(ego_yaw[f]);
        fr.ego.translation = ego[f];
        fr.cameras = rig;
        fr.prompt = prompt;
        for (std::size_t a = 0; a < actors.size(); ++a) {
            TrackedInstanceFrame inst;
            inst.track_id = std::int64_t(a) + 1;
            inst.box.track_id = inst.track_id;
            inst.box.class_id = classes[a];
            inst.box.size = class_size(classes[a]);
            inst.box.center = actors[a][f] + Vec3{0, 0, inst.box.size.z / 2};
            inst.box.yaw = actor_yaw[a][f];
            inst.visible = instance_visible(inst.box, fr);
            fr.instances.push_back(inst);
        }
        scene.frames.push_back(std::move(fr));
    }
    return scene;
}

// Complete scenario description; the JSON form is what the CLI reads.
struct ScenarioSpec {
    std::size_t frames = 8;
    double dt = 0.5;
    int lanes = 3;
    double lane_width = 3.5;
    double lane_length = 200.0;
    double jitter = 0.05;
    EgoSpec ego;
    std::vector<ActorSpec> actors;
    std::vector<EventSpec> events;
    RigSpec rig;
    std::string prompt = "A {weather} {time} drive on a straight multi-lane road";
    std::string weather = "Sunny";
    std::string time_of_day = "Day";
};

inline SceneSequence generate_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
    const MapSpec map = MapSpec::straight(spec.lanes, spec.lane_width, spec.lane_length);
    if (spec.ego.lane < 0 || spec.ego.lane >= map.lane_count) throw ScenarioError("ego lane out of range");
    for (const auto& e : spec.events) {
        if (e.kind != EventSpec::Kind::none && e.actor >= spec.actors.size())
            throw ScenarioError("event actor index out of range");
        validate_event(e, spec.frames);
    }
    Rng rng(seed);
    auto trajs = gen_waypoints(map, spec.actors, spec.frames, spec.dt, rng, spec.jitter);
    for (const auto& e : spec.events)
        if (e.kind != EventSpec::Kind::none) trajs[e.actor] = apply_event(std::move(trajs[e.actor]), e, spec.dt);
    Trajectory ego;
    for (std::size_t f = 0; f < spec.frames; ++f)
        ego.push_back({spec.ego.start + spec.ego.speed * spec.dt * double(f), map.lane_center(spec.ego.lane), 0.0});
    std::vector<int> classes;
    for (const auto& a : spec.actors) classes.push_back(a.class_id);
    return emit_scene(map, trajs, classes, ego, make_rig(spec.rig),
                      fill_prompt(spec.prompt, spec.weather, spec.time_of_day));
}

// Random but valid scenario for fuzzing and the CLI's default mode.
inline ScenarioSpec random_scenario_spec(Rng& rng) {
    ScenarioSpec s;
    s.frames = 4 + rng.below(13);
    s.lanes = 1 + int(rng.below(4));
    s.lane_width = rng.uniform(3.0, 4.0);
    s.jitter = rng.uniform(0.0, kMaxJitter);
    s.ego = {int(rng.below(std::uint64_t(s.lanes))), rng.uniform(4.0, 12.0), 0.0};
    const std::size_t n = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i)
        s.actors.push_back({int(rng.below(std::uint64_t(s.lanes))), rng.uniform(2.0, 14.0), rng.uniform(-30.0, 60.0),
                            int(rng.below(5))});
    const std::size_t ne = rng.below(3);
    for (std::size_t i = 0; i < ne; ++i) {
        EventSpec e;
        e.kind = rng.bernoulli(0.5) ? EventSpec::Kind::cut_in : EventSpec::Kind::sudden_brake;
        e.actor = rng.below(n);
        e.duration = 1 + rng.below(s.frames - 1);
        e.start = rng.below(s.frames - e.duration + 1);
        e.magnitude = e.kind == EventSpec::Kind::cut_in ? rng.uniform(1.0, 4.0) : rng.uniform(2.0, 8.0);
        e.direction = rng.bernoulli(0.5) ? 1 : -1;
        s.events.push_back(e);
    }
    static const char* weathers[] = {"Sunny", "Rainy", "Cloudy"};
    static const char* times[] = {"Day", "Night"};
    s.weather = weathers[rng.below(3)];
    s.time_of_day = times[rng.below(2)];
    return s;
}

namespace detail {

template <class F>
void for_each_key(const nlohmann::json& j, const char* ctx, F&& f) {
    if (!j.is_object()) throw ScenarioError(std::string(ctx) + ": expected an object");
    for (const auto& [key, val] : j.items()) f(key, val);
}

inline double num_field(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw ScenarioError("scenario '" + key + "' must be a number");
    return v.get<double>();
}

inline long long int_field(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer()) throw ScenarioError("scenario '" + key + "' must be an integer");
    return v.get<long long>();
}

inline std::size_t count_field(const nlohmann::json& v, const std::string& key) {
    const long long x = int_field(v, key);
    if (x < 0) throw ScenarioError("scenario '" + key + "' must be non-negative");
    return std::size_t(x);
}

inline std::string str_field(const nlohmann::json& v, const std::string& key) {
    if (!v.is_string()) throw ScenarioError("scenario '" + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace detail

inline ScenarioSpec scenario_from_json(const nlohmann::json& j) {
    using namespace detail;
    ScenarioSpec s;
    for_each_key(j, "scenario", [&](const std::string& key, const nlohmann::json& v) {
        if (key == "frames") s.frames = count_field(v, key);
        else if (key == "dt") s.dt = num_field(v, key);
        else if (key == "lanes") s.lanes = int(int_field(v, key));
        else if (key == "lane_width") s.lane_width = num_field(v, key);
        else if (key == "lane_length") s.lane_length = num_field(v, key);
        else if (key == "jitter") s.jitter = num_field(v, key);
        else if (key == "prompt") s.prompt = str_field(v, key);
        else if (key == "weather") s.weather = str_field(v, key);
        else if (key == "time") s.time_of_day = str_field(v, key);
        else if (key == "ego") {
            for_each_key(v, "ego", [&](const std::string& k, const nlohmann::json& x) {
                if (k == "lane") s.ego.lane = int(int_field(x, k));
                else if (k == "speed") s.ego.speed = num_field(x, k);
                else if (k == "start") s.ego.start = num_field(x, k);
                else throw ScenarioError("unknown ego key '" + k + "'");
            });
        } else if (key == "rig") {
            for_each_key(v, "rig", [&](const std::string& k, const nlohmann::json& x) {
                if (k == "cameras") s.rig.cameras = int(int_field(x, k));
                else if (k == "image_width") s.rig.image_width = int(int_field(x, k));
                else if (k == "image_height") s.rig.image_height = int(int_field(x, k));
                else if (k == "fov_deg") s.rig.fov_deg = num_field(x, k);
                else if (k == "mount_height") s.rig.mount_height = num_field(x, k);
                else throw ScenarioError("unknown rig key '" + k + "'");
            });
        } else if (key == "actors") {
            if (!v.is_array()) throw ScenarioError("scenario 'actors' must be an array");
            for (const auto& ja : v) {
                ActorSpec a;
                for_each_key(ja, "actor", [&](const std::string& k, const nlohmann::json& x) {
                    if (k == "lane") a.lane = int(int_field(x, k));
                    else if (k == "speed") a.speed = num_field(x, k);
                    else if (k == "start") a.start = num_field(x, k);
                    else if (k == "class_id") a.class_id = int(int_field(x, k));
                    else throw ScenarioError("unknown actor key '" + k + "'");
                });
                s.actors.push_back(a);
            }
        } else if (key == "events") {
            if (!v.is_array()) throw ScenarioError("scenario 'events' must be an array");
            for (const auto& je : v) {
                EventSpec e;
                for_each_key(je, "event", [&](const std::string& k, const nlohmann::json& x) {
                    if (k == "kind") {
                        const std::string kind = str_field(x, k);
                        if (kind == "cut_in") e.kind = EventSpec::Kind::cut_in;
                        else if (kind == "sudden_brake") e.kind = EventSpec::Kind::sudden_brake;
                        else if (kind == "none") e.kind = EventSpec::Kind::none;
                        else throw ScenarioError("unknown event kind '" + kind + "'");
                    }
                    else if (k == "actor") e.actor = count_field(x, k);
                    else if (k == "start") e.start = count_field(x, k);
                    else if (k == "duration") e.duration = count_field(x, k);
                    else if (k == "magnitude") e.magnitude = num_field(x, k);
                    else if (k == "direction") e.direction = int(int_field(x, k));
                    else throw ScenarioError("unknown event key '" + k + "'");
                });
                s.events.push_back(e);
            }
        } else {
            throw ScenarioError("unknown scenario key '" + key + "'");
        }
    });
    return s;
}

inline nlohmann::json to_json(const ScenarioSpec& s) {
    nlohmann::json actors = nlohmann::json::array(), events = nlohmann::json::array();
    for (const auto& a : s.actors)
        actors.push_back({{"lane", a.lane}, {"speed", a.speed}, {"start", a.start}, {"class_id", a.class_id}});
    for (const auto& e : s.events)
        events.push_back({{"kind", to_string(e.kind)}, {"actor", e.actor}, {"start", e.start},
                          {"duration", e.duration}, {"magnitude", e.magnitude}, {"direction", e.direction}});
    return {{"frames", s.frames}, {"dt", s.dt}, {"lanes", s.lanes}, {"lane_width", s.lane_width},
            {"lane_length", s.lane_length}, {"jitter", s.jitter},
            {"ego", {{"lane", s.ego.lane}, {"speed", s.ego.speed}, {"start", s.ego.start}}},
            {"actors", std::move(actors)}, {"events", std::move(events)},
            {"rig", {{"cameras", s.rig.cameras}, {"image_width", s.rig.image_width},
                     {"image_height", s.rig.image_height}, {"fov_deg", s.rig.fov_deg},
                     {"mount_height", s.rig.mount_height}}},
            {"prompt", s.prompt}, {"weather", s.weather}, {"time", s.time_of_day}};
}

}  // namespace instadrive
