// Command-line front end: scene validation, condition rendering, scenario
// synthesis and the toy train / generate loop.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "instadrive/checkpoint.hpp"
#include "instadrive/image.hpp"
#include "instadrive/instance_flow.hpp"
#include "instadrive/pipeline.hpp"
#include "instadrive/scenario.hpp"
#include "instadrive/scene_json.hpp"

namespace fs = std::filesystem;
using namespace instadrive;

namespace {

enum ExitCode { kOk = 0, kDomainFailure = 1, kIoFailure = 2 };

// Raised for anything that should map to exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string scene;
    std::string out;
    std::string what = "all";
    std::string spec;
    std::string data;
    std::string checkpoint;
    std::string loss_log;
    int camera = 0;
    double flow_range = 10.0;
    std::uint64_t seed = 0;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> frames;
    double lr = 3e-3;
    bool wireframe = false;
    bool clamp_first = false;
    bool dump_motion = false;
    nlohmann::json model = nlohmann::json::object();
    Palette palette{};
};

// "palette": up to 16 [r, g, b] triples replacing the leading class colors.
Palette parse_palette(const nlohmann::json& v) {
    if (!v.is_array() || v.size() > 16) throw IoError("config key 'palette' must be an array of at most 16 colors");
    Palette p;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& c = v[i];
        if (!c.is_array() || c.size() != 3) throw IoError("palette entry " + std::to_string(i) + " must be [r, g, b]");
        std::uint8_t rgb[3];
        for (int k = 0; k < 3; ++k) {
            if (!c[k].is_number_integer() || c[k].get<int>() < 0 || c[k].get<int>() > 255)
                throw IoError("palette entry " + std::to_string(i) + " has a channel outside 0..255");
            rgb[k] = static_cast<std::uint8_t>(c[k].get<int>());
        }
        p.colors[i] = {rgb[0], rgb[1], rgb[2]};
    }
    return p;
}

// Keys accepted in a --config file; command-line flags override them.
void apply_config_file(RunConfig& rc, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw IoError("config " + path + ": expected a JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "scene") rc.scene = v.get<std::string>();
            else if (key == "out") rc.out = v.get<std::string>();
            else if (key == "what") rc.what = v.get<std::string>();
            else if (key == "spec") rc.spec = v.get<std::string>();
            else if (key == "data") rc.data = v.get<std::string>();
            else if (key == "checkpoint") rc.checkpoint = v.get<std::string>();
            else if (key == "loss_log") rc.loss_log = v.get<std::string>();
            else if (key == "camera") rc.camera = v.get<int>();
            else if (key == "flow_range") rc.flow_range = v.get<double>();
            else if (key == "seed") rc.seed = v.get<std::uint64_t>();
            else if (key == "steps") rc.steps = v.get<std::size_t>();
            else if (key == "frames") rc.frames = v.get<std::size_t>();
            else if (key == "lr") rc.lr = v.get<double>();
            else if (key == "wireframe") rc.wireframe = v.get<bool>();
            else if (key == "clamp_first") rc.clamp_first = v.get<bool>();
            else if (key == "dump_motion") rc.dump_motion = v.get<bool>();
            else if (key == "palette") rc.palette = parse_palette(v);
            else if (key == "model") {
                if (!v.is_object()) throw IoError("config key 'model' must be an object");
                rc.model = v;
            } else {
                throw IoError("config " + path + ": unknown key '" + key + "'");
            }
        } catch (const nlohmann::json::type_error&) {
            throw IoError("config " + path + ": key '" + key + "' has the wrong type");
        }
    }
}

std::string frame_name(std::size_t t, const std::string& kind, std::size_t cam, const char* ext = "ppm") {
    char buf[96];
    std::snprintf(buf, sizeof buf, "frame_%04zu_%s_%zu.%s", t, kind.c_str(), cam, ext);
    return buf;
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw IoError("--out is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
}

SceneSequence load_scene_checked(const std::string& path) {
    if (path.empty()) throw IoError("--scene is required");
    return load_scene(path);
}

ToyStDiTConfig model_config(const RunConfig& rc) {
    ToyStDiTConfig cfg;
    apply_json(cfg, rc.model);
    return cfg;
}

int cmd_validate(const RunConfig& rc) {
    const SceneSequence scene = load_scene_checked(rc.scene);
    const ValidationReport report = validate_scene(scene);
    for (const auto& v : report.violations)
        std::cout << (v.severity == Severity::error ? "error" : "warning") << " [" << to_string(v.kind)
                  << "] " << v.message << "\n";
    std::cout << (report.ok() ? "ok" : std::to_string(report.violations.size()) + " violation(s)") << "\n";
    return report.ok() ? kOk : kDomainFailure;
}

int cmd_render(const RunConfig& rc) {
    const SceneSequence scene = load_scene_checked(rc.scene);
    if (rc.what != "all" && rc.what != "flow" && rc.what != "layout" && rc.what != "lanes")
        throw std::invalid_argument("--what must be one of flow, layout, lanes, all");
    ensure_dir(rc.out);
    if (scene.frames.empty()) {
        std::cout << "scene has no frames; nothing rendered\n";
        return kOk;
    }
    const ValidationReport report = validate_scene(scene);
    if (!report.ok()) {
        for (const auto& v : report.violations) std::cerr << v.message << "\n";
        return kDomainFailure;
    }
    if (rc.camera < 0 || std::size_t(rc.camera) >= scene.camera_count())
        throw std::invalid_argument("--camera " + std::to_string(rc.camera) + " is out of range");
    const std::size_t cam = std::size_t(rc.camera);
    PipelineOptions opts;
    opts.flow_range = rc.flow_range;
    opts.wireframe = rc.wireframe;
    opts.palette = rc.palette;
    const bool all = rc.what == "all";
    std::size_t written = 0;
    for (std::size_t t = 0; t < scene.frames.size(); ++t) {
        const ConditionImages img = render_conditions(scene, t, cam, opts);
        if (all || rc.what == "flow") {
            write_ppm(fs::path(rc.out) / frame_name(t, "flow", cam), img.flow);
            ++written;
            if (rc.dump_motion)
                atomic_write(fs::path(rc.out) / frame_name(t, "motion", cam, "iflow"),
                             encode_motion_map(rasterize_motion_map(scene, cam, t)));
        }
        if (all || rc.what == "layout") {
            write_ppm(fs::path(rc.out) / frame_name(t, "layout", cam), img.layout);
            ++written;
        }
        if (all || rc.what == "lanes") {
            write_ppm(fs::path(rc.out) / frame_name(t, "lanes", cam), img.lanes);
            ++written;
        }
    }
    std::cout << "wrote " << written << " image(s) to " << rc.out << "\n";
    return kOk;
}

int cmd_scenario(const RunConfig& rc) {
    ScenarioSpec spec;
    if (!rc.spec.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text_file(rc.spec));
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("scenario spec " + rc.spec + ": " + e.what());
        }
        spec = scenario_from_json(j);
    } else {
        Rng rng(rc.seed);
        spec = random_scenario_spec(rng);
    }
    if (rc.frames) spec.frames = *rc.frames;
    const SceneSequence scene = generate_scenario(spec, rc.seed);
    const std::string text = dump_scene(scene);
    std::ostream& log = rc.out.empty() ? std::cerr : std::cout;
    if (rc.out.empty())
        std::cout << text;
    else
        atomic_write(rc.out, text);
    std::size_t events = 0;
    for (const auto& e : spec.events) events += e.kind != EventSpec::Kind::none;
    log << "scenario: " << spec.actors.size() << " actor(s), " << events << " event(s), " << spec.frames
        << " frame(s), " << spec.rig.cameras << " camera(s)\n";
    return kOk;
}

std::vector<TrainingSample> load_dataset(const std::string& dir, const ToyStDiTConfig& cfg) {
    if (dir.empty()) throw IoError("--data is required");
    if (!fs::is_directory(dir)) throw IoError("data directory " + dir + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("data directory " + dir + " has no scene .json files");
    PipelineOptions opts;
    opts.views = cfg.views;
    std::vector<TrainingSample> out;
    for (const auto& f : files) {
        const SceneSequence scene = load_scene(f.string());
        const ValidationReport report = validate_scene(scene);
        if (!report.ok()) throw std::invalid_argument(f.string() + ": " + report.violations.front().message);
        out.push_back(build_sample(scene, cfg, opts));
    }
    return out;
}

int cmd_train(const RunConfig& rc) {
    if (rc.out.empty()) throw IoError("--out is required");
    const fs::path parent = fs::absolute(rc.out).parent_path();
    if (!fs::is_directory(parent)) throw IoError("output directory " + parent.string() + " does not exist");
    ToyStDiTConfig cfg = model_config(rc);
    cfg.seed = rc.seed;
    const auto data = load_dataset(rc.data, cfg);
    ToyStDiT model(cfg);
    const auto sched = NoiseSchedule::make(cfg.schedule, cfg.diffusion_steps);
    AdamOptions ao;
    ao.lr = rc.lr;
    Adam opt(model.parameters(), ao);
    Rng rng(stable_hash("train", rc.seed));
    const std::size_t steps = rc.steps.value_or(100);
    std::ostringstream log;
    log << "step,loss\n";
    log.precision(17);
    for (std::size_t i = 0; i < steps; ++i) {
        const StepResult r = train_step(model, data, rng, sched);
        opt.step();
        log << i << "," << r.loss << "\n";
        if (i % 50 == 0 || i + 1 == steps) std::cout << "step " << i << " loss " << r.loss << "\n";
    }
    save_checkpoint(rc.out, model);
    atomic_write(rc.loss_log.empty() ? rc.out + ".loss.csv" : rc.loss_log, log.str());
    std::cout << "checkpoint written to " << rc.out << " (" << model.parameter_count() << " parameters)\n";
    return kOk;
}

int cmd_generate(const RunConfig& rc) {
    if (rc.checkpoint.empty()) throw IoError("--checkpoint is required");
    if (!fs::exists(rc.checkpoint)) throw IoError("checkpoint " + rc.checkpoint + " does not exist");
    const ToyStDiT model = load_checkpoint(rc.checkpoint);
    const SceneSequence scene = load_scene_checked(rc.scene);
    const ValidationReport report = validate_scene(scene);
    if (!report.ok()) throw std::invalid_argument(report.violations.front().message);
    ensure_dir(rc.out);
    PipelineOptions opts;
    opts.views = model.config.views;
    const ControlInputs control = build_control(scene, opts, model.config.depth_z_max);
    const Tensor text = ToyTextEncoder{model.config.text_tokens, model.config.text_dim}.encode(scene.frames[0].prompt);
    const std::size_t clip = scene.frames.size(), total = rc.frames.value_or(clip);
    const std::size_t h = control.motion_latent.dim(1), w = control.motion_latent.dim(2);
    GenerateOptions go;
    go.steps = rc.steps.value_or(model.config.diffusion_steps);
    go.seed = rc.seed;
    Tensor first;
    if (rc.clamp_first) {
        first = slice_frames(build_target_latent(scene, opts), 0, 1).reshaped({h, w, model.config.latent_channels});
        go.first_frame = first;
        write_ppm(fs::path(rc.out) / "input_preview.ppm", mock_vae_decode(first));
    }
    const Tensor video = total <= clip ? generate(model, &control, text, total, h, w, go)
                                       : generate_autoregressive(model, &control, text, clip, total, h, w, go);
    atomic_write(fs::path(rc.out) / "latent.tten", encode_tensor_file({{"latent", video}}));
    for (std::size_t t = 0; t < video.dim(0); ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "frame_%04zu_preview.ppm", t);
        write_ppm(fs::path(rc.out) / name, mock_vae_decode(slice_frames(video, t, 1).reshaped({h, w, video.dim(3)})));
    }
    std::cout << "generated " << video.dim(0) << " frame(s) " << shape_str(video.shape()) << " into " << rc.out << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instadrive: instance-flow and geometry conditioning toolkit"};
    app.require_subcommand(1);
    RunConfig rc;
    std::string config_path;
    std::size_t steps = 0, frames = 0;

    struct Flags {
        CLI::Option *scene, *out, *camera, *flow_range, *seed, *steps, *what, *wireframe, *spec, *data, *checkpoint,
            *lr, *clamp, *frames, *loss_log, *dump_motion;
    };
    auto add_common = [&](CLI::App* sub, Flags& f) {
        sub->add_option("--config", config_path, "JSON config file; flags override its keys");
        f.scene = sub->add_option("--scene", rc.scene, "scene JSON file");
        f.out = sub->add_option("--out", rc.out, "output path");
        f.camera = sub->add_option("--camera", rc.camera, "camera index");
        f.flow_range = sub->add_option("--flow-range", rc.flow_range, "flow encoding range r in metres")
                           ->check(CLI::PositiveNumber);
        f.seed = sub->add_option("--seed", rc.seed, "random seed");
        f.steps = sub->add_option("--steps", steps, "training or sampling steps");
        f.what = sub->add_option("--what", rc.what, "flow, layout, lanes or all");
        f.wireframe = sub->add_flag("--wireframe", rc.wireframe, "draw box wireframes instead of filled hulls");
        f.spec = sub->add_option("--spec", rc.spec, "scenario spec JSON");
        f.data = sub->add_option("--data", rc.data, "directory of scene JSON files");
        f.checkpoint = sub->add_option("--checkpoint", rc.checkpoint, "model checkpoint");
        f.lr = sub->add_option("--lr", rc.lr, "Adam learning rate");
        f.clamp = sub->add_flag("--clamp-first", rc.clamp_first, "clamp frame 0 to the scene's first frame");
        f.frames = sub->add_option("--frames", frames, "frame count");
        f.loss_log = sub->add_option("--loss-log", rc.loss_log, "CSV loss log path");
        f.dump_motion = sub->add_flag("--dump-motion", rc.dump_motion, "also write raw motion maps");
    };

    Flags f{};
    auto* validate = app.add_subcommand("validate", "check a scene file");
    auto* render = app.add_subcommand("render", "render condition images");
    auto* scenario = app.add_subcommand("scenario", "synthesise a scene");
    auto* train = app.add_subcommand("train", "train the toy model");
    auto* generate = app.add_subcommand("generate", "sample a latent video");
    std::vector<Flags> flags(5);
    CLI::App* subs[] = {validate, render, scenario, train, generate};
    for (int i = 0; i < 5; ++i) add_common(subs[i], flags[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kIoFailure;
    }

    CLI::App* active = nullptr;
    for (int i = 0; i < 5; ++i)
        if (subs[i]->parsed()) {
            active = subs[i];
            f = flags[i];
        }

    try {
        if (!config_path.empty()) {
            // Re-apply flags after the config file so that flags win.
            RunConfig from_flags = rc;
            apply_config_file(rc, config_path);
            auto take = [](CLI::Option* o, auto& dst, const auto& src) {
                if (o->count() > 0) dst = src;
            };
            take(f.scene, rc.scene, from_flags.scene);
            take(f.out, rc.out, from_flags.out);
            take(f.camera, rc.camera, from_flags.camera);
            take(f.flow_range, rc.flow_range, from_flags.flow_range);
            take(f.seed, rc.seed, from_flags.seed);
            take(f.what, rc.what, from_flags.what);
            take(f.wireframe, rc.wireframe, from_flags.wireframe);
            take(f.spec, rc.spec, from_flags.spec);
            take(f.data, rc.data, from_flags.data);
            take(f.checkpoint, rc.checkpoint, from_flags.checkpoint);
            take(f.lr, rc.lr, from_flags.lr);
            take(f.clamp, rc.clamp_first, from_flags.clamp_first);
            take(f.loss_log, rc.loss_log, from_flags.loss_log);
            take(f.dump_motion, rc.dump_motion, from_flags.dump_motion);
        }
        if (f.steps->count() > 0) rc.steps = steps;
        if (f.frames->count() > 0) rc.frames = frames;
        if (!(rc.flow_range > 0)) throw std::invalid_argument("flow range must be positive");

        if (active == validate) return cmd_validate(rc);
        if (active == render) return cmd_render(rc);
        if (active == scenario) return cmd_scenario(rc);
        if (active == train) return cmd_train(rc);
        return cmd_generate(rc);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDomainFailure;
    }
}
