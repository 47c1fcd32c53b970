#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "instance_flow.hpp"
#include "mock_vae.hpp"
#include "projection.hpp"
#include "scene.hpp"
#include "stdit.hpp"
#include "text_embed.hpp"

namespace instadrive {

struct PipelineOptions {
    std::size_t views = 1;  // cameras [0, views) are tiled along the width
    double flow_range = 10.0;
    bool wireframe = false;
    Palette palette{};
};

inline constexpr Rgb kSkyColor{135, 170, 210};
inline constexpr Rgb kRoadColor{90, 90, 90};

// Per-camera condition images for one frame.
struct ConditionImages {
    RgbImage flow;
    RgbImage layout;
    RgbImage lanes;
};

inline ConditionImages render_conditions(const SceneSequence& scene, std::size_t t, std::size_t camera,
                                         const PipelineOptions& opts = {}) {
    check_frame(scene, t);
    const Frame& frame = scene.frames[t];
    if (camera >= frame.cameras.size())
        throw std::out_of_range("camera index " + std::to_string(camera) + " out of range");
    const CameraMount& cam = frame.cameras[camera];
    const int w = cam.intrinsics.width, h = cam.intrinsics.height;
    ConditionImages out;
    out.flow = flow_to_rgb(rasterize_motion_map(scene, camera, t), opts.flow_range);
    out.layout = rasterize_layout(project_frame(frame, camera), w, h, opts.palette, LayoutOptions{opts.wireframe});
    out.lanes = RgbImage(w, h, kBackground);
    rasterize_lanes(out.lanes, scene.lanes, frame.ego, cam.extrinsics, cam.intrinsics);
    return out;
}

// Synthetic "camera frame" the toy model learns to reproduce: sky above the
// principal point, road below, then lanes and filled boxes on top.
inline RgbImage render_target(const SceneSequence& scene, std::size_t t, std::size_t camera) {
    const ConditionImages c = render_conditions(scene, t, camera);
    const CameraIntrinsics& k = scene.frames[t].cameras[camera].intrinsics;
    RgbImage img(k.width, k.height);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
            Rgb px = (y + 0.5) < k.cy ? kSkyColor : kRoadColor;
            if (c.lanes.get(x, y) != kBackground) px = c.lanes.get(x, y);
            if (c.layout.get(x, y) != kBackground) px = c.layout.get(x, y);
            img.set(x, y, px);
        }
    return img;
}

namespace detail {

// Encodes per-(view, frame) images into a view-inflated (t, h, w*v, 4) latent.
template <class Render>
Tensor encode_views(std::size_t frames, std::size_t views, Render&& render) {
    Tensor stacked;
    for (std::size_t v = 0; v < views; ++v)
        for (std::size_t f = 0; f < frames; ++f) {
            const Tensor z = mock_vae_encode(render(f, v));
            if (stacked.empty()) stacked = Tensor({views, frames, z.dim(0), z.dim(1), z.dim(2)});
            if (z.dim(0) != stacked.dim(2) || z.dim(1) != stacked.dim(3))
                throw ShapeError("all cameras must share one image size");
            std::copy_n(z.ptr(), z.size(), stacked.ptr() + (v * frames + f) * z.size());
        }
    return view_inflate(stacked);
}

}  // namespace detail

inline void check_views(const SceneSequence& scene, const PipelineOptions& opts) {
    if (scene.frames.empty()) throw std::invalid_argument("scene has no frames");
    if (opts.views == 0) throw std::invalid_argument("at least one view is required");
    for (const auto& fr : scene.frames)
        if (fr.cameras.size() < opts.views)
            throw std::invalid_argument("scene has fewer cameras than the requested " + std::to_string(opts.views) +
                                        " views");
}

inline ControlInputs build_control(const SceneSequence& scene, const PipelineOptions& opts = {},
                                   double z_max = 80.0) {
    check_views(scene, opts);
    const std::size_t frames = scene.frames.size();
    std::vector<std::vector<ConditionImages>> imgs(frames);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t v = 0; v < opts.views; ++v) imgs[f].push_back(render_conditions(scene, f, v, opts));
    ControlInputs c;
    c.motion_latent = detail::encode_views(frames, opts.views, [&](std::size_t f, std::size_t v) { return imgs[f][v].flow; });
    c.layout_latent =
        detail::encode_views(frames, opts.views, [&](std::size_t f, std::size_t v) { return imgs[f][v].layout; });
    c.lane_latent = detail::encode_views(frames, opts.views, [&](std::size_t f, std::size_t v) { return imgs[f][v].lanes; });
    c.boxes.resize(frames);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t v = 0; v < opts.views; ++v) {
            const CameraIntrinsics& k = scene.frames[f].cameras[v].intrinsics;
            const CornerNormalization norm{double(k.width), double(k.height), z_max};
            for (const ProjectedBox& pb : project_frame(scene.frames[f], v))
                if (!pb.fully_behind()) c.boxes[f].push_back(corner_rows(pb, norm));
        }
    return c;
}

inline Tensor build_target_latent(const SceneSequence& scene, const PipelineOptions& opts = {}) {
    check_views(scene, opts);
    return detail::encode_views(scene.frames.size(), opts.views,
                                [&](std::size_t f, std::size_t v) { return render_target(scene, f, v); });
}

inline TrainingSample build_sample(const SceneSequence& scene, const ToyStDiTConfig& cfg,
                                   const PipelineOptions& opts = {}) {
    TrainingSample s;
    s.latent = build_target_latent(scene, opts);
    s.control = build_control(scene, opts, cfg.depth_z_max);
    s.text = ToyTextEncoder{cfg.text_tokens, cfg.text_dim}.encode(scene.frames.front().prompt);
    return s;
}

}  // namespace instadrive
