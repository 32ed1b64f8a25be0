#include "tsim/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tsim::render {

Rgb color_from_tag(const std::string& tag) {
    if (tag == "red") return {200, 44, 44};
    if (tag == "blue") return {52, 84, 190};
    if (tag == "green") return {58, 150, 70};
    if (tag == "white") return {235, 235, 235};
    if (tag == "black") return {28, 28, 28};
    if (tag == "grey") return {128, 128, 128};
    if (tag == "orange") return {235, 130, 36};
    if (tag == "yellow") return {228, 206, 52};
    if (tag == "brown") return {124, 82, 46};
    if (tag == "beige") return {214, 196, 164};
    if (tag == "teal") return {40, 150, 150};
    if (tag == "purple") return {130, 70, 170};
    return {160, 120, 200};  // unknown tags stay distinctive
}

CameraCfg CameraCfg::head() {
    CameraCfg c;
    c.name = "head";
    c.fov_deg = 90.0;
    c.mount = {0.275, 0.0, 0.0};
    c.occlusion_rows = 0;
    return c;
}

CameraCfg CameraCfg::back() {
    CameraCfg c;
    c.name = "back";
    c.fov_deg = 140.0;
    c.mount = {-0.275, 0.0, 0.0};
    c.occlusion_rows = 10;
    return c;
}

geom::Pose2D camera_pose(const sim::SimState& state, const CameraCfg& cfg) {
    return geom::compose(state.robot.pose, cfg.mount);
}

geom::Vec2 column_ray(const geom::Pose2D& cam, const CameraCfg& cfg, int column) {
    const double half_tan = std::tan(cfg.fov_deg * geom::kPi / 180.0 / 2.0);
    const double t =
        half_tan * (1.0 - 2.0 * static_cast<double>(column) / (cfg.width - 1));
    const geom::Vec2 fwd = cam.heading();
    const geom::Vec2 left = geom::perp(fwd);
    return geom::normalized(fwd + left * t);
}

std::vector<ColumnHit> column_hits(const sim::SimState& state, const CameraCfg& cfg) {
    const geom::Pose2D cam = camera_pose(state, cfg);
    std::vector<ColumnHit> hits(cfg.width);
    for (int col = 0; col < cfg.width; ++col) {
        const geom::Vec2 dir = column_ray(cam, cfg, col);
        ColumnHit best{kHitNone, cfg.max_range};
        for (std::size_t i = 0; i < state.obstacles.size(); ++i) {
            const auto t = geom::ray_rect_hit(cam.position(), dir, state.obstacles[i].rect);
            if (t && *t < best.distance) best = {static_cast<int>(i), *t};
        }
        const auto t = geom::ray_rect_hit(cam.position(), dir, state.trolley.rect());
        if (t && *t < best.distance) best = {kHitTrolley, *t};
        hits[col] = best;
    }
    return hits;
}

namespace {

std::uint8_t scale_channel(std::uint8_t c, double s) {
    const long v = std::lround(static_cast<double>(c) * s);
    return static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
}

Rgb scale_color(Rgb c, double s) {
    return {scale_channel(c.r, s), scale_channel(c.g, s), scale_channel(c.b, s)};
}

}  // namespace

Image render_camera(const sim::SimState& state, const CameraCfg& cfg) {
    Image img(cfg.width, cfg.height);
    const double bright = state.rand.brightness_scale;
    const Rgb sky = scale_color(kSkyColor, bright);
    const Rgb floor = scale_color(kFloorColor, bright);
    const auto hits = column_hits(state, cfg);
    const int h_img = cfg.height;

    for (int col = 0; col < cfg.width; ++col) {
        const ColumnHit hit = hits[col];
        int top = h_img / 2, bot = h_img / 2;
        Rgb wall{};
        if (hit.id != kHitNone) {
            const double d = std::max(hit.distance, 1e-9);
            const int h =
                static_cast<int>(std::clamp<long>(std::lround(h_img * cfg.focal_k / d), 0, h_img));
            top = (h_img - h) / 2;
            bot = top + h;
            const Rgb base = hit.id == kHitTrolley
                                 ? kTrolleyColor
                                 : color_from_tag(state.obstacles[hit.id].color);
            wall = scale_color(base, bright);
        }
        for (int row = 0; row < h_img; ++row) {
            const Rgb c = row < top ? sky : (row < bot ? wall : floor);
            std::uint8_t* px = img.at(col, row);
            px[0] = c.r;
            px[1] = c.g;
            px[2] = c.b;
        }
    }
    return img;
}

Image apply_self_occlusion_mask(const Image& image, const CameraCfg& cfg) {
    if (image.width != cfg.width || image.height != cfg.height)
        throw DimensionMismatch("image dimensions do not match camera config");
    Image out = image;
    for (int row = cfg.height - cfg.occlusion_rows; row < cfg.height; ++row) {
        std::uint8_t* base = out.at(0, row);
        std::fill(base, base + static_cast<std::size_t>(cfg.width) * 3, std::uint8_t{0});
    }
    return out;
}

Observation make_observation(const sim::SimState& state,
                             const std::vector<std::uint16_t>& caption_tokens,
                             const CameraCfg& head_cfg, const CameraCfg& back_cfg) {
    Observation obs;
    obs.head = render_camera(state, head_cfg);
    obs.back = apply_self_occlusion_mask(render_camera(state, back_cfg), back_cfg);
    obs.tokens = caption_tokens;
    return obs;
}

void write_ppm(const Image& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.rgb.data()),
              static_cast<std::streamsize>(image.rgb.size()));
}

}  // namespace tsim::render
