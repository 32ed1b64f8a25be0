#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/sim.hpp"

namespace tsim::render {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Named color tags from the asset catalog mapped to flat RGB.
Rgb color_from_tag(const std::string& tag);

inline constexpr Rgb kTrolleyColor{245, 245, 245};
inline constexpr Rgb kFloorColor{96, 88, 80};
inline constexpr Rgb kSkyColor{168, 196, 222};

struct CameraCfg {
    std::string name = "head";
    double fov_deg = 90.0;
    int width = 64;
    int height = 64;
    geom::Pose2D mount{0.275, 0.0, 0.0};  // relative to the robot body frame
    double max_range = 12.0;
    int occlusion_rows = 0;  // bottom rows blacked out by the self-occlusion mask
    double focal_k = 1.2;    // column height = H * focal_k / hit distance

    static CameraCfg head();
    static CameraCfg back();
};

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const {
        return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    bool operator==(const Image&) const = default;
};

struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Column hit ids: -1 none, -2 trolley, otherwise an obstacle index.
inline constexpr int kHitNone = -1;
inline constexpr int kHitTrolley = -2;

struct ColumnHit {
    int id = kHitNone;
    double distance = 0.0;
};

geom::Pose2D camera_pose(const sim::SimState& state, const CameraCfg& cfg);

// Direction of the ray for a column; column 0 is the left edge of the image.
geom::Vec2 column_ray(const geom::Pose2D& cam, const CameraCfg& cfg, int column);

std::vector<ColumnHit> column_hits(const sim::SimState& state, const CameraCfg& cfg);

// Column raycast over obstacle/trolley rectangles; two-tone background,
// per-episode brightness jitter from the domain-rand draw.
Image render_camera(const sim::SimState& state, const CameraCfg& cfg);

Image apply_self_occlusion_mask(const Image& image, const CameraCfg& cfg);

struct Observation {
    Image head;
    Image back;
    std::vector<std::uint16_t> tokens;
    bool operator==(const Observation&) const = default;
};

Observation make_observation(const sim::SimState& state,
                             const std::vector<std::uint16_t>& caption_tokens,
                             const CameraCfg& head_cfg, const CameraCfg& back_cfg);

void write_ppm(const Image& image, const std::string& path);

}  // namespace tsim::render
