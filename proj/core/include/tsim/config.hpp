#pragma once

#include <cstdint>
#include <string>

#include "tsim/deploy.hpp"
#include "tsim/expert.hpp"
#include "tsim/expert_rl.hpp"
#include "tsim/model.hpp"
#include "tsim/sim.hpp"
#include "tsim/train.hpp"

namespace tsim::config {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BoundsError : std::runtime_error {
    explicit BoundsError(const std::string& field, const std::string& detail)
        : std::runtime_error("config field out of bounds: " + field + " (" + detail + ")") {}
};

struct Paths {
    std::string catalog = "assets/catalog_default.json";
    std::string lexicon = "assets/lexicon_en_it.json";
    std::string recipe;  // empty = built-in default recipe
    std::string fixed_scene = "assets/fixed_scene.json";
};

struct Config {
    Paths paths;
    sim::PhysicsConfig physics;
    render::CameraCfg head = render::CameraCfg::head();
    render::CameraCfg back = render::CameraCfg::back();
    learn::ModelConfig model;
    learn::TrainConfig train;
    expert::ExpertParams expert;
    expert::RlConfig rl;
    deploy::LatencyModel latency;
    int latency_timeout_ms = 450;
    std::uint64_t trials = 10000;      // procedural evaluation default
    std::uint64_t deploy_trials = 10;  // deployment-harness default
    std::string language = "en";
    std::uint64_t seed = 0;
    int workers = 1;
    bool quiet = false;  // TROLLEYSIM_LOG=quiet suppresses progress lines
};

// Defaults, then JSON file fields (when path nonempty), then bounds checks.
// Unknown keys are rejected. An empty JSON object yields full defaults.
Config load_config(const std::string& path);
Config config_from_json_text(const std::string& text);
void check_bounds(const Config& cfg);

// Placement recipe JSON (room_size_range, clearance, areas with quotas).
scenegen::PlacementRecipe recipe_from_json_text(const std::string& text);
scenegen::PlacementRecipe load_recipe(const std::string& path);
std::string recipe_to_json(const scenegen::PlacementRecipe& recipe);

}  // namespace tsim::config
