#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/geometry.hpp"

namespace tsim::scenegen {

enum class Language { EN, IT };

std::string language_name(Language lang);
Language language_from_name(const std::string& name);

struct AssetSpec {
    std::string id;
    std::string category;                 // sofa, armchair, dining_table, ...
    double half_w = 0.0;                  // half extent, meters
    double half_d = 0.0;
    std::string color;
    std::string material;
    std::vector<std::string> style_attrs;

    geom::OrientedRect footprint(const geom::Pose2D& pose) const {
        return {{pose.x, pose.y}, half_w, half_d, pose.theta};
    }
};

using Catalog = std::vector<AssetSpec>;

struct CaptionSet {
    Language language = Language::EN;
    std::array<std::string, 5> levels;  // index 0 = level 1 (bare category noun)
};

// Flat EN-tag -> IT-word map. Besides plain content words it carries
// "article:<category>", "gender:<category>" and "f:<adjective>" entries.
using Lexicon = std::map<std::string, std::string>;

struct CategoryQuota {
    std::string category;
    int min_count = 0;
    int max_count = 0;
};

enum class AreaKind { Free, WallLine };

struct AreaRule {
    std::string name;
    AreaKind kind = AreaKind::Free;
    double probability = 1.0;
    double spacing = 0.4;  // required gap between instances of this area
    std::vector<CategoryQuota> quotas;
};

struct PlacementRecipe {
    geom::Vec2 room_min{5.0, 5.0};  // per-axis lower bound of room size, meters
    geom::Vec2 room_max{9.0, 9.0};
    double clearance = 0.7;         // cross-area gap; >= robot diameter
    std::vector<AreaRule> areas;

    static PlacementRecipe default_recipe();
    static PlacementRecipe reduced_recipe();  // at most 6 assets per scene
};

struct PlacedInstance {
    std::string asset_id;
    geom::Pose2D pose;
};

struct Scene {
    geom::RoomRect room;
    std::vector<PlacedInstance> instances;
    geom::Pose2D robot_init;
    geom::Pose2D trolley_init;
    std::uint64_t seed = 0;
};

struct TaskSpec {
    std::uint64_t scene_seed = 0;
    int target_index = 0;
    std::string caption;
    int caption_level = 1;  // 1..5
    Language language = Language::EN;
};

// ---- errors ----------------------------------------------------------------

struct MissingFile : std::runtime_error {
    explicit MissingFile(const std::string& path)
        : std::runtime_error("missing file: " + path) {}
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DuplicateId : std::runtime_error {
    explicit DuplicateId(const std::string& id)
        : std::runtime_error("duplicate asset id: " + id) {}
};
struct UnsupportedLanguage : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingLexiconEntry : std::runtime_error {
    explicit MissingLexiconEntry(const std::string& tag)
        : std::runtime_error("missing lexicon entry: " + tag) {}
};
struct EmptyCatalog : std::runtime_error {
    EmptyCatalog() : std::runtime_error("asset catalog is empty") {}
};
struct UnplaceableRobot : std::runtime_error {
    UnplaceableRobot() : std::runtime_error("no collision-free robot/trolley pose found") {}
};
struct EmptyScene : std::runtime_error {
    EmptyScene() : std::runtime_error("scene has no instances") {}
};
struct EmptyLevelSet : std::runtime_error {
    EmptyLevelSet() : std::runtime_error("caption set empty at requested level") {}
};

// ---- operations ------------------------------------------------------------

Catalog load_asset_catalog(const std::string& path);
Catalog catalog_from_json_text(const std::string& text);

Lexicon load_lexicon(const std::string& path);

// Deterministic template captions; level 1 is the bare category noun, each
// further level adds color, material, style attributes, then a size clause.
CaptionSet generate_captions(const AssetSpec& asset, Language lang, const Lexicon& lexicon);

Scene sample_scene(const Catalog& catalog, const PlacementRecipe& recipe, std::uint64_t seed);

// Caption source hook; the default pulls from generate_captions over the
// catalog. Evaluation description splits substitute perturbed captions.
struct CaptionProvider {
    virtual ~CaptionProvider() = default;
    virtual std::string caption(const AssetSpec& asset, int level, Language lang) const = 0;
};

TaskSpec sample_task(const Scene& scene, const Catalog& catalog, std::uint64_t seed,
                     Language lang, const Lexicon& lexicon,
                     const CaptionProvider* provider = nullptr);

// Per-level caption string sets, index 0 = level 1.
using LevelSets = std::array<std::set<std::string>, 5>;

LevelSets level_sets(const std::vector<CaptionSet>& captions);

// |exact-string intersection| / |test set| at the given level (1..5).
double description_overlap(const LevelSets& train, const LevelSets& test, int level);

// ---- scene file I/O --------------------------------------------------------

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void write_scene(const Scene& scene, const std::string& path);
Scene read_scene(const std::string& path);

const AssetSpec& find_asset(const Catalog& catalog, const std::string& id);

}  // namespace tsim::scenegen
