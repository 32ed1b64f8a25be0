#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsim/rng.hpp"
#include "tsim/scenegen.hpp"

namespace tsim::scenegen {

using nlohmann::json;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

AssetSpec asset_from_json(const json& j) {
    AssetSpec a;
    a.id = j.at("id").get<std::string>();
    a.category = j.at("category").get<std::string>();
    const auto& he = j.at("half_extents");
    a.half_w = he.at(0).get<double>();
    a.half_d = he.at(1).get<double>();
    a.color = j.at("color").get<std::string>();
    a.material = j.at("material").get<std::string>();
    for (const auto& s : j.at("style_attrs")) a.style_attrs.push_back(s.get<std::string>());
    if (a.half_w <= 0.0 || a.half_d <= 0.0)
        throw ParseError("asset " + a.id + ": half_extents must be strictly positive");
    return a;
}

}  // namespace

Catalog catalog_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("catalog parse error: ") + e.what());
    }
    if (!j.is_array()) throw ParseError("catalog must be a JSON array");
    Catalog catalog;
    std::set<std::string> seen;
    for (const auto& item : j) {
        AssetSpec a = asset_from_json(item);
        if (!seen.insert(a.id).second) throw DuplicateId(a.id);
        catalog.push_back(std::move(a));
    }
    return catalog;
}

Catalog load_asset_catalog(const std::string& path) {
    return catalog_from_json_text(read_text_file(path));
}

Lexicon load_lexicon(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("lexicon parse error: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("lexicon must be a JSON object");
    Lexicon lex;
    for (auto it = j.begin(); it != j.end(); ++it)
        lex[it.key()] = it.value().get<std::string>();
    return lex;
}

const AssetSpec& find_asset(const Catalog& catalog, const std::string& id) {
    for (const auto& a : catalog)
        if (a.id == id) return a;
    throw ParseError("unknown asset id: " + id);
}

PlacementRecipe PlacementRecipe::default_recipe() {
    PlacementRecipe r;
    r.room_min = {5.0, 5.0};
    r.room_max = {9.0, 9.0};
    r.clearance = 0.7;
    r.areas = {
        {"lounge", AreaKind::Free, 0.95, 0.45,
         {{"sofa", 1, 1}, {"coffee_table", 0, 1}, {"armchair", 0, 2}, {"plant", 0, 1}}},
        {"dining", AreaKind::Free, 0.6, 0.5, {{"dining_table", 1, 1}}},
        {"wall_line", AreaKind::WallLine, 0.9, 0.5,
         {{"tv_stand", 0, 1}, {"bookshelf", 0, 2}, {"bin", 0, 1}, {"plant", 0, 1}}},
    };
    return r;
}

PlacementRecipe PlacementRecipe::reduced_recipe() {
    PlacementRecipe r;
    r.room_min = {5.0, 5.0};
    r.room_max = {8.0, 8.0};
    r.clearance = 0.7;
    r.areas = {
        {"lounge", AreaKind::Free, 1.0, 0.5,
         {{"sofa", 1, 1}, {"armchair", 0, 1}, {"coffee_table", 0, 1}}},
        {"wall_line", AreaKind::WallLine, 0.9, 0.5,
         {{"tv_stand", 0, 1}, {"bin", 0, 1}, {"bookshelf", 0, 1}}},
    };
    return r;
}

namespace {

constexpr int kPoseAttempts = 200;    // per instance, then the instance is skipped
constexpr int kRobotAttempts = 1000;  // for robot and trolley initial poses

// Dynamic body footprints used when validating initial poses. These mirror
// the simulation defaults.
constexpr double kRobotHalfW = 0.275, kRobotHalfD = 0.175;
constexpr double kTrolleyHalfW = 0.30, kTrolleyHalfD = 0.20;

struct Placement {
    geom::OrientedRect rect;
    int area_index;
};

struct AreaRegion {
    geom::RoomRect bounds;
    AreaKind kind;
    int wall = 0;  // for WallLine: 0=-x, 1=+x, 2=-y, 3=+y
};

AreaRegion sample_region(const AreaRule& rule, const geom::RoomRect& room, Rng& rng) {
    AreaRegion region;
    region.kind = rule.kind;
    if (rule.kind == AreaKind::WallLine) {
        region.wall = static_cast<int>(rng.uniform_below(4));
        const double depth = 1.1;
        switch (region.wall) {
            case 0: region.bounds = {{room.min.x, room.min.y}, {room.min.x + depth, room.max.y}}; break;
            case 1: region.bounds = {{room.max.x - depth, room.min.y}, {room.max.x, room.max.y}}; break;
            case 2: region.bounds = {{room.min.x, room.min.y}, {room.max.x, room.min.y + depth}}; break;
            default: region.bounds = {{room.min.x, room.max.y - depth}, {room.max.x, room.max.y}}; break;
        }
        return region;
    }
    const double fw = rng.uniform(0.40, 0.65);
    const double fh = rng.uniform(0.40, 0.65);
    const double w = room.width() * fw;
    const double h = room.height() * fh;
    const double x0 = room.min.x + rng.uniform(0.0, room.width() - w);
    const double y0 = room.min.y + rng.uniform(0.0, room.height() - h);
    region.bounds = {{x0, y0}, {x0 + w, y0 + h}};
    return region;
}

geom::Pose2D sample_instance_pose(const AssetSpec& asset, const AreaRegion& region, Rng& rng) {
    if (region.kind == AreaKind::WallLine) {
        // Aligned to the wall, facing into the room, with a small yaw jitter.
        const double gap = rng.uniform(0.02, 0.10);
        const double jitter = rng.uniform(-0.06, 0.06);
        double along, theta;
        geom::Pose2D pose;
        switch (region.wall) {
            case 0:
                along = rng.uniform(region.bounds.min.y, region.bounds.max.y);
                theta = 0.0;
                pose = {region.bounds.min.x + asset.half_d + gap, along, theta + jitter};
                break;
            case 1:
                along = rng.uniform(region.bounds.min.y, region.bounds.max.y);
                theta = geom::kPi;
                pose = {region.bounds.max.x - asset.half_d - gap, along, theta + jitter};
                break;
            case 2:
                along = rng.uniform(region.bounds.min.x, region.bounds.max.x);
                theta = geom::kPi / 2.0;
                pose = {along, region.bounds.min.y + asset.half_d + gap, theta + jitter};
                break;
            default:
                along = rng.uniform(region.bounds.min.x, region.bounds.max.x);
                theta = -geom::kPi / 2.0;
                pose = {along, region.bounds.max.y - asset.half_d - gap, theta + jitter};
                break;
        }
        // Wall-line assets face away from the wall: local x is depth for them,
        // so swap the footprint convention by rotating 90 degrees.
        pose.theta = geom::wrap_angle(pose.theta + geom::kPi / 2.0);
        return pose;
    }
    return {rng.uniform(region.bounds.min.x, region.bounds.max.x),
            rng.uniform(region.bounds.min.y, region.bounds.max.y),
            rng.uniform(-geom::kPi, geom::kPi)};
}

bool placement_ok(const geom::OrientedRect& rect, int area_index, const geom::RoomRect& room,
                  const std::vector<Placement>& placed, const PlacementRecipe& recipe,
                  double spacing) {
    if (!geom::rect_inside_room(rect, room)) return false;
    for (const auto& p : placed) {
        const double gap = (p.area_index == area_index) ? spacing : recipe.clearance;
        if (geom::rect_distance(rect, p.rect) < gap) return false;
    }
    return true;
}

geom::Pose2D sample_free_body_pose(double half_w, double half_d, const geom::RoomRect& room,
                                   const std::vector<geom::OrientedRect>& blockers,
                                   double clearance, Rng& rng) {
    const double margin = std::hypot(half_w, half_d);
    for (int attempt = 0; attempt < kRobotAttempts; ++attempt) {
        const geom::Pose2D pose{rng.uniform(room.min.x + margin, room.max.x - margin),
                                rng.uniform(room.min.y + margin, room.max.y - margin),
                                rng.uniform(-geom::kPi, geom::kPi)};
        const geom::OrientedRect rect{{pose.x, pose.y}, half_w, half_d, pose.theta};
        if (!geom::rect_inside_room(rect, room)) continue;
        bool ok = true;
        for (const auto& b : blockers)
            if (geom::rect_distance(rect, b) < clearance) {
                ok = false;
                break;
            }
        if (ok) return pose;
    }
    throw UnplaceableRobot();
}

}  // namespace

Scene sample_scene(const Catalog& catalog, const PlacementRecipe& recipe, std::uint64_t seed) {
    if (catalog.empty()) throw EmptyCatalog();
    Rng rng(derive_seed(seed, 0xA11CE));

    Scene scene;
    scene.seed = seed;
    const double w = rng.uniform(recipe.room_min.x, recipe.room_max.x);
    const double h = rng.uniform(recipe.room_min.y, recipe.room_max.y);
    scene.room = {{0.0, 0.0}, {w, h}};

    // Index assets by category once.
    std::map<std::string, std::vector<const AssetSpec*>> by_category;
    for (const auto& a : catalog) by_category[a.category].push_back(&a);

    std::vector<Placement> placed;
    for (std::size_t ai = 0; ai < recipe.areas.size(); ++ai) {
        const AreaRule& rule = recipe.areas[ai];
        if (!rng.bernoulli(rule.probability)) continue;
        const AreaRegion region = sample_region(rule, scene.room, rng);
        for (const auto& quota : rule.quotas) {
            const auto it = by_category.find(quota.category);
            if (it == by_category.end()) continue;
            const int count = rng.uniform_int(quota.min_count, quota.max_count);
            for (int n = 0; n < count; ++n) {
                const AssetSpec& asset =
                    *it->second[rng.uniform_below(it->second.size())];
                for (int attempt = 0; attempt < kPoseAttempts; ++attempt) {
                    const geom::Pose2D pose = sample_instance_pose(asset, region, rng);
                    const geom::OrientedRect rect = asset.footprint(pose);
                    if (placement_ok(rect, static_cast<int>(ai), scene.room, placed, recipe,
                                     rule.spacing)) {
                        placed.push_back({rect, static_cast<int>(ai)});
                        scene.instances.push_back({asset.id, {pose.x, pose.y,
                                                              geom::wrap_angle(pose.theta)}});
                        break;
                    }
                    // Exhausted attempts: skip this instance silently.
                }
            }
        }
    }

    // Every scene carries at least one instance so a target always exists,
    // even when the probabilistic areas all miss.
    if (scene.instances.empty()) {
        const AreaRegion whole{scene.room, AreaKind::Free, 0};
        for (int attempt = 0; attempt < kPoseAttempts * 5 && scene.instances.empty(); ++attempt) {
            const AssetSpec& asset = catalog[rng.uniform_below(catalog.size())];
            const geom::Pose2D pose = sample_instance_pose(asset, whole, rng);
            const geom::OrientedRect rect = asset.footprint(pose);
            if (geom::rect_inside_room(rect, scene.room)) {
                placed.push_back({rect, 0});
                scene.instances.push_back({asset.id, {pose.x, pose.y,
                                                      geom::wrap_angle(pose.theta)}});
            }
        }
    }

    std::vector<geom::OrientedRect> blockers;
    blockers.reserve(placed.size() + 1);
    for (const auto& p : placed) blockers.push_back(p.rect);

    // Crowded rooms occasionally cannot host the full clearance; shrink it in
    // stages before giving up so generation stays total in practice.
    const auto place_body = [&](double half_w, double half_d) {
        for (const double gap : {recipe.clearance, 0.5 * recipe.clearance, 0.05}) {
            try {
                return sample_free_body_pose(half_w, half_d, scene.room, blockers, gap, rng);
            } catch (const UnplaceableRobot&) {
            }
        }
        throw UnplaceableRobot();
    };
    scene.robot_init = place_body(kRobotHalfW, kRobotHalfD);
    blockers.push_back({{scene.robot_init.x, scene.robot_init.y}, kRobotHalfW, kRobotHalfD,
                        scene.robot_init.theta});
    scene.trolley_init = place_body(kTrolleyHalfW, kTrolleyHalfD);
    return scene;
}

TaskSpec sample_task(const Scene& scene, const Catalog& catalog, std::uint64_t seed,
                     Language lang, const Lexicon& lexicon, const CaptionProvider* provider) {
    if (scene.instances.empty()) throw EmptyScene();
    Rng rng(derive_seed(seed, 0x7A5C));

    TaskSpec task;
    task.scene_seed = scene.seed;
    task.target_index = static_cast<int>(rng.uniform_below(scene.instances.size()));
    task.caption_level = 1 + static_cast<int>(rng.uniform_below(5));
    task.language = lang;
    const AssetSpec& asset = find_asset(catalog, scene.instances[task.target_index].asset_id);
    if (provider) {
        task.caption = provider->caption(asset, task.caption_level, lang);
    } else {
        task.caption = generate_captions(asset, lang, lexicon).levels[task.caption_level - 1];
    }
    return task;
}

// ---- scene file I/O --------------------------------------------------------

std::string scene_to_json(const Scene& scene) {
    json j;
    j["seed"] = scene.seed;
    j["room"] = {{"min", {scene.room.min.x, scene.room.min.y}},
                 {"max", {scene.room.max.x, scene.room.max.y}}};
    json inst = json::array();
    for (const auto& p : scene.instances)
        inst.push_back({{"asset", p.asset_id}, {"pose", {p.pose.x, p.pose.y, p.pose.theta}}});
    j["instances"] = std::move(inst);
    j["robot_init"] = {scene.robot_init.x, scene.robot_init.y, scene.robot_init.theta};
    j["trolley_init"] = {scene.trolley_init.x, scene.trolley_init.y, scene.trolley_init.theta};
    return j.dump(2) + "\n";
}

Scene scene_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("scene parse error: ") + e.what());
    }
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto& room = j.at("room");
    s.room = {{room.at("min").at(0).get<double>(), room.at("min").at(1).get<double>()},
              {room.at("max").at(0).get<double>(), room.at("max").at(1).get<double>()}};
    for (const auto& item : j.at("instances")) {
        PlacedInstance p;
        p.asset_id = item.at("asset").get<std::string>();
        const auto& pose = item.at("pose");
        p.pose = {pose.at(0).get<double>(), pose.at(1).get<double>(), pose.at(2).get<double>()};
        s.instances.push_back(std::move(p));
    }
    const auto& r = j.at("robot_init");
    s.robot_init = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    const auto& t = j.at("trolley_init");
    s.trolley_init = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    return s;
}

void write_scene(const Scene& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile(path);
    out << scene_to_json(scene);
}

Scene read_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path);
    std::ostringstream os;
    os << in.rdbuf();
    return scene_from_json(os.str());
}

}  // namespace tsim::scenegen
