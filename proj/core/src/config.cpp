#include "tsim/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tsim::config {

using nlohmann::json;

namespace {

// Strict section reader: every key must be consumed by the handler.
template <class F>
void read_section(const json& j, const std::string& section, F&& handle) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!handle(it.key(), it.value()))
            throw ParseError("unknown config key: " + section + "." + it.key());
    }
}

void require(bool ok, const std::string& field, const std::string& detail) {
    if (!ok) throw BoundsError(field, detail);
}

}  // namespace

Config config_from_json_text(const std::string& text) {
    json j;
    try {
        j = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("config must be a JSON object");

    Config cfg;
    read_section(j, "", [&](const std::string& key, const json& v) {
        if (key == "paths") {
            read_section(v, "paths", [&](const std::string& k, const json& x) {
                if (k == "catalog") cfg.paths.catalog = x.get<std::string>();
                else if (k == "lexicon") cfg.paths.lexicon = x.get<std::string>();
                else if (k == "recipe") cfg.paths.recipe = x.get<std::string>();
                else if (k == "fixed_scene") cfg.paths.fixed_scene = x.get<std::string>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "physics") {
            auto& p = cfg.physics;
            read_section(v, "physics", [&](const std::string& k, const json& x) {
                if (k == "dt") p.dt = x.get<double>();
                else if (k == "ticks_per_control") p.ticks_per_control = x.get<int>();
                else if (k == "train_budget_s") p.train_budget_s = x.get<double>();
                else if (k == "eval_budget_s") p.eval_budget_s = x.get<double>();
                else if (k == "success_distance") p.success_distance = x.get<double>();
                else if (k == "contact_stiffness") p.contact_stiffness = x.get<double>();
                else if (k == "contact_mu") p.contact_mu = x.get<double>();
                else if (k == "robot_half_extents") {
                    p.robot_half_w = x.at(0).get<double>();
                    p.robot_half_d = x.at(1).get<double>();
                } else if (k == "trolley_half_extents") {
                    p.trolley_half_w = x.at(0).get<double>();
                    p.trolley_half_d = x.at(1).get<double>();
                } else if (k == "trolley_mass_range") {
                    p.trolley_mass_min = x.at(0).get<double>();
                    p.trolley_mass_max = x.at(1).get<double>();
                } else if (k == "friction_range") {
                    p.friction_min = x.at(0).get<double>();
                    p.friction_max = x.at(1).get<double>();
                } else if (k == "gain_range") {
                    p.gain_min = x.at(0).get<double>();
                    p.gain_max = x.at(1).get<double>();
                } else if (k == "noise_range") {
                    p.noise_min = x.at(0).get<double>();
                    p.noise_max = x.at(1).get<double>();
                } else if (k == "brightness_range") {
                    p.brightness_min = x.at(0).get<double>();
                    p.brightness_max = x.at(1).get<double>();
                } else return false;
                return true;
            });
            return true;
        }
        if (key == "model") {
            auto& m = cfg.model;
            read_section(v, "model", [&](const std::string& k, const json& x) {
                if (k == "patch") m.patch = x.get<int>();
                else if (k == "patch_dim") m.patch_dim = x.get<int>();
                else if (k == "d_model") m.d_model = x.get<int>();
                else if (k == "caption_dim") m.caption_dim = x.get<int>();
                else if (k == "context") m.context = x.get<int>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "train") {
            auto& t = cfg.train;
            read_section(v, "train", [&](const std::string& k, const json& x) {
                if (k == "epochs") t.epochs = x.get<int>();
                else if (k == "batch") t.batch = x.get<int>();
                else if (k == "lr") t.lr = x.get<double>();
                else if (k == "lr_decay") t.lr_decay = x.get<double>();
                else if (k == "optimizer") t.optimizer = x.get<std::string>();
                else if (k == "seed") t.seed = x.get<std::uint64_t>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "expert") {
            auto& e = cfg.expert;
            read_section(v, "expert", [&](const std::string& k, const json& x) {
                if (k == "dock_distance") e.dock_distance = x.get<double>();
                else if (k == "predock_distance") e.predock_distance = x.get<double>();
                else if (k == "bearing_limit_deg") e.bearing_limit_deg = x.get<double>();
                else if (k == "grid_cell") e.grid_cell = x.get<double>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "rl") {
            auto& r = cfg.rl;
            read_section(v, "rl", [&](const std::string& k, const json& x) {
                if (k == "episodes") r.episodes = x.get<int>();
                else if (k == "batch_episodes") r.batch_episodes = x.get<int>();
                else if (k == "hidden") r.hidden = x.get<int>();
                else if (k == "lr") r.lr = x.get<double>();
                else if (k == "discount") r.discount = x.get<double>();
                else if (k == "entropy_bonus") r.entropy_bonus = x.get<double>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "latency") {
            read_section(v, "latency", [&](const std::string& k, const json& x) {
                if (k == "base_ms") cfg.latency.base_ms = x.get<double>();
                else if (k == "jitter_ms") cfg.latency.jitter_ms = x.get<double>();
                else if (k == "drop_prob") cfg.latency.drop_prob = x.get<double>();
                else if (k == "timeout_ms") cfg.latency_timeout_ms = x.get<int>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "eval") {
            read_section(v, "eval", [&](const std::string& k, const json& x) {
                if (k == "trials") cfg.trials = x.get<std::uint64_t>();
                else if (k == "deploy_trials") cfg.deploy_trials = x.get<std::uint64_t>();
                else if (k == "language") cfg.language = x.get<std::string>();
                else return false;
                return true;
            });
            return true;
        }
        if (key == "seed") {
            cfg.seed = v.get<std::uint64_t>();
            return true;
        }
        if (key == "workers") {
            cfg.workers = v.get<int>();
            return true;
        }
        return false;
    });

    check_bounds(cfg);
    return cfg;
}

Config load_config(const std::string& path) {
    Config cfg;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ParseError("cannot open config file: " + path);
        std::ostringstream os;
        os << in.rdbuf();
        cfg = config_from_json_text(os.str());
    } else {
        check_bounds(cfg);
    }
    if (const char* log = std::getenv("TROLLEYSIM_LOG"))
        cfg.quiet = std::string(log) == "quiet";
    return cfg;
}

void check_bounds(const Config& cfg) {
    const auto& p = cfg.physics;
    require(p.dt > 0.0 && p.dt <= 0.1, "physics.dt", "must be in (0, 0.1]");
    require(p.ticks_per_control >= 1 && p.ticks_per_control <= 500, "physics.ticks_per_control",
            "must be in [1, 500]");
    require(p.train_budget_s > 0.0 && p.train_budget_s <= 600.0, "physics.train_budget_s",
            "must be in (0, 600]");
    require(p.eval_budget_s > 0.0 && p.eval_budget_s <= 600.0, "physics.eval_budget_s",
            "must be in (0, 600]");
    require(p.success_distance > 0.0 && p.success_distance <= 2.0, "physics.success_distance",
            "must be in (0, 2]");
    require(p.contact_stiffness > 0.0, "physics.contact_stiffness", "must be positive");
    require(p.friction_min >= 0.05 && p.friction_max <= 1.0 && p.friction_min <= p.friction_max,
            "physics.friction_range", "must lie within [0.05, 1.0]");
    require(p.trolley_mass_min >= 0.5 && p.trolley_mass_max <= 100.0 &&
                p.trolley_mass_min <= p.trolley_mass_max,
            "physics.trolley_mass_range", "must lie within [0.5, 100]");
    require(p.gain_min >= 0.5 && p.gain_max <= 20.0 && p.gain_min <= p.gain_max,
            "physics.gain_range", "must lie within [0.5, 20]");
    require(p.noise_min >= 0.0 && p.noise_max <= 0.5 && p.noise_min <= p.noise_max,
            "physics.noise_range", "must lie within [0, 0.5]");
    require(p.brightness_min >= 0.5 && p.brightness_max <= 1.5 &&
                p.brightness_min <= p.brightness_max,
            "physics.brightness_range", "must lie within [0.5, 1.5]");

    require(cfg.model.patch > 0 && cfg.model.image_w % cfg.model.patch == 0, "model.patch",
            "must divide the image width");
    require(cfg.model.context >= 1 && cfg.model.context <= 64, "model.context",
            "must be in [1, 64]");
    require(cfg.train.epochs >= 1, "train.epochs", "must be >= 1");
    require(cfg.train.batch >= 1, "train.batch", "must be >= 1");
    require(cfg.train.lr > 0.0, "train.lr", "must be positive");
    require(cfg.train.optimizer == "sgd" || cfg.train.optimizer == "adam", "train.optimizer",
            "must be sgd or adam");
    require(cfg.rl.discount > 0.0 && cfg.rl.discount <= 1.0, "rl.discount", "must be in (0, 1]");
    require(cfg.latency.base_ms >= 0.0, "latency.base_ms", "must be >= 0");
    require(cfg.latency.jitter_ms >= 0.0, "latency.jitter_ms", "must be >= 0");
    require(cfg.latency.drop_prob >= 0.0 && cfg.latency.drop_prob <= 1.0, "latency.drop_prob",
            "must be in [0, 1]");
    require(cfg.trials >= 1, "eval.trials", "must be >= 1");
    require(cfg.deploy_trials >= 1, "eval.deploy_trials", "must be >= 1");
    require(cfg.language == "en" || cfg.language == "it", "eval.language", "must be en or it");
    require(cfg.workers >= 1 && cfg.workers <= 256, "workers", "must be in [1, 256]");
}

// ---- placement recipe ---------------------------------------------------------

scenegen::PlacementRecipe recipe_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("recipe parse error: ") + e.what());
    }
    scenegen::PlacementRecipe r;
    r.room_min = {j.at("room_size_range").at("min").at(0).get<double>(),
                  j.at("room_size_range").at("min").at(1).get<double>()};
    r.room_max = {j.at("room_size_range").at("max").at(0).get<double>(),
                  j.at("room_size_range").at("max").at(1).get<double>()};
    r.clearance = j.at("clearance").get<double>();
    r.areas.clear();
    for (const auto& a : j.at("areas")) {
        scenegen::AreaRule rule;
        rule.name = a.at("name").get<std::string>();
        const std::string kind = a.at("kind").get<std::string>();
        if (kind == "free") rule.kind = scenegen::AreaKind::Free;
        else if (kind == "wall_line") rule.kind = scenegen::AreaKind::WallLine;
        else throw ParseError("unknown area kind: " + kind);
        rule.probability = a.at("probability").get<double>();
        rule.spacing = a.at("spacing").get<double>();
        for (const auto& q : a.at("quotas")) {
            scenegen::CategoryQuota quota;
            quota.category = q.at("category").get<std::string>();
            quota.min_count = q.at("min").get<int>();
            quota.max_count = q.at("max").get<int>();
            if (quota.min_count < 0 || quota.max_count < quota.min_count)
                throw BoundsError("recipe.quota." + quota.category,
                                  "count range must be nonnegative and ordered");
            rule.quotas.push_back(std::move(quota));
        }
        if (rule.probability < 0.0 || rule.probability > 1.0)
            throw BoundsError("recipe.area." + rule.name, "probability must be in [0, 1]");
        r.areas.push_back(std::move(rule));
    }
    if (r.clearance < 0.0) throw BoundsError("recipe.clearance", "must be >= 0");
    return r;
}

scenegen::PlacementRecipe load_recipe(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open recipe file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return recipe_from_json_text(os.str());
}

std::string recipe_to_json(const scenegen::PlacementRecipe& recipe) {
    json j;
    j["room_size_range"] = {{"min", {recipe.room_min.x, recipe.room_min.y}},
                            {"max", {recipe.room_max.x, recipe.room_max.y}}};
    j["clearance"] = recipe.clearance;
    json areas = json::array();
    for (const auto& a : recipe.areas) {
        json quotas = json::array();
        for (const auto& q : a.quotas)
            quotas.push_back({{"category", q.category}, {"min", q.min_count}, {"max", q.max_count}});
        areas.push_back({{"name", a.name},
                         {"kind", a.kind == scenegen::AreaKind::Free ? "free" : "wall_line"},
                         {"probability", a.probability},
                         {"spacing", a.spacing},
                         {"quotas", std::move(quotas)}});
    }
    j["areas"] = std::move(areas);
    return j.dump(2) + "\n";
}

}  // namespace tsim::config
