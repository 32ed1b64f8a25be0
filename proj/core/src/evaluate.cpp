#include "tsim/evaluate.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tsim/threading.hpp"

namespace tsim::eval {

using nlohmann::json;

double standard_error(double p, std::uint64_t n) {
    return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

std::string difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return "easy";
        case Difficulty::Medium: return "medium";
        case Difficulty::Hard: return "hard";
    }
    return "unknown";
}

scenegen::Scene build_fixed_scene(const std::string& path) {
    return scenegen::read_scene(path);
}

// ---- difficulty poses ----------------------------------------------------------

namespace {

bool column_sees(const std::vector<render::ColumnHit>& hits, int id) {
    for (const auto& h : hits)
        if (h.id == id) return true;
    return false;
}

}  // namespace

std::pair<geom::Pose2D, geom::Pose2D> difficulty_poses(
    const scenegen::Scene& scene, const scenegen::Catalog& catalog, int target_index,
    Difficulty level, const render::CameraCfg& head_cfg, const sim::PhysicsConfig& physics,
    std::uint64_t seed) {
    if (target_index < 0 || target_index >= static_cast<int>(scene.instances.size()))
        throw sim::InvalidTask("difficulty_poses: bad target index");

    std::vector<geom::OrientedRect> rects;
    rects.reserve(scene.instances.size());
    for (const auto& inst : scene.instances)
        rects.push_back(scenegen::find_asset(catalog, inst.asset_id).footprint(inst.pose));
    const geom::Vec2 target_center = rects[target_index].center;

    Rng rng(derive_seed(seed, 0xD1FF));
    sim::SimState probe;
    probe.room = scene.room;
    for (std::size_t i = 0; i < rects.size(); ++i)
        probe.obstacles.push_back({rects[i], "grey", static_cast<int>(i)});
    probe.target_index = target_index;
    probe.robot.half_w = physics.robot_half_w;
    probe.robot.half_d = physics.robot_half_d;
    probe.trolley.half_w = physics.trolley_half_w;
    probe.trolley.half_d = physics.trolley_half_d;

    const auto free_pose = [&](double half_w, double half_d,
                               const geom::OrientedRect* extra) -> std::optional<geom::Pose2D> {
        const double margin = std::hypot(half_w, half_d);
        const geom::Pose2D pose{rng.uniform(scene.room.min.x + margin, scene.room.max.x - margin),
                                rng.uniform(scene.room.min.y + margin, scene.room.max.y - margin),
                                rng.uniform(-geom::kPi, geom::kPi)};
        const geom::OrientedRect rect{{pose.x, pose.y}, half_w, half_d, pose.theta};
        for (const auto& r : rects)
            if (geom::rect_distance(rect, r) < 0.35) return std::nullopt;
        if (extra && geom::rect_distance(rect, *extra) < 0.35) return std::nullopt;
        return pose;
    };

    for (int attempt = 0; attempt < 20000; ++attempt) {
        const auto trolley = free_pose(physics.trolley_half_w, physics.trolley_half_d, nullptr);
        if (!trolley) continue;
        const geom::OrientedRect trolley_rect{{trolley->x, trolley->y}, physics.trolley_half_w,
                                              physics.trolley_half_d, trolley->theta};
        // Keep the task meaningful: the trolley starts away from the target.
        if (geom::rect_distance(trolley_rect, rects[target_index]) <
            physics.success_distance + 0.7)
            continue;
        const auto robot = free_pose(physics.robot_half_w, physics.robot_half_d, &trolley_rect);
        if (!robot) continue;
        const double rt_dist = geom::norm(trolley->position() - robot->position());
        if (rt_dist < 1.0 || rt_dist > 3.5) continue;

        probe.robot.pose = *robot;
        probe.trolley.pose = *trolley;
        const auto hits = render::column_hits(probe, head_cfg);
        const bool trolley_vis = column_sees(hits, render::kHitTrolley);
        if (!trolley_vis) continue;
        const bool target_vis = column_sees(hits, target_index);
        const geom::Vec2 to_target = target_center - robot->position();
        const double bearing =
            geom::wrap_angle(std::atan2(to_target.y, to_target.x) - robot->theta);
        const bool front = std::abs(bearing) <= geom::kPi / 2.0;

        bool ok = false;
        switch (level) {
            case Difficulty::Easy: ok = target_vis; break;
            case Difficulty::Medium: ok = !target_vis && front; break;
            case Difficulty::Hard: ok = !front; break;
        }
        if (ok) return {*robot, *trolley};
    }
    throw NoSatisfyingPose("no pose found for difficulty " + difficulty_name(level));
}

// ---- description split -----------------------------------------------------------

DescriptionSplit split_descriptions(const scenegen::Catalog& catalog,
                                    const scenegen::Lexicon& lexicon, std::uint64_t seed,
                                    double holdout_fraction) {
    if (catalog.empty()) throw scenegen::EmptyCatalog();
    Rng rng(derive_seed(seed, 0x5B117));

    // Attribute pools present in the shipped catalog plus a few held-out
    // values that never occur in training captions.
    std::vector<std::string> colors{"red",    "blue",  "green", "white", "black", "grey",
                                    "orange", "yellow", "brown", "beige", "teal",  "purple"};
    std::vector<std::string> styles{"modern",       "vintage",  "plush",   "sleek",
                                    "rustic",       "minimalist", "ornate", "scandinavian",
                                    "industrial",   "classic",  "compact", "curved",
                                    "tufted",       "tall",     "low"};

    DescriptionSplit split;
    split.test_catalog = catalog;
    std::vector<scenegen::CaptionSet> train_caps, test_caps;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        scenegen::AssetSpec& asset = split.test_catalog[i];
        bool perturbed = false;
        if (rng.bernoulli(holdout_fraction)) {
            std::string c = colors[rng.uniform_below(colors.size())];
            while (c == asset.color) c = colors[rng.uniform_below(colors.size())];
            asset.color = c;
            perturbed = true;
        }
        if (rng.bernoulli(holdout_fraction) && !asset.style_attrs.empty()) {
            const std::size_t k = rng.uniform_below(asset.style_attrs.size());
            std::string s = styles[rng.uniform_below(styles.size())];
            while (s == asset.style_attrs[k]) s = styles[rng.uniform_below(styles.size())];
            asset.style_attrs[k] = s;
            perturbed = true;
        }
        if (rng.bernoulli(holdout_fraction)) {
            const double scale = rng.bernoulli(0.5) ? 1.35 : 0.7;
            asset.half_w *= scale;
            asset.half_d *= scale;
            perturbed = true;
        }
        train_caps.push_back(scenegen::generate_captions(catalog[i], scenegen::Language::EN,
                                                         lexicon));
        if (perturbed) {
            split.test_indices.push_back(static_cast<int>(i));
            test_caps.push_back(scenegen::generate_captions(asset, scenegen::Language::EN,
                                                            lexicon));
        }
    }
    split.train_sets = scenegen::level_sets(train_caps);
    split.test_sets = scenegen::level_sets(test_caps);
    return split;
}

// ---- evaluation ---------------------------------------------------------------

namespace {

struct TrialResult {
    bool success = false;
    double duration = 0.0;
    int level = 1;
};

}  // namespace

TrialSetup make_trial(const EvalConfig& cfg, const scenegen::Catalog& catalog,
                      const scenegen::Lexicon& lexicon, const sim::PhysicsConfig& physics,
                      const learn::Vocab& vocab, const scenegen::CaptionProvider* provider,
                      scenegen::Language lang, std::uint64_t trial_seed) {
    TrialSetup setup;
    setup.scene = cfg.fixed_scene
                      ? *cfg.fixed_scene
                      : scenegen::sample_scene(catalog, cfg.recipe, derive_seed(trial_seed, 1));
    setup.task = scenegen::sample_task(setup.scene, catalog, derive_seed(trial_seed, 2), lang,
                                       lexicon, provider);
    if (cfg.level_filter) {
        setup.task.caption_level = *cfg.level_filter;
        const auto& asset = scenegen::find_asset(
            catalog, setup.scene.instances[setup.task.target_index].asset_id);
        setup.task.caption = provider
                                 ? provider->caption(asset, setup.task.caption_level, lang)
                                 : scenegen::generate_captions(asset, lang, lexicon)
                                       .levels[setup.task.caption_level - 1];
    }
    if (cfg.difficulty) {
        const auto [robot, trolley] = difficulty_poses(
            setup.scene, catalog, setup.task.target_index, *cfg.difficulty,
            render::CameraCfg::head(), physics, derive_seed(trial_seed, 3));
        setup.scene.robot_init = robot;
        setup.scene.trolley_init = trolley;
    }
    setup.state = sim::init_episode(setup.scene, catalog, setup.task, derive_seed(trial_seed, 4),
                                    /*eval_mode=*/true, physics);
    setup.tokens = learn::tokenize(setup.task.caption, vocab);
    return setup;
}

EvalReport run_eval(const EvalConfig& cfg, const PolicyFactory& make_policy,
                    const scenegen::Catalog& catalog, const scenegen::Lexicon& lexicon,
                    const sim::PhysicsConfig& physics, const learn::Vocab& vocab,
                    std::uint64_t seed) {
    if (cfg.trials < 1) throw std::invalid_argument("run_eval: trials must be >= 1");

    // Description-set machinery is prepared once and shared read-only.
    std::unique_ptr<CatalogCaptions> provider;
    scenegen::Language lang = scenegen::Language::EN;
    if (cfg.description_set == DescriptionSet::TestSet) {
        auto split = split_descriptions(catalog, lexicon, cfg.split_seed, cfg.split_holdout);
        provider = std::make_unique<CatalogCaptions>(std::move(split.test_catalog), lexicon);
    } else if (cfg.description_set == DescriptionSet::Italian) {
        lang = scenegen::Language::IT;
    }

    const render::CameraCfg head_cfg = render::CameraCfg::head();
    const render::CameraCfg back_cfg = render::CameraCfg::back();

    std::vector<TrialResult> results(cfg.trials);
    const auto run_trial = [&](std::uint64_t trial) {
        TrialSetup setup = make_trial(cfg, catalog, lexicon, physics, vocab, provider.get(),
                                      lang, derive_seed(seed, trial));
        sim::SimState& state = setup.state;
        auto policy = make_policy();
        policy->reset();
        const bool want_obs = policy->needs_observation();

        while (state.status == sim::Status::Running) {
            render::Observation obs;
            if (want_obs)
                obs = render::make_observation(state, setup.tokens, head_cfg, back_cfg);
            const sim::Action action = policy->act(state, obs);
            sim::step_control(state, action, physics);
        }
        TrialResult r;
        r.success = state.status == sim::Status::Success;
        r.duration = state.clock;
        r.level = setup.task.caption_level;
        results[trial] = r;
    };

    parallel_ranges(static_cast<int>(cfg.trials), std::max(1, cfg.workers),
                    [&](int lo, int hi) {
                        for (int t = lo; t < hi; ++t) run_trial(static_cast<std::uint64_t>(t));
                    });

    EvalReport report;
    report.trials = cfg.trials;
    double total_duration = 0.0;
    for (const auto& r : results) {
        total_duration += r.duration;
        report.level_trials[r.level - 1] += 1;
        if (r.success) {
            ++report.successes;
            report.level_successes[r.level - 1] += 1;
            report.time_to_success.push_back(r.duration);
        }
    }
    report.success_rate = static_cast<double>(report.successes) / cfg.trials;
    report.stderr_value = standard_error(report.success_rate, cfg.trials);
    report.mean_duration = total_duration / cfg.trials;
    if (cfg.difficulty)
        report.per_difficulty[difficulty_name(*cfg.difficulty)] = report.success_rate;
    return report;
}

std::vector<std::pair<double, double>> cumulative_success_curve(
    const std::vector<double>& time_to_success, std::uint64_t trials, double horizon_s,
    double bin_s) {
    if (horizon_s <= 0.0) throw std::invalid_argument("horizon must be positive");
    std::vector<std::pair<double, double>> curve;
    for (double t = bin_s; t <= horizon_s + 1e-9; t += bin_s) {
        std::uint64_t n = 0;
        for (const double s : time_to_success)
            if (s <= t && s <= horizon_s) ++n;
        curve.emplace_back(t, static_cast<double>(n) / static_cast<double>(trials));
    }
    return curve;
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["trials"] = report.trials;
    j["successes"] = report.successes;
    j["success_rate"] = report.success_rate;
    j["stderr"] = report.stderr_value;
    json levels = json::array();
    for (int l = 0; l < 5; ++l) {
        const std::uint64_t n = report.level_trials[l];
        levels.push_back({{"level", l + 1},
                          {"trials", n},
                          {"successes", report.level_successes[l]},
                          {"rate", n ? static_cast<double>(report.level_successes[l]) / n : 0.0}});
    }
    j["per_level"] = std::move(levels);
    j["per_difficulty"] = report.per_difficulty;
    j["time_to_success"] = report.time_to_success;
    j["mean_duration"] = report.mean_duration;
    return j.dump(2) + "\n";
}

void write_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << report_to_json(report);
}

void write_curve_csv(const std::vector<std::pair<double, double>>& curve,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write curve: " + path);
    out << "time_s,cumulative_success_rate\n";
    for (const auto& [t, r] : curve) out << t << "," << r << "\n";
}

}  // namespace tsim::eval
