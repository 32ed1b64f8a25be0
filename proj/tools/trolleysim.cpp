#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tsim/config.hpp"
#include "tsim/dataset.hpp"
#include "tsim/deploy.hpp"
#include "tsim/evaluate.hpp"
#include "tsim/expert_rl.hpp"
#include "tsim/threading.hpp"
#include "tsim/train.hpp"

namespace fs = std::filesystem;
using namespace tsim;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_root = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Config JSON file");
    cmd->add_option("--out", args.out_root, "Output root directory");
    cmd->add_option("--seed", args.seed, "Root seed")->each([&args](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--workers", args.workers, "Worker threads (0 = config value)");
}

struct Env {
    config::Config cfg;
    scenegen::Catalog catalog;
    scenegen::Lexicon lexicon;
    scenegen::PlacementRecipe recipe;
};

Env load_env(const CommonArgs& args, const std::string& recipe_override = "") {
    Env env;
    env.cfg = config::load_config(args.config_path);
    if (args.seed_set) env.cfg.seed = args.seed;
    if (args.workers > 0) env.cfg.workers = args.workers;
    set_global_workers(env.cfg.workers);
    env.catalog = scenegen::load_asset_catalog(env.cfg.paths.catalog);
    env.lexicon = scenegen::load_lexicon(env.cfg.paths.lexicon);
    const std::string recipe_path =
        !recipe_override.empty() ? recipe_override : env.cfg.paths.recipe;
    env.recipe = recipe_path.empty() ? scenegen::PlacementRecipe::default_recipe()
                                     : config::load_recipe(recipe_path);
    fs::create_directories(args.out_root);
    return env;
}

// Vocabulary over every English catalog caption at every level; the student
// only ever trains on English descriptions.
learn::Vocab catalog_vocab(const Env& env) {
    std::vector<std::string> corpus;
    for (const auto& asset : env.catalog) {
        const auto caps = scenegen::generate_captions(asset, scenegen::Language::EN, env.lexicon);
        corpus.insert(corpus.end(), caps.levels.begin(), caps.levels.end());
    }
    return learn::build_vocab(corpus);
}

data::Episode run_episode(const Env& env, eval::Policy& policy, const learn::Vocab& vocab,
                          std::uint64_t ordinal, std::uint64_t root_seed,
                          scenegen::Scene* scene_out = nullptr) {
    const std::uint64_t ep_seed = derive_seed(root_seed, ordinal);
    const scenegen::Scene scene =
        scenegen::sample_scene(env.catalog, env.recipe, derive_seed(ep_seed, 1));
    const scenegen::TaskSpec task =
        scenegen::sample_task(scene, env.catalog, derive_seed(ep_seed, 2),
                              scenegen::language_from_name(env.cfg.language), env.lexicon);
    const std::uint64_t rand_seed = derive_seed(ep_seed, 4);
    sim::SimState state =
        sim::init_episode(scene, env.catalog, task, rand_seed, /*eval_mode=*/false,
                          env.cfg.physics);

    data::Episode ep;
    ep.ordinal = ordinal;
    ep.scene_seed = scene.seed;
    ep.rand_seed = rand_seed;
    ep.task = task;
    const auto tokens = learn::tokenize(task.caption, vocab);
    policy.reset();
    while (state.status == sim::Status::Running) {
        const auto obs = render::make_observation(state, tokens, env.cfg.head, env.cfg.back);
        const sim::Action action = policy.act(state, obs);
        ep.steps.push_back({obs, action, state.clock});
        sim::step_control(state, action, env.cfg.physics);
    }
    ep.outcome = state.status;
    ep.duration = state.clock;
    if (scene_out) *scene_out = scene;
    return ep;
}

int cmd_gen_scenes(const CommonArgs& args, int n, const std::string& recipe_path,
                   const std::string& dir_flag) {
    const Env env = load_env(args, recipe_path);
    const std::string dir = dir_flag.empty() ? args.out_root + "/scenes" : dir_flag;
    fs::create_directories(dir);
    for (int i = 0; i < n; ++i) {
        const auto scene = scenegen::sample_scene(env.catalog, env.recipe,
                                                  derive_seed(env.cfg.seed, i));
        char name[64];
        std::snprintf(name, sizeof(name), "/scene_%05d.json", i);
        scenegen::write_scene(scene, dir + name);
    }
    std::printf("wrote %d scenes to %s\n", n, dir.c_str());
    return 0;
}

int cmd_collect(const CommonArgs& args, std::uint64_t episodes, std::uint64_t trajectories,
                const std::string& recipe_path, const std::string& out_flag,
                const std::string& policy_name, const std::string& rl_params_path,
                bool keep_all, const std::string& episode_log_dir) {
    const Env env = load_env(args, recipe_path);
    const learn::Vocab vocab = catalog_vocab(env);
    save_vocab(vocab, args.out_root + "/vocab.json");

    std::optional<expert::RlPolicy> rl;
    if (policy_name == "expert-rl") rl = expert::load_rl_policy(rl_params_path);

    data::DatasetHeader header;
    header.head = env.cfg.head;
    header.back = env.cfg.back;
    header.vocab_hash = vocab.hash();
    const std::string out_path = out_flag.empty() ? args.out_root + "/dataset.bin" : out_flag;
    data::DatasetWriter writer(out_path, header);

    if (!episode_log_dir.empty()) fs::create_directories(episode_log_dir);
    std::mutex log_mu;
    int logged = 0;

    const auto runner = [&](std::uint64_t ordinal) {
        std::unique_ptr<eval::Policy> policy;
        if (rl) {
            policy = std::make_unique<expert::RlExpertPolicy>(*rl,
                                                              env.cfg.physics.train_budget_s);
        } else {
            policy = std::make_unique<eval::ScriptedPolicy>(env.cfg.expert);
        }
        scenegen::Scene scene;
        data::Episode ep = run_episode(env, *policy, vocab, ordinal, env.cfg.seed, &scene);
        if (!episode_log_dir.empty()) {
            std::lock_guard<std::mutex> lock(log_mu);
            if (logged < 8) {
                data::write_episode_log(
                    ep, scene,
                    episode_log_dir + "/episode_" + std::to_string(ordinal) + ".json");
                ++logged;
            }
        }
        return ep;
    };

    const bool by_traj = trajectories > 0;
    const auto stats =
        data::collect_rollouts(runner, by_traj ? trajectories : episodes,
                               keep_all ? data::KeepRule::All : data::KeepRule::SuccessOnly,
                               env.cfg.workers, writer, by_traj);
    writer.finalize();
    std::printf("collected %llu episodes (%llu kept, %llu trajectories) -> %s\n",
                static_cast<unsigned long long>(stats.episodes_run),
                static_cast<unsigned long long>(stats.episodes_kept),
                static_cast<unsigned long long>(stats.trajectories), out_path.c_str());
    return 0;
}

int cmd_train_expert(const CommonArgs& args, const std::string& recipe_path,
                     const std::string& out_flag, const std::string& scene_file) {
    const Env env = load_env(args, recipe_path);
    std::optional<scenegen::Scene> fixed;
    if (!scene_file.empty()) fixed = scenegen::read_scene(scene_file);

    const auto make_env = [&](std::uint64_t ordinal) {
        const std::uint64_t ep_seed = derive_seed(derive_seed(env.cfg.seed, 0xE1), ordinal);
        const scenegen::Scene scene =
            fixed ? *fixed
                  : scenegen::sample_scene(env.catalog, env.recipe, derive_seed(ep_seed, 1));
        const scenegen::TaskSpec task =
            scenegen::sample_task(scene, env.catalog, derive_seed(ep_seed, 2),
                                  scenegen::Language::EN, env.lexicon);
        return sim::init_episode(scene, env.catalog, task, derive_seed(ep_seed, 4),
                                 /*eval_mode=*/false, env.cfg.physics);
    };

    expert::RlConfig rl_cfg = env.cfg.rl;
    rl_cfg.workers = env.cfg.workers;
    rl_cfg.quiet = env.cfg.quiet;
    rl_cfg.log_path = args.out_root + "/expert_rl_log.csv";
    const auto policy = expert::train_expert_rl(make_env, env.cfg.physics, rl_cfg, env.cfg.seed);
    const std::string out_path =
        out_flag.empty() ? args.out_root + "/expert_params.bin" : out_flag;
    expert::save_rl_policy(policy, out_path);
    std::printf("trained RL expert (%zu parameters) -> %s\n", policy.count(), out_path.c_str());
    return 0;
}

int cmd_train_student(const CommonArgs& args, const std::string& dataset_path,
                      const std::string& out_flag, int epochs_flag,
                      const std::string& optimizer_flag) {
    const Env env = load_env(args);
    const learn::Vocab vocab = catalog_vocab(env);

    data::DatasetReader reader(dataset_path);
    if (reader.header().vocab_hash != vocab.hash())
        throw std::runtime_error("dataset vocab hash does not match the catalog vocabulary");

    learn::ModelConfig mc = env.cfg.model;
    mc.image_w = reader.header().image_w;
    mc.image_h = reader.header().image_h;
    mc.vocab_size = static_cast<int>(vocab.size());

    learn::TrainConfig tc = env.cfg.train;
    if (epochs_flag > 0) tc.epochs = epochs_flag;
    if (!optimizer_flag.empty()) tc.optimizer = optimizer_flag;
    if (args.seed_set) tc.seed = env.cfg.seed;
    tc.quiet = env.cfg.quiet;
    tc.log_path = args.out_root + "/train_log.csv";

    const auto params = learn::train_student(reader, mc, tc);
    const std::string out_path =
        out_flag.empty() ? args.out_root + "/student_params.bin" : out_flag;
    learn::save_params(params, out_path);
    std::printf("trained student (%zu parameters) -> %s\n", params.count(), out_path.c_str());
    return 0;
}

eval::PolicyFactory make_policy_factory(const Env& env, const std::string& policy_name,
                                        const std::string& params_path,
                                        const std::string& endpoint = "") {
    if (policy_name == "scripted") {
        const auto expert_params = env.cfg.expert;
        return [expert_params] { return std::make_unique<eval::ScriptedPolicy>(expert_params); };
    }
    if (policy_name == "student") {
        auto params = std::make_shared<learn::PolicyParams>(learn::load_params(params_path));
        return [params] { return std::make_unique<eval::StudentPolicy>(*params); };
    }
    if (policy_name == "expert-rl") {
        auto rl = std::make_shared<expert::RlPolicy>(expert::load_rl_policy(params_path));
        const double scale = env.cfg.physics.train_budget_s;
        return [rl, scale] { return std::make_unique<expert::RlExpertPolicy>(*rl, scale); };
    }
    if (policy_name == "remote") {
        const auto colon = endpoint.rfind(':');
        if (colon == std::string::npos)
            throw eval::PolicyLoadError("remote policy needs --endpoint host:port");
        const std::string host = endpoint.substr(0, colon);
        const int port = std::stoi(endpoint.substr(colon + 1));
        return [host, port] { return std::make_unique<deploy::RemoteEvalPolicy>(host, port); };
    }
    throw eval::PolicyLoadError("unknown policy: " + policy_name);
}

eval::EvalConfig build_eval_config(const Env& env, const std::string& scene_file,
                                   const std::string& split, int level,
                                   const std::string& difficulty, std::uint64_t trials) {
    eval::EvalConfig ec;
    if (!scene_file.empty()) ec.fixed_scene = eval::build_fixed_scene(scene_file);
    ec.recipe = env.recipe;
    ec.trials = trials ? trials : env.cfg.trials;
    if (split == "train") ec.description_set = eval::DescriptionSet::TrainSet;
    else if (split == "test") ec.description_set = eval::DescriptionSet::TestSet;
    else if (split == "italian") ec.description_set = eval::DescriptionSet::Italian;
    else throw eval::PolicyLoadError("unknown description split: " + split);
    if (level > 0) ec.level_filter = level;
    if (difficulty == "easy") ec.difficulty = eval::Difficulty::Easy;
    else if (difficulty == "medium") ec.difficulty = eval::Difficulty::Medium;
    else if (difficulty == "hard") ec.difficulty = eval::Difficulty::Hard;
    else if (!difficulty.empty()) throw eval::PolicyLoadError("unknown difficulty: " + difficulty);
    ec.workers = env.cfg.workers;
    return ec;
}

int cmd_eval(const CommonArgs& args, const std::string& policy_name,
             const std::string& params_path, const std::string& scene_file,
             const std::string& recipe_path, const std::string& split, int level,
             const std::string& difficulty, std::uint64_t trials, const std::string& report_path,
             const std::string& curve_path, const std::string& endpoint) {
    const Env env = load_env(args, recipe_path);
    const learn::Vocab vocab = catalog_vocab(env);
    const auto factory = make_policy_factory(env, policy_name, params_path, endpoint);
    const auto ec = build_eval_config(env, scene_file, split, level, difficulty, trials);

    const auto report =
        eval::run_eval(ec, factory, env.catalog, env.lexicon, env.cfg.physics, vocab,
                       env.cfg.seed);
    std::printf("%s: %.1f%% +/- %.2f%% over %llu trials\n", policy_name.c_str(),
                100.0 * report.success_rate, 100.0 * report.stderr_value,
                static_cast<unsigned long long>(report.trials));
    for (int l = 0; l < 5; ++l)
        if (report.level_trials[l])
            std::printf("  level %d: %.1f%% (%llu trials)\n", l + 1,
                        100.0 * report.level_successes[l] / report.level_trials[l],
                        static_cast<unsigned long long>(report.level_trials[l]));
    eval::write_report(report, report_path.empty() ? args.out_root + "/report.json"
                                                   : report_path);
    const auto curve = eval::cumulative_success_curve(report.time_to_success, report.trials,
                                                      env.cfg.physics.eval_budget_s, 1.0);
    eval::write_curve_csv(curve, curve_path.empty() ? args.out_root + "/curve.csv" : curve_path);
    return 0;
}

int cmd_serve(const CommonArgs& args, const std::string& params_path, const std::string& bind,
              int port) {
    (void)args;
    const auto params = learn::load_params(params_path);
    deploy::PolicyServer server(params, bind, port);
    std::printf("serving policy on %s:%d (ctrl-c to stop)\n", bind.c_str(), server.port());
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
    return 0;
}

int cmd_deploy_sim(const CommonArgs& args, const std::string& policy_name,
                   const std::string& params_path, const std::string& endpoint_str,
                   const std::string& scene_file, const std::string& recipe_path,
                   std::uint64_t trials, double base_ms, double jitter_ms, double drop_prob,
                   const std::string& report_path, const std::string& staleness_log,
                   bool realtime) {
    const Env env = load_env(args, recipe_path);
    const learn::Vocab vocab = catalog_vocab(env);

    deploy::DeployConfig dc;
    dc.latency = env.cfg.latency;
    if (base_ms >= 0.0) dc.latency.base_ms = base_ms;
    dc.latency.jitter_ms = jitter_ms;
    dc.latency.drop_prob = drop_prob;
    dc.trials = trials ? trials : env.cfg.deploy_trials;
    dc.client_timeout_ms = env.cfg.latency_timeout_ms;
    dc.eval = build_eval_config(env, scene_file, "train", 0, "", dc.trials);
    dc.log_ticks = !staleness_log.empty();

    std::optional<deploy::RemoteEndpoint> endpoint;
    eval::PolicyFactory factory;
    if (!endpoint_str.empty()) {
        const auto colon = endpoint_str.rfind(':');
        if (colon == std::string::npos)
            throw eval::PolicyLoadError("endpoint must be host:port");
        endpoint = deploy::RemoteEndpoint{endpoint_str.substr(0, colon),
                                          std::stoi(endpoint_str.substr(colon + 1))};
    } else {
        factory = make_policy_factory(env, policy_name, params_path);
    }
    if (realtime && !endpoint)
        throw eval::PolicyLoadError("--realtime requires --endpoint");

    const auto report =
        realtime ? deploy::run_realtime_deployment(dc, *endpoint, env.catalog, env.lexicon,
                                                   env.cfg.physics, vocab, env.cfg.seed)
                 : deploy::simulate_deployment(dc, factory, endpoint, env.catalog, env.lexicon,
                                               env.cfg.physics, vocab, env.cfg.seed);
    std::printf("deploy-sim: %.1f%% +/- %.2f%% over %llu trials; staleness [%.3f, %.3f] s; "
                "%llu requests (%llu dropped)\n",
                100.0 * report.eval.success_rate, 100.0 * report.eval.stderr_value,
                static_cast<unsigned long long>(report.eval.trials), report.min_staleness_s,
                report.max_staleness_s, static_cast<unsigned long long>(report.issued_requests),
                static_cast<unsigned long long>(report.dropped_requests));
    eval::write_report(report.eval,
                       report_path.empty() ? args.out_root + "/deploy_report.json" : report_path);
    if (!staleness_log.empty()) {
        std::ofstream out(staleness_log);
        out << "tick,seq,staleness_s\n";
        for (const auto& t : report.ticks)
            out << t.tick << "," << t.seq << "," << t.staleness_s << "\n";
    }
    if (!report.cache_monotone) {
        std::fprintf(stderr, "cache-latest invariant violated\n");
        return 2;
    }
    return 0;
}

int cmd_replay(const CommonArgs& args, const std::string& log_path, const std::string& dir_flag) {
    const Env env = load_env(args);
    const learn::Vocab vocab = catalog_vocab(env);
    std::ifstream in(log_path);
    if (!in) throw std::runtime_error("cannot open episode log: " + log_path);
    const auto j = nlohmann::json::parse(in);

    const scenegen::Scene scene = scenegen::scene_from_json(j.at("scene").dump());
    scenegen::TaskSpec task;
    task.scene_seed = scene.seed;
    task.target_index = j.at("task").at("target_index").get<int>();
    task.caption = j.at("task").at("caption").get<std::string>();
    task.caption_level = j.at("task").at("level").get<int>();
    task.language = scenegen::language_from_name(j.at("task").at("language").get<std::string>());
    const std::uint64_t rand_seed = j.at("rand_seed").get<std::uint64_t>();

    const std::string dir = dir_flag.empty() ? args.out_root + "/frames" : dir_flag;
    fs::create_directories(dir);
    sim::SimState state = sim::init_episode(scene, env.catalog, task, rand_seed,
                                            /*eval_mode=*/false, env.cfg.physics);
    const auto tokens = learn::tokenize(task.caption, vocab);
    int frame = 0;
    for (const auto& a : j.at("actions")) {
        const auto obs = render::make_observation(state, tokens, env.cfg.head, env.cfg.back);
        char head_name[64], back_name[64];
        std::snprintf(head_name, sizeof(head_name), "/head_%04d.ppm", frame);
        std::snprintf(back_name, sizeof(back_name), "/back_%04d.ppm", frame);
        render::write_ppm(obs.head, dir + head_name);
        render::write_ppm(obs.back, dir + back_name);
        const sim::Action action{a.at(0).get<std::uint8_t>(), a.at(1).get<std::uint8_t>(),
                                 a.at(2).get<std::uint8_t>()};
        sim::step_control(state, action, env.cfg.physics);
        ++frame;
        if (state.status != sim::Status::Running) break;
    }
    std::printf("replayed %d control steps -> %s (outcome %s)\n", frame, dir.c_str(),
                sim::status_name(state.status).c_str());
    return 0;
}

int cmd_overlap(const CommonArgs& args, std::uint64_t split_seed, double holdout,
                const std::string& report_path) {
    const Env env = load_env(args);
    const auto split = eval::split_descriptions(env.catalog, env.lexicon, split_seed, holdout);
    nlohmann::json j;
    std::printf("train/test description overlap (|intersection| / |test|):\n");
    for (int level = 1; level <= 5; ++level) {
        const double ov = scenegen::description_overlap(split.train_sets, split.test_sets, level);
        std::printf("  level %d: %.3f\n", level, ov);
        j["overlap"].push_back({{"level", level}, {"value", ov}});
    }
    j["test_assets"] = split.test_indices.size();
    j["holdout_fraction"] = holdout;
    j["split_seed"] = split_seed;
    const std::string path = report_path.empty() ? args.out_root + "/overlap.json" : report_path;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Procedural trolley-pushing sim2real pipeline"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* gen = app.add_subcommand("gen-scenes", "Sample scenes to JSON files");
    int gen_n = 5;
    std::string gen_recipe, gen_dir;
    add_common(gen, common);
    gen->add_option("--n", gen_n, "Number of scenes");
    gen->add_option("--recipe", gen_recipe, "Recipe JSON path");
    gen->add_option("--dir", gen_dir, "Output directory (default <out>/scenes)");

    auto* collect = app.add_subcommand("collect", "Roll out the expert and build a dataset");
    std::uint64_t col_episodes = 100, col_traj = 0;
    std::string col_recipe, col_out, col_policy = "scripted", col_rl_params, col_log_dir;
    bool col_keep_all = false;
    add_common(collect, common);
    collect->add_option("--episodes", col_episodes, "Kept-episode target");
    collect->add_option("--trajectories", col_traj,
                        "Kept-trajectory target (overrides --episodes)");
    collect->add_option("--recipe", col_recipe, "Recipe JSON path");
    collect->add_option("--out-file", col_out, "Dataset path (default <out>/dataset.bin)");
    collect->add_option("--policy", col_policy, "scripted | expert-rl");
    collect->add_option("--rl-params", col_rl_params, "RL expert parameter file");
    collect->add_flag("--keep-all", col_keep_all, "Keep timeout episodes too");
    collect->add_option("--episode-log-dir", col_log_dir, "Write replayable episode logs here");

    auto* texp = app.add_subcommand("train-expert", "REINFORCE refinement of the expert");
    std::string texp_recipe, texp_out, texp_scene;
    add_common(texp, common);
    texp->add_option("--recipe", texp_recipe, "Recipe JSON path");
    texp->add_option("--out-file", texp_out, "Parameter output path");
    texp->add_option("--scene-file", texp_scene, "Train on a fixed scene");

    auto* tstu = app.add_subcommand("train-student", "Behavior-clone the student");
    std::string tstu_dataset, tstu_out, tstu_opt;
    int tstu_epochs = 0;
    add_common(tstu, common);
    tstu->add_option("--dataset", tstu_dataset, "Dataset path")->required();
    tstu->add_option("--out-file", tstu_out, "Parameter output path");
    tstu->add_option("--epochs", tstu_epochs, "Override epochs");
    tstu->add_option("--optimizer", tstu_opt, "sgd | adam");

    auto* ev = app.add_subcommand("eval", "Evaluate a policy");
    std::string ev_policy = "scripted", ev_params, ev_scene, ev_recipe, ev_split = "train";
    std::string ev_difficulty, ev_report, ev_curve;
    int ev_level = 0;
    std::uint64_t ev_trials = 0;
    add_common(ev, common);
    ev->add_option("--policy", ev_policy, "scripted | student | expert-rl | remote");
    ev->add_option("--params", ev_params, "Parameter file for student/expert-rl");
    std::string ev_endpoint;
    ev->add_option("--endpoint", ev_endpoint, "host:port for --policy remote");
    ev->add_option("--scene-file", ev_scene, "Fixed scene JSON");
    ev->add_option("--recipe", ev_recipe, "Recipe JSON path");
    ev->add_option("--split", ev_split, "train | test | italian");
    ev->add_option("--level", ev_level, "Caption level filter 1..5");
    ev->add_option("--difficulty", ev_difficulty, "easy | medium | hard");
    ev->add_option("--trials", ev_trials, "Trial count");
    ev->add_option("--report", ev_report, "Report JSON path");
    ev->add_option("--curve", ev_curve, "Cumulative curve CSV path");

    auto* serve = app.add_subcommand("serve", "Serve a student policy over the wire protocol");
    std::string srv_params, srv_bind = "127.0.0.1";
    int srv_port = 7447;
    add_common(serve, common);
    serve->add_option("--params", srv_params, "Parameter file")->required();
    serve->add_option("--bind", srv_bind, "Bind address");
    serve->add_option("--port", srv_port, "Port (0 = ephemeral)");

    auto* dep = app.add_subcommand("deploy-sim", "Latency-injecting deployment harness");
    std::string dep_policy = "scripted", dep_params, dep_endpoint, dep_scene, dep_recipe;
    std::string dep_report, dep_staleness;
    std::uint64_t dep_trials = 0;
    double dep_base = -1.0, dep_jitter = 0.0, dep_drop = 0.0;
    add_common(dep, common);
    dep->add_option("--policy", dep_policy, "scripted | student | expert-rl");
    dep->add_option("--params", dep_params, "Parameter file");
    dep->add_option("--endpoint", dep_endpoint, "host:port of a live server");
    dep->add_option("--scene-file", dep_scene, "Fixed scene JSON");
    dep->add_option("--recipe", dep_recipe, "Recipe JSON path");
    dep->add_option("--trials", dep_trials, "Trial count");
    dep->add_option("--latency-base", dep_base, "Base latency ms");
    dep->add_option("--latency-jitter", dep_jitter, "Jitter half-width ms");
    dep->add_option("--drop-prob", dep_drop, "Request drop probability");
    dep->add_option("--report", dep_report, "Report JSON path");
    dep->add_option("--staleness-log", dep_staleness, "Per-tick staleness CSV");
    bool dep_realtime = false;
    dep->add_flag("--realtime", dep_realtime, "Wall-clock pacing against a live endpoint");

    auto* rep = app.add_subcommand("replay", "Re-render a logged episode to PPM frames");
    std::string rep_log, rep_dir;
    add_common(rep, common);
    rep->add_option("--episode-log", rep_log, "Episode log JSON")->required();
    rep->add_option("--dir", rep_dir, "Frame output directory");

    auto* ov = app.add_subcommand("overlap", "Train/test description overlap per level");
    std::uint64_t ov_seed = 17;
    double ov_holdout = 0.3;
    std::string ov_report;
    add_common(ov, common);
    ov->add_option("--split-seed", ov_seed, "Split seed");
    ov->add_option("--holdout", ov_holdout, "Holdout fraction");
    ov->add_option("--report", ov_report, "Report JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_scenes(common, gen_n, gen_recipe, gen_dir);
        if (collect->parsed())
            return cmd_collect(common, col_episodes, col_traj, col_recipe, col_out, col_policy,
                               col_rl_params, col_keep_all, col_log_dir);
        if (texp->parsed()) return cmd_train_expert(common, texp_recipe, texp_out, texp_scene);
        if (tstu->parsed())
            return cmd_train_student(common, tstu_dataset, tstu_out, tstu_epochs, tstu_opt);
        if (ev->parsed())
            return cmd_eval(common, ev_policy, ev_params, ev_scene, ev_recipe, ev_split, ev_level,
                            ev_difficulty, ev_trials, ev_report, ev_curve, ev_endpoint);
        if (serve->parsed()) return cmd_serve(common, srv_params, srv_bind, srv_port);
        if (dep->parsed())
            return cmd_deploy_sim(common, dep_policy, dep_params, dep_endpoint, dep_scene,
                                  dep_recipe, dep_trials, dep_base, dep_jitter, dep_drop,
                                  dep_report, dep_staleness, dep_realtime);
        if (rep->parsed()) return cmd_replay(common, rep_log, rep_dir);
        if (ov->parsed()) return cmd_overlap(common, ov_seed, ov_holdout, ov_report);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
