#include <benchmark/benchmark.h>

#include "tsim/dataset.hpp"
#include "tsim/evaluate.hpp"
#include "tsim/expert.hpp"
#include "tsim/model.hpp"
#include "tsim/threading.hpp"

using namespace tsim;

namespace {

scenegen::Catalog catalog() {
    static auto c = scenegen::load_asset_catalog(TSIM_ASSETS_DIR "/catalog_default.json");
    return c;
}

sim::SimState make_state(std::uint64_t seed) {
    const auto scene =
        scenegen::sample_scene(catalog(), scenegen::PlacementRecipe::default_recipe(), seed);
    scenegen::TaskSpec task;
    task.target_index = 0;
    task.caption = "sofa";
    sim::PhysicsConfig physics;
    return sim::init_episode(scene, catalog(), task, seed, false, physics);
}

}  // namespace

static void BM_SampleScene(benchmark::State& state) {
    const auto recipe = scenegen::PlacementRecipe::default_recipe();
    std::uint64_t seed = 0;
    for (auto _ : state) {
        auto scene = scenegen::sample_scene(catalog(), recipe, seed++);
        benchmark::DoNotOptimize(scene.instances.size());
    }
}
BENCHMARK(BM_SampleScene);

static void BM_LowLevelTick(benchmark::State& state) {
    sim::PhysicsConfig physics;
    auto sim_state = make_state(3);
    const sim::Action fwd{3, 1, 2};
    for (auto _ : state) {
        sim::step_lowlevel(sim_state, fwd, physics);
        if (sim_state.status != sim::Status::Running) sim_state = make_state(3);
        benchmark::DoNotOptimize(sim_state.robot.pose.x);
    }
}
BENCHMARK(BM_LowLevelTick);

static void BM_RenderCamera(benchmark::State& state) {
    const auto sim_state = make_state(4);
    const auto cfg = render::CameraCfg::head();
    for (auto _ : state) {
        auto img = render::render_camera(sim_state, cfg);
        benchmark::DoNotOptimize(img.rgb.data());
    }
}
BENCHMARK(BM_RenderCamera);

static void BM_PlanPath(benchmark::State& state) {
    const auto sim_state = make_state(5);
    const auto pv = sim::privileged_features(sim_state);
    const auto grid = expert::build_grid(pv, 0.1, 0.33);
    for (auto _ : state) {
        auto path = expert::plan_path(grid, pv.robot_pose.position(),
                                      {pv.room.max.x - 1.0, pv.room.max.y - 1.0});
        benchmark::DoNotOptimize(path);
    }
}
BENCHMARK(BM_PlanPath);

static void BM_ScriptedExpertStep(benchmark::State& state) {
    auto sim_state = make_state(6);
    expert::ScriptedExpert expert;
    expert.reset();
    sim::PhysicsConfig physics;
    for (auto _ : state) {
        const auto a = expert.act(sim::privileged_features(sim_state));
        sim::step_control(sim_state, a, physics);
        if (sim_state.status != sim::Status::Running) {
            sim_state = make_state(6);
            expert.reset();
        }
        benchmark::DoNotOptimize(a);
    }
}
BENCHMARK(BM_ScriptedExpertStep);

static void BM_StudentForward(benchmark::State& state) {
    set_global_workers(static_cast<int>(state.range(0)));
    learn::ModelConfig cfg;
    cfg.vocab_size = 128;
    const auto params = learn::PolicyParams::init(cfg, 7);
    Rng rng(8);
    learn::Batch batch;
    batch.n_traj = 16;
    batch.steps = cfg.context;
    batch.images.resize(static_cast<std::size_t>(16) * cfg.context * cfg.step_bytes());
    for (auto& x : batch.images) x = static_cast<std::uint8_t>(rng.uniform_below(256));
    for (int i = 0; i < 16; ++i) batch.tokens.push_back({2, 3, 4});
    batch.actions.assign(static_cast<std::size_t>(16) * cfg.context, {0, 0, 0});
    batch.padded.assign(static_cast<std::size_t>(16) * cfg.context, 0);
    for (auto _ : state) {
        auto logits = learn::forward_logits(params, batch);
        benchmark::DoNotOptimize(logits.v.data());
    }
}
BENCHMARK(BM_StudentForward)->Arg(1)->Arg(2);

static void BM_StudentGrad(benchmark::State& state) {
    set_global_workers(static_cast<int>(state.range(0)));
    learn::ModelConfig cfg;
    cfg.vocab_size = 128;
    const auto params = learn::PolicyParams::init(cfg, 7);
    Rng rng(9);
    learn::Batch batch;
    batch.n_traj = 16;
    batch.steps = cfg.context;
    batch.images.resize(static_cast<std::size_t>(16) * cfg.context * cfg.step_bytes());
    for (auto& x : batch.images) x = static_cast<std::uint8_t>(rng.uniform_below(256));
    for (int i = 0; i < 16; ++i) batch.tokens.push_back({2, 3, 4});
    batch.actions.assign(static_cast<std::size_t>(16) * cfg.context, {1, 1, 2});
    batch.padded.assign(static_cast<std::size_t>(16) * cfg.context, 0);
    for (auto _ : state) {
        auto grads = learn::grad(params, batch);
        benchmark::DoNotOptimize(grads.loss);
    }
}
BENCHMARK(BM_StudentGrad)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
