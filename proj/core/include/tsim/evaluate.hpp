#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsim/expert.hpp"
#include "tsim/model.hpp"
#include "tsim/render.hpp"
#include "tsim/scenegen.hpp"
#include "tsim/sim.hpp"

namespace tsim::eval {

// Binomial standard error sqrt(p (1-p) / n).
double standard_error(double p, std::uint64_t n);

// ---- policy adapters ---------------------------------------------------------

// Stateful per-episode policy. reset() is called at episode start; act() once
// per 2 Hz control step. Policies that ignore pixels (the privileged expert)
// report needs_observation() false so rollouts can skip rendering.
class Policy {
public:
    virtual ~Policy() = default;
    virtual void reset() = 0;
    virtual bool needs_observation() const { return true; }
    virtual sim::Action act(const sim::SimState& state, const render::Observation& obs) = 0;
};

class ScriptedPolicy final : public Policy {
public:
    explicit ScriptedPolicy(expert::ExpertParams params = {}) : expert_(params) {}
    void reset() override { expert_.reset(); }
    bool needs_observation() const override { return false; }
    sim::Action act(const sim::SimState& state, const render::Observation&) override {
        return expert_.act(sim::privileged_features(state));
    }

private:
    expert::ScriptedExpert expert_;
};

class StudentPolicy final : public Policy {
public:
    explicit StudentPolicy(const learn::PolicyParams& params) : rollout_(params) {}
    void reset() override { rollout_.reset(); }
    sim::Action act(const sim::SimState&, const render::Observation& obs) override {
        return rollout_.act(obs);
    }

private:
    learn::StudentRollout rollout_;
};

using PolicyFactory = std::function<std::unique_ptr<Policy>()>;

// ---- description splits --------------------------------------------------------

// Attribute-level split: a seeded fraction of assets receives held-out
// colors / style sets / size jitters and contributes its regenerated captions
// to the test side. Unperturbed assets stay train-only.
struct DescriptionSplit {
    scenegen::Catalog test_catalog;          // full catalog with perturbed attributes
    std::vector<int> test_indices;           // assets whose captions moved to test
    scenegen::LevelSets train_sets;          // EN caption sets per level
    scenegen::LevelSets test_sets;
};

DescriptionSplit split_descriptions(const scenegen::Catalog& catalog,
                                    const scenegen::Lexicon& lexicon, std::uint64_t seed,
                                    double holdout_fraction = 0.3);

// Caption provider backed by a (possibly perturbed) catalog copy.
class CatalogCaptions final : public scenegen::CaptionProvider {
public:
    CatalogCaptions(scenegen::Catalog catalog, scenegen::Lexicon lexicon)
        : catalog_(std::move(catalog)), lexicon_(std::move(lexicon)) {}
    std::string caption(const scenegen::AssetSpec& asset, int level,
                        scenegen::Language lang) const override {
        const auto& perturbed = scenegen::find_asset(catalog_, asset.id);
        return scenegen::generate_captions(perturbed, lang, lexicon_).levels[level - 1];
    }

private:
    scenegen::Catalog catalog_;
    scenegen::Lexicon lexicon_;
};

// ---- difficulty-graded initial poses -------------------------------------------

enum class Difficulty { Easy, Medium, Hard };

std::string difficulty_name(Difficulty d);

struct NoSatisfyingPose : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Visibility-predicate search for (robot_init, trolley_init): Easy sees both
// trolley and target through the head camera, Medium sees the trolley with
// the target in the front hemisphere but out of view, Hard has the target in
// the rear hemisphere.
std::pair<geom::Pose2D, geom::Pose2D> difficulty_poses(
    const scenegen::Scene& scene, const scenegen::Catalog& catalog, int target_index,
    Difficulty level, const render::CameraCfg& head_cfg, const sim::PhysicsConfig& physics,
    std::uint64_t seed);

// ---- evaluation ---------------------------------------------------------------

enum class DescriptionSet { TrainSet, TestSet, Italian };

struct EvalConfig {
    // Scene source: fixed scene when set, otherwise procedural sampling.
    std::optional<scenegen::Scene> fixed_scene;
    scenegen::PlacementRecipe recipe = scenegen::PlacementRecipe::default_recipe();
    std::uint64_t trials = 100;
    DescriptionSet description_set = DescriptionSet::TrainSet;
    std::optional<int> level_filter;          // 1..5
    std::optional<Difficulty> difficulty;
    double split_holdout = 0.3;
    std::uint64_t split_seed = 17;
    int workers = 1;
};

struct EvalReport {
    std::uint64_t trials = 0;
    std::uint64_t successes = 0;
    double success_rate = 0.0;
    double stderr_value = 0.0;
    std::array<std::uint64_t, 5> level_trials{};
    std::array<std::uint64_t, 5> level_successes{};
    std::map<std::string, double> per_difficulty;  // difficulty name -> rate
    std::vector<double> time_to_success;           // by trial ordinal, successes only
    double mean_duration = 0.0;
};

struct PolicyLoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic given the seed; trials run on derived per-trial seeds and the
// report is assembled in trial-ordinal order regardless of worker count.
EvalReport run_eval(const EvalConfig& cfg, const PolicyFactory& make_policy,
                    const scenegen::Catalog& catalog, const scenegen::Lexicon& lexicon,
                    const sim::PhysicsConfig& physics, const learn::Vocab& vocab,
                    std::uint64_t seed);

// Scene/task/state for one trial ordinal. Shared between run_eval and the
// deployment co-simulation so both see identical episodes for a given seed.
struct TrialSetup {
    scenegen::Scene scene;
    scenegen::TaskSpec task;
    sim::SimState state;
    std::vector<std::uint16_t> tokens;
};
TrialSetup make_trial(const EvalConfig& cfg, const scenegen::Catalog& catalog,
                      const scenegen::Lexicon& lexicon, const sim::PhysicsConfig& physics,
                      const learn::Vocab& vocab, const scenegen::CaptionProvider* provider,
                      scenegen::Language lang, std::uint64_t trial_seed);

// Monotone step curve of cumulative success rate over episode time.
std::vector<std::pair<double, double>> cumulative_success_curve(
    const std::vector<double>& time_to_success, std::uint64_t trials, double horizon_s = 60.0,
    double bin_s = 1.0);

scenegen::Scene build_fixed_scene(const std::string& path);

std::string report_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path);
void write_curve_csv(const std::vector<std::pair<double, double>>& curve,
                     const std::string& path);

}  // namespace tsim::eval
