#pragma once

#include <functional>

#include "tsim/evaluate.hpp"
#include "tsim/expert.hpp"
#include "tsim/model.hpp"

namespace tsim::expert {

// 16-dim privileged feature vector: bodies in the robot frame, velocities,
// trolley-target geometry, remaining time fraction.
// The clock feature is elapsed time over the training budget, saturating at
// one, so longer evaluation budgets extend an episode without shifting the
// feature distribution the policy trained on.
std::array<double, 16> rl_features(const sim::PrivilegedState& pv, double elapsed_s,
                                   double time_scale_s);

// Two-layer tanh policy over privileged features with the three action heads.
struct RlPolicy {
    learn::Mat w1, b1;  // [16, hidden], [1, hidden]
    learn::Mat w2, b2;  // [hidden, 12], [1, 12]

    static RlPolicy init(int hidden, std::uint64_t seed);
    std::size_t count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    // Unnormalized logits for the 4+3+5 heads.
    std::array<double, 12> logits(const std::array<double, 16>& features) const;
    sim::Action act_greedy(const std::array<double, 16>& features) const;
    sim::Action act_sample(const std::array<double, 16>& features, Rng& rng) const;
    double mean_entropy(const std::array<double, 16>& features) const;
};

void save_rl_policy(const RlPolicy& policy, const std::string& path);
RlPolicy load_rl_policy(const std::string& path);

struct RlConfig {
    int episodes = 20000;
    int batch_episodes = 16;
    int hidden = 64;
    double lr = 0.03;
    double discount = 0.98;
    double entropy_bonus = 0.015;
    double success_bonus = 10.0;
    double baseline_ema = 0.95;
    bool normalize_advantages = true;  // per-update standardization
    double lr_decay = 0.9997;          // per-update multiplier
    int snapshot_every = 20;           // updates between greedy snapshot evals
    int snapshot_evals = 128;           // episodes per snapshot eval
    int workers = 1;
    std::string log_path;  // CSV: episode, return, loss
    bool quiet = false;
};

using EnvFactory = std::function<sim::SimState(std::uint64_t episode_ordinal)>;

struct DivergedLoss : std::runtime_error {
    DivergedLoss() : std::runtime_error("policy-gradient loss diverged (non-finite)") {}
};

// On-policy REINFORCE with a moving-average baseline; reward is per-control-
// step progress of negative trolley-to-target distance plus a terminal
// success bonus. Deterministic given the seed; batches of episodes may be
// collected in parallel but gradients reduce in episode-ordinal order.
RlPolicy train_expert_rl(const EnvFactory& make_env, const sim::PhysicsConfig& physics,
                         const RlConfig& cfg, std::uint64_t seed);

// Greedy policy adapter for evaluation.
class RlExpertPolicy final : public eval::Policy {
public:
    RlExpertPolicy(RlPolicy policy, double time_scale_s)
        : policy_(std::move(policy)), time_scale_(time_scale_s) {}
    void reset() override {}
    bool needs_observation() const override { return false; }
    sim::Action act(const sim::SimState& state, const render::Observation&) override {
        return policy_.act_greedy(
            rl_features(sim::privileged_features(state), state.clock, time_scale_));
    }

private:
    RlPolicy policy_;
    double time_scale_;
};

}  // namespace tsim::expert
