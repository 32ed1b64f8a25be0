#include "tsim/expert_rl.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tsim/threading.hpp"

namespace tsim::expert {

using learn::Mat;

std::array<double, 16> rl_features(const sim::PrivilegedState& pv, double elapsed_s,
                                   double time_scale_s) {
    const geom::Vec2 robot = pv.robot_pose.position();
    const double theta = pv.robot_pose.theta;
    const geom::Vec2 trolley_rel = geom::rotate(pv.trolley_pose.position() - robot, -theta);
    const geom::Vec2 target_rel = geom::rotate(pv.target.center - robot, -theta);
    const double trolley_bearing = std::atan2(trolley_rel.y, trolley_rel.x);
    const double target_bearing = std::atan2(target_rel.y, target_rel.x);
    const geom::Vec2 robot_vel_body = geom::rotate(pv.robot_vel, -theta);
    const geom::Vec2 trolley_vel_body = geom::rotate(pv.trolley_vel, -theta);
    const geom::Vec2 t2t = pv.target.center - pv.trolley_pose.position();
    const double push_err = geom::wrap_angle(std::atan2(t2t.y, t2t.x) - theta);

    return {trolley_rel.x / 5.0,
            trolley_rel.y / 5.0,
            std::sin(trolley_bearing),
            std::cos(trolley_bearing),
            target_rel.x / 5.0,
            target_rel.y / 5.0,
            std::sin(target_bearing),
            std::cos(target_bearing),
            robot_vel_body.x / 1.5,
            robot_vel_body.y / 1.5,
            pv.robot_omega / 1.5,
            trolley_vel_body.x / 1.5,
            trolley_vel_body.y / 1.5,
            geom::norm(t2t) / 5.0,
            push_err / geom::kPi,
            time_scale_s > 0.0 ? std::clamp(elapsed_s / time_scale_s, 0.0, 1.0) : 0.0};
}

RlPolicy RlPolicy::init(int hidden, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x21F));
    RlPolicy p;
    const auto xavier = [&](int r, int c) {
        Mat m(r, c);
        const double s = std::sqrt(6.0 / (r + c));
        for (double& x : m.v) x = rng.uniform(-s, s);
        return m;
    };
    p.w1 = xavier(16, hidden);
    p.b1 = Mat(1, hidden);
    p.w2 = xavier(hidden, 12);
    p.b2 = Mat(1, 12);
    return p;
}

std::array<double, 12> RlPolicy::logits(const std::array<double, 16>& features) const {
    const int hidden = w1.cols;
    std::vector<double> h(hidden, 0.0);
    for (int i = 0; i < 16; ++i) {
        const double x = features[i];
        const double* wr = w1.row(i);
        for (int j = 0; j < hidden; ++j) h[j] += x * wr[j];
    }
    for (int j = 0; j < hidden; ++j) h[j] = std::tanh(h[j] + b1.v[j]);
    std::array<double, 12> out{};
    for (int j = 0; j < hidden; ++j) {
        const double x = h[j];
        const double* wr = w2.row(j);
        for (int k = 0; k < 12; ++k) out[k] += x * wr[k];
    }
    for (int k = 0; k < 12; ++k) out[k] += b2.v[k];
    return out;
}

sim::Action RlPolicy::act_greedy(const std::array<double, 16>& features) const {
    const auto z = logits(features);
    return learn::argmax_action(z.data(), z.data() + 4, z.data() + 7);
}

namespace {

int sample_head(const double* z, int n, Rng& rng) {
    double mx = z[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    std::array<double, 8> p{};
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    const double u = rng.uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return n - 1;
}

double head_entropy(const double* z, int n) {
    double mx = z[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(z[i] - mx);
    const double lse = std::log(sum) + mx;
    double h = 0.0;
    for (int i = 0; i < n; ++i) {
        const double logp = z[i] - lse;
        h -= std::exp(logp) * logp;
    }
    return h;
}

}  // namespace

sim::Action RlPolicy::act_sample(const std::array<double, 16>& features, Rng& rng) const {
    const auto z = logits(features);
    return {static_cast<std::uint8_t>(sample_head(z.data(), 4, rng)),
            static_cast<std::uint8_t>(sample_head(z.data() + 4, 3, rng)),
            static_cast<std::uint8_t>(sample_head(z.data() + 7, 5, rng))};
}

double RlPolicy::mean_entropy(const std::array<double, 16>& features) const {
    const auto z = logits(features);
    return (head_entropy(z.data(), 4) + head_entropy(z.data() + 4, 3) +
            head_entropy(z.data() + 7, 5)) / 3.0;
}

void save_rl_policy(const RlPolicy& policy, const std::string& path) {
    learn::save_tensor_file(path, {0, 0, 0, static_cast<std::uint32_t>(policy.w1.cols)},
                            {{"rl.w1", &policy.w1},
                             {"rl.b1", &policy.b1},
                             {"rl.w2", &policy.w2},
                             {"rl.b2", &policy.b2}});
}

RlPolicy load_rl_policy(const std::string& path) {
    const learn::TensorFile tf = learn::load_tensor_file(path);
    if (tf.tensors.size() != 4 || tf.tensors[0].first != "rl.w1")
        throw std::runtime_error("not an RL policy parameter file: " + path);
    RlPolicy p;
    p.w1 = tf.tensors[0].second;
    p.b1 = tf.tensors[1].second;
    p.w2 = tf.tensors[2].second;
    p.b2 = tf.tensors[3].second;
    return p;
}

namespace {

struct EpisodeTrace {
    std::vector<std::array<double, 16>> features;
    std::vector<std::array<std::uint8_t, 3>> actions;
    std::vector<double> rewards;
    double episode_return = 0.0;
};

EpisodeTrace rollout(const RlPolicy& policy, sim::SimState state,
                     const sim::PhysicsConfig& physics, double success_bonus, Rng& rng) {
    EpisodeTrace trace;
    while (state.status == sim::Status::Running) {
        const auto pv = sim::privileged_features(state);
        const auto feats = rl_features(pv, state.clock, physics.train_budget_s);
        const sim::Action action = policy.act_sample(feats, rng);
        const double before =
            geom::norm(state.target_rect().center - state.trolley.pose.position());
        sim::step_control(state, action, physics);
        const double after =
            geom::norm(state.target_rect().center - state.trolley.pose.position());
        double reward = before - after;
        if (state.status == sim::Status::Success) reward += success_bonus;
        trace.features.push_back(feats);
        trace.actions.push_back({action.forward_bin, action.lateral_bin, action.yaw_bin});
        trace.rewards.push_back(reward);
    }
    for (const double r : trace.rewards) trace.episode_return += r;
    return trace;
}

}  // namespace

namespace {

// Greedy success count over a deterministic eval set; used to snapshot the
// best policy seen during training.
int greedy_successes(const RlPolicy& policy, const EnvFactory& make_env,
                     const sim::PhysicsConfig& physics, const RlConfig& cfg,
                     std::uint64_t seed) {
    std::vector<int> wins(cfg.snapshot_evals, 0);
    parallel_ranges(cfg.snapshot_evals, std::max(1, cfg.workers), [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            sim::SimState state = make_env(derive_seed(seed, 0xEE00 + i));
            while (state.status == sim::Status::Running) {
                const auto feats = rl_features(sim::privileged_features(state),
                                               state.clock, physics.train_budget_s);
                sim::step_control(state, policy.act_greedy(feats), physics);
            }
            wins[i] = state.status == sim::Status::Success ? 1 : 0;
        }
    });
    int total = 0;
    for (const int w : wins) total += w;
    return total;
}

}  // namespace

RlPolicy train_expert_rl(const EnvFactory& make_env, const sim::PhysicsConfig& physics,
                         const RlConfig& cfg, std::uint64_t seed) {
    RlPolicy policy = RlPolicy::init(cfg.hidden, seed);
    RlPolicy best = policy;
    int best_score = -1;
    double baseline = 0.0;
    bool baseline_init = false;
    double lr = cfg.lr;
    std::uint64_t updates = 0;

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw std::runtime_error("cannot open RL log: " + cfg.log_path);
        log << "episode,return,loss\n";
    }

    std::uint64_t ordinal = 0;
    while (ordinal < static_cast<std::uint64_t>(cfg.episodes)) {
        const int batch =
            static_cast<int>(std::min<std::uint64_t>(cfg.batch_episodes,
                                                     cfg.episodes - ordinal));
        std::vector<EpisodeTrace> traces(batch);
        parallel_ranges(batch, std::max(1, cfg.workers), [&](int lo, int hi) {
            for (int i = lo; i < hi; ++i) {
                const std::uint64_t ep = ordinal + static_cast<std::uint64_t>(i);
                Rng rng(derive_seed(seed, 0xAC7 + ep));
                traces[i] = rollout(policy, make_env(ep), physics, cfg.success_bonus, rng);
            }
        });

        // Discounted returns-to-go; advantages against the running baseline.
        std::vector<std::array<double, 16>> feats;
        std::vector<std::array<std::uint8_t, 3>> actions;
        std::vector<double> advantages;
        double batch_mean_return = 0.0;
        for (const auto& trace : traces) {
            double g = 0.0;
            std::vector<double> returns(trace.rewards.size());
            for (int t = static_cast<int>(trace.rewards.size()) - 1; t >= 0; --t) {
                g = trace.rewards[t] + cfg.discount * g;
                returns[t] = g;
            }
            for (std::size_t t = 0; t < returns.size(); ++t) {
                feats.push_back(trace.features[t]);
                actions.push_back(trace.actions[t]);
                advantages.push_back(returns[t] - (baseline_init ? baseline : 0.0));
            }
            batch_mean_return += trace.episode_return;
        }
        batch_mean_return /= batch;

        if (cfg.normalize_advantages && advantages.size() > 1) {
            double mean = 0.0;
            for (const double a : advantages) mean += a;
            mean /= static_cast<double>(advantages.size());
            double var = 0.0;
            for (const double a : advantages) var += (a - mean) * (a - mean);
            const double stdev = std::sqrt(var / static_cast<double>(advantages.size()));
            for (double& a : advantages) a = (a - mean) / (stdev + 1e-8);
        }

        const int n = static_cast<int>(feats.size());
        Mat x(n, 16);
        for (int r = 0; r < n; ++r)
            std::copy(feats[r].begin(), feats[r].end(), x.row(r));

        learn::Tape tape;
        const auto xin = tape.input(std::move(x));
        const auto w1 = tape.input(policy.w1);
        const auto b1 = tape.input(policy.b1);
        const auto w2 = tape.input(policy.w2);
        const auto b2 = tape.input(policy.b2);
        const auto pre = tape.add_row_broadcast(tape.matmul(xin, w1), b1);
        const auto hidden = tape.tanh_op(pre);
        const auto logits_all = tape.add_row_broadcast(tape.matmul(hidden, w2), b2);
        const auto lf = tape.slice_cols(logits_all, 0, 4);
        const auto ll = tape.slice_cols(logits_all, 4, 3);
        const auto ly = tape.slice_cols(logits_all, 7, 5);
        const auto loss =
            tape.policy_gradient_loss({lf, ll, ly}, actions, advantages, cfg.entropy_bonus);
        const double loss_value = tape.value(loss).v[0];
        if (!std::isfinite(loss_value)) throw DivergedLoss();
        tape.backward(loss);

        const auto apply = [&](Mat& p, const Mat& g) {
            for (std::size_t i = 0; i < p.size(); ++i) p.v[i] -= lr * g.v[i];
        };
        apply(policy.w1, tape.gradient(w1));
        apply(policy.b1, tape.gradient(b1));
        apply(policy.w2, tape.gradient(w2));
        apply(policy.b2, tape.gradient(b2));
        lr *= cfg.lr_decay;

        baseline = baseline_init ? cfg.baseline_ema * baseline +
                                       (1.0 - cfg.baseline_ema) * batch_mean_return
                                 : batch_mean_return;
        baseline_init = true;

        ordinal += batch;
        ++updates;
        if (cfg.snapshot_evals > 0 &&
            (updates % cfg.snapshot_every == 0 ||
             ordinal >= static_cast<std::uint64_t>(cfg.episodes))) {
            const int score = greedy_successes(policy, make_env, physics, cfg, seed);
            if (score > best_score) {
                best_score = score;
                best = policy;
            }
            if (!cfg.quiet)
                std::printf("rl: episode %llu greedy %d/%d (best %d)\n",
                            static_cast<unsigned long long>(ordinal), score,
                            cfg.snapshot_evals, best_score);
        }
        if (log) log << ordinal << "," << batch_mean_return << "," << loss_value << "\n";
    }
    return cfg.snapshot_evals > 0 ? best : policy;
}

}  // namespace tsim::expert
