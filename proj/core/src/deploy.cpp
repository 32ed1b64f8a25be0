#include "tsim/deploy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "tsim/threading.hpp"

namespace tsim::deploy {

LatencySample latency_sample(const LatencyModel& model, Rng& rng) {
    const bool dropped = rng.bernoulli(model.drop_prob);
    const double ms =
        std::max(0.0, rng.uniform(model.base_ms - model.jitter_ms, model.base_ms + model.jitter_ms));
    if (dropped) return Drop{};
    return ms;
}

namespace {

struct PendingRequest {
    bool arrives = false;
    double arrival_s = 0.0;   // sim time when the reply lands
    double timeout_s = 0.0;   // when the client gives up on a dropped request
    double obs_time = 0.0;
    sim::Action action;
};

struct TrialOutcome {
    bool success = false;
    double duration = 0.0;
    int level = 1;
    double min_staleness = std::numeric_limits<double>::infinity();
    double max_staleness = 0.0;
    std::uint64_t applied = 0;
    std::uint64_t issued = 0;
    std::uint64_t dropped = 0;
    bool cache_monotone = true;
    std::vector<DeployTickLog> ticks;
};

}  // namespace

DeployReport simulate_deployment(const DeployConfig& cfg, const eval::PolicyFactory& make_policy,
                                 const std::optional<RemoteEndpoint>& endpoint,
                                 const scenegen::Catalog& catalog,
                                 const scenegen::Lexicon& lexicon,
                                 const sim::PhysicsConfig& physics, const learn::Vocab& vocab,
                                 std::uint64_t seed) {
    std::unique_ptr<eval::CatalogCaptions> provider;
    scenegen::Language lang = scenegen::Language::EN;
    if (cfg.eval.description_set == eval::DescriptionSet::TestSet) {
        auto split =
            eval::split_descriptions(catalog, lexicon, cfg.eval.split_seed, cfg.eval.split_holdout);
        provider = std::make_unique<eval::CatalogCaptions>(std::move(split.test_catalog), lexicon);
    } else if (cfg.eval.description_set == eval::DescriptionSet::Italian) {
        lang = scenegen::Language::IT;
    }

    const render::CameraCfg head_cfg = render::CameraCfg::head();
    const render::CameraCfg back_cfg = render::CameraCfg::back();
    const double dt = physics.dt;

    std::vector<TrialOutcome> results(cfg.trials);
    const auto run_trial = [&](std::uint64_t trial) {
        const std::uint64_t trial_seed = derive_seed(seed, trial);
        eval::TrialSetup setup = eval::make_trial(cfg.eval, catalog, lexicon, physics, vocab,
                                                  provider.get(), lang, trial_seed);
        sim::SimState& state = setup.state;

        std::unique_ptr<eval::Policy> policy;
        std::unique_ptr<Connection> conn;
        if (endpoint) {
            conn = std::make_unique<Connection>(endpoint->host, endpoint->port);
        } else {
            policy = make_policy();
            policy->reset();
        }
        const bool want_obs = endpoint || policy->needs_observation();

        Rng latency_rng(derive_seed(trial_seed, 5));
        ActionCache cache;
        std::optional<PendingRequest> pending;
        TrialOutcome out;
        std::uint8_t context_pos = 0;
        std::uint64_t last_seq = 0;

        for (std::uint64_t k = 0;; ++k) {
            const double t = static_cast<double>(k) * dt;

            // Finalize a dropped request once the client has timed out.
            if (pending && !pending->arrives && t >= pending->timeout_s) pending.reset();

            // 2 Hz control tick: skip when a request is still in flight.
            if (k % static_cast<std::uint64_t>(physics.ticks_per_control) == 0 && !pending) {
                render::Observation obs;
                if (want_obs)
                    obs = render::make_observation(state, setup.tokens, head_cfg, back_cfg);
                sim::Action action;
                if (endpoint) {
                    // Wall-clock latency of the live call is not simulated;
                    // arrival is governed by the injected latency model.
                    const auto r = conn->remote_act(obs, context_pos, 600000);
                    if (std::holds_alternative<TimedOut>(r))
                        throw EndpointUnreachable("live endpoint timed out");
                    action = std::get<sim::Action>(r);
                } else {
                    action = policy->act(state, obs);
                }
                if (context_pos < 255) ++context_pos;
                ++out.issued;
                const LatencySample sample = latency_sample(cfg.latency, latency_rng);
                PendingRequest req;
                req.obs_time = t;
                req.action = action;
                if (std::holds_alternative<Drop>(sample)) {
                    req.arrives = false;
                    req.timeout_s = t + cfg.client_timeout_ms / 1000.0;
                    ++out.dropped;
                } else {
                    req.arrives = true;
                    req.arrival_s = t + std::get<double>(sample) / 1000.0;
                }
                pending = req;
            }

            // Deliver a reply once its arrival time has passed.
            if (pending && pending->arrives && pending->arrival_s <= t) {
                cache.store(pending->action, pending->obs_time);
                pending.reset();
            }

            // 50 Hz low-level tick reads the single-slot cache.
            sim::Action applied = sim::Action::zero();
            if (cache.latest) {
                applied = *cache.latest;
                const double staleness = t - cache.obs_time;
                out.min_staleness = std::min(out.min_staleness, staleness);
                out.max_staleness = std::max(out.max_staleness, staleness);
                ++out.applied;
                if (cache.seq < last_seq) out.cache_monotone = false;
                last_seq = cache.seq;
                if (cfg.log_ticks) out.ticks.push_back({k, cache.seq, staleness});
            } else if (cfg.log_ticks) {
                out.ticks.push_back({k, 0, 0.0});
            }
            sim::step_lowlevel(state, applied, physics);
            state.status = sim::check_termination(state, physics);
            if (state.status != sim::Status::Running) break;
        }
        out.success = state.status == sim::Status::Success;
        out.duration = state.clock;
        out.level = setup.task.caption_level;
        if (out.applied == 0) out.min_staleness = 0.0;
        results[trial] = std::move(out);
    };

    parallel_ranges(static_cast<int>(cfg.trials), std::max(1, cfg.eval.workers),
                    [&](int lo, int hi) {
                        for (int t = lo; t < hi; ++t) run_trial(static_cast<std::uint64_t>(t));
                    });

    DeployReport report;
    report.eval.trials = cfg.trials;
    report.min_staleness_s = std::numeric_limits<double>::infinity();
    double total_duration = 0.0;
    for (auto& r : results) {
        total_duration += r.duration;
        report.eval.level_trials[r.level - 1] += 1;
        if (r.success) {
            ++report.eval.successes;
            report.eval.level_successes[r.level - 1] += 1;
            report.eval.time_to_success.push_back(r.duration);
        }
        if (r.applied > 0) report.min_staleness_s = std::min(report.min_staleness_s, r.min_staleness);
        report.max_staleness_s = std::max(report.max_staleness_s, r.max_staleness);
        report.applied_actions += r.applied;
        report.issued_requests += r.issued;
        report.dropped_requests += r.dropped;
        report.cache_monotone = report.cache_monotone && r.cache_monotone;
        if (cfg.log_ticks)
            report.ticks.insert(report.ticks.end(), r.ticks.begin(), r.ticks.end());
    }
    if (report.applied_actions == 0) report.min_staleness_s = 0.0;
    report.eval.success_rate = static_cast<double>(report.eval.successes) / cfg.trials;
    report.eval.stderr_value = eval::standard_error(report.eval.success_rate, cfg.trials);
    report.eval.mean_duration = total_duration / cfg.trials;
    return report;
}

DeployReport run_realtime_deployment(const DeployConfig& cfg, const RemoteEndpoint& endpoint,
                                     const scenegen::Catalog& catalog,
                                     const scenegen::Lexicon& lexicon,
                                     const sim::PhysicsConfig& physics,
                                     const learn::Vocab& vocab, std::uint64_t seed) {
    const render::CameraCfg head_cfg = render::CameraCfg::head();
    const render::CameraCfg back_cfg = render::CameraCfg::back();
    const auto tick_len = std::chrono::duration<double>(physics.dt);

    DeployReport report;
    report.eval.trials = cfg.trials;
    report.min_staleness_s = std::numeric_limits<double>::infinity();
    double total_duration = 0.0;

    for (std::uint64_t trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t trial_seed = derive_seed(seed, trial);
        eval::TrialSetup setup = eval::make_trial(cfg.eval, catalog, lexicon, physics, vocab,
                                                  nullptr, scenegen::Language::EN, trial_seed);
        sim::SimState& state = setup.state;
        Connection conn(endpoint.host, endpoint.port);
        ActionCache cache;
        std::uint8_t context_pos = 0;
        std::uint64_t last_seq = 0;
        auto wall = std::chrono::steady_clock::now();

        for (std::uint64_t k = 0;; ++k) {
            const double t = static_cast<double>(k) * physics.dt;
            if (k % static_cast<std::uint64_t>(physics.ticks_per_control) == 0) {
                const auto obs =
                    render::make_observation(state, setup.tokens, head_cfg, back_cfg);
                const auto r = conn.remote_act(obs, context_pos, cfg.client_timeout_ms);
                ++report.issued_requests;
                if (context_pos < 255) ++context_pos;
                if (std::holds_alternative<sim::Action>(r)) {
                    cache.store(std::get<sim::Action>(r), t);
                } else {
                    ++report.dropped_requests;
                }
            }
            sim::Action applied = sim::Action::zero();
            if (cache.latest) {
                applied = *cache.latest;
                const double staleness = t - cache.obs_time;
                report.min_staleness_s = std::min(report.min_staleness_s, staleness);
                report.max_staleness_s = std::max(report.max_staleness_s, staleness);
                ++report.applied_actions;
                if (cache.seq < last_seq) report.cache_monotone = false;
                last_seq = cache.seq;
            }
            sim::step_lowlevel(state, applied, physics);
            state.status = sim::check_termination(state, physics);
            if (state.status != sim::Status::Running) break;
            wall += std::chrono::duration_cast<std::chrono::steady_clock::duration>(tick_len);
            std::this_thread::sleep_until(wall);
        }
        total_duration += state.clock;
        report.eval.level_trials[setup.task.caption_level - 1] += 1;
        if (state.status == sim::Status::Success) {
            ++report.eval.successes;
            report.eval.level_successes[setup.task.caption_level - 1] += 1;
            report.eval.time_to_success.push_back(state.clock);
        }
    }
    if (report.applied_actions == 0) report.min_staleness_s = 0.0;
    report.eval.success_rate = static_cast<double>(report.eval.successes) / cfg.trials;
    report.eval.stderr_value = eval::standard_error(report.eval.success_rate, cfg.trials);
    report.eval.mean_duration = total_duration / cfg.trials;
    return report;
}

}  // namespace tsim::deploy
