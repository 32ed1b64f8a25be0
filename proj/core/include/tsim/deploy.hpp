#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "tsim/evaluate.hpp"
#include "tsim/protocol.hpp"

namespace tsim::deploy {

// ---- latency injection -------------------------------------------------------

struct LatencyModel {
    double base_ms = 0.0;
    double jitter_ms = 0.0;   // uniform half-width
    double drop_prob = 0.0;   // request lost; the client times out
};

struct Drop {};
using LatencySample = std::variant<double, Drop>;  // milliseconds or lost

LatencySample latency_sample(const LatencyModel& model, Rng& rng);

// Single-slot cache of the most recent policy reply. The 50 Hz loop reads it
// without ever blocking on the network.
struct ActionCache {
    std::optional<sim::Action> latest;
    double obs_time = 0.0;    // sim time of the observation behind the action
    std::uint64_t seq = 0;    // per-reply sequence number

    void store(const sim::Action& action, double observed_at) {
        latest = action;
        obs_time = observed_at;
        ++seq;
    }
};

// ---- live transport ------------------------------------------------------------

struct ConnectionLost : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BindError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EndpointUnreachable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimedOut {};

// Client side of the wire protocol; one request in flight at a time.
class Connection {
public:
    Connection(const std::string& host, int port);
    ~Connection();
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    // Sends the observation, waits up to timeout_ms. Stale replies from a
    // previously timed-out request are discarded by request id.
    std::variant<sim::Action, TimedOut> remote_act(const render::Observation& obs,
                                                   std::uint8_t context_pos, int timeout_ms);

private:
    int fd_ = -1;
    std::uint32_t next_request_ = 1;
    std::uint32_t expected_reply_ = 0;
    std::vector<std::uint8_t> recv_buf_;
};

// Policy server: accepts connections, answers OBS frames with ACT frames in
// request order, keeps a per-connection context window of 8 observations.
class PolicyServer {
public:
    PolicyServer(learn::PolicyParams params, const std::string& bind_addr, int port);
    ~PolicyServer();

    int port() const { return port_; }
    void stop();

private:
    void accept_loop();
    void serve_connection(int fd);

    learn::PolicyParams params_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::vector<std::thread> conn_threads_;
    std::mutex conn_mu_;
};

// ---- deployment co-simulation ----------------------------------------------------

struct DeployConfig {
    LatencyModel latency;
    std::uint64_t trials = 10;
    int client_timeout_ms = 450;
    eval::EvalConfig eval;  // scene source, description set, workers
    bool log_ticks = false; // keep per-tick staleness samples
};

struct DeployTickLog {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;       // cache sequence at read time, 0 = empty
    double staleness_s = 0.0;    // tick time minus observation time
};

struct DeployReport {
    eval::EvalReport eval;
    double min_staleness_s = 0.0;  // over all applied non-default actions
    double max_staleness_s = 0.0;
    std::uint64_t applied_actions = 0;
    std::uint64_t issued_requests = 0;
    std::uint64_t dropped_requests = 0;
    bool cache_monotone = true;    // per-reply sequence numbers never regressed
    std::vector<DeployTickLog> ticks;  // populated when log_ticks is set
};

// Remote policy hook for simulate_deployment: when `endpoint` is set the
// request is served over a live connection, otherwise by the in-process
// policy. Either way arrival time is governed by the latency model, keeping
// runs deterministic.
struct RemoteEndpoint {
    std::string host;
    int port = 0;
};

DeployReport simulate_deployment(const DeployConfig& cfg, const eval::PolicyFactory& make_policy,
                                 const std::optional<RemoteEndpoint>& endpoint,
                                 const scenegen::Catalog& catalog,
                                 const scenegen::Lexicon& lexicon,
                                 const sim::PhysicsConfig& physics, const learn::Vocab& vocab,
                                 std::uint64_t seed);

// Synchronous remote policy for run_eval: one blocking request per control
// step over a dedicated connection, no latency injection.
class RemoteEvalPolicy final : public eval::Policy {
public:
    RemoteEvalPolicy(const std::string& host, int port, int timeout_ms = 600000)
        : conn_(host, port), timeout_ms_(timeout_ms) {}
    void reset() override { context_pos_ = 0; }
    sim::Action act(const sim::SimState&, const render::Observation& obs) override {
        const auto r = conn_.remote_act(obs, context_pos_, timeout_ms_);
        if (context_pos_ < 255) ++context_pos_;
        if (std::holds_alternative<TimedOut>(r))
            throw EndpointUnreachable("remote policy timed out");
        return std::get<sim::Action>(r);
    }

private:
    Connection conn_;
    int timeout_ms_;
    std::uint8_t context_pos_ = 0;
};

// Wall-clock paced variant against a live server: the 2 Hz client issues real
// requests, the 50 Hz loop consumes the cache, and network time is whatever
// the wire delivers (latency injection does not apply). Not deterministic.
DeployReport run_realtime_deployment(const DeployConfig& cfg, const RemoteEndpoint& endpoint,
                                     const scenegen::Catalog& catalog,
                                     const scenegen::Lexicon& lexicon,
                                     const sim::PhysicsConfig& physics,
                                     const learn::Vocab& vocab, std::uint64_t seed);

}  // namespace tsim::deploy
