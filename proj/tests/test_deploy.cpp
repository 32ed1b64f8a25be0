#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <thread>

#include "tsim/deploy.hpp"

using namespace tsim;
using namespace tsim::deploy;

namespace {

render::Observation small_obs(std::uint64_t seed) {
    Rng rng(seed);
    render::Observation obs;
    obs.head = render::Image(16, 16);
    obs.back = render::Image(16, 16);
    for (auto& x : obs.head.rgb) x = static_cast<std::uint8_t>(rng.uniform_below(256));
    for (auto& x : obs.back.rgb) x = static_cast<std::uint8_t>(rng.uniform_below(256));
    obs.tokens = {2, 7, 1};
    return obs;
}

scenegen::Catalog the_catalog() {
    return scenegen::load_asset_catalog(TSIM_ASSETS_DIR "/catalog_default.json");
}
scenegen::Lexicon the_lexicon() {
    return scenegen::load_lexicon(TSIM_ASSETS_DIR "/lexicon_en_it.json");
}
learn::Vocab the_vocab() {
    std::vector<std::string> corpus{"sofa", "a red fabric sofa"};
    return learn::build_vocab(corpus);
}

}  // namespace

TEST_CASE("wire protocol round trips") {
    SUBCASE("observation frames") {
        const auto obs = small_obs(4);
        Frame f;
        f.type = FrameType::Obs;
        f.request_id = 42;
        f.payload = encode_obs_payload(obs, 3);
        auto bytes = encode_frame(f);
        std::vector<std::uint8_t> buf(bytes);
        const auto decoded = try_decode_frame(buf);
        REQUIRE(decoded);
        CHECK(buf.empty());
        CHECK(decoded->type == FrameType::Obs);
        CHECK(decoded->request_id == 42);
        const auto payload = decode_obs_payload(decoded->payload);
        CHECK(payload.obs == obs);
        CHECK(payload.context_pos == 3);
    }
    SUBCASE("action and error frames") {
        const sim::Action a{3, 0, 4};
        CHECK(decode_act_payload(encode_act_payload(a)) == a);
        CHECK(decode_err_payload(encode_err_payload("boom")) == "boom");
    }
    SUBCASE("partial frames wait for more bytes") {
        Frame f;
        f.type = FrameType::Act;
        f.request_id = 7;
        f.payload = encode_act_payload(sim::Action::zero());
        const auto bytes = encode_frame(f);
        std::vector<std::uint8_t> buf(bytes.begin(), bytes.begin() + 6);
        CHECK(!try_decode_frame(buf));
        buf.insert(buf.end(), bytes.begin() + 6, bytes.end());
        CHECK(try_decode_frame(buf));
    }
    SUBCASE("malformed frames throw") {
        std::vector<std::uint8_t> bad{0, 0, 0, 6, 9, 0, 0, 0, 1, 0};  // type 9
        CHECK_THROWS_AS(try_decode_frame(bad), ProtocolError);
        CHECK_THROWS_AS(decode_act_payload({9, 9, 9}), ProtocolError);
        CHECK_THROWS_AS(decode_act_payload({1, 1}), ProtocolError);
    }
    SUBCASE("frames survive arbitrary chunking") {
        Rng rng(8);
        std::vector<std::uint8_t> stream;
        std::vector<Frame> sent;
        for (int i = 0; i < 20; ++i) {
            Frame f;
            f.type = FrameType::Act;
            f.request_id = static_cast<std::uint32_t>(i);
            f.payload = encode_act_payload({static_cast<std::uint8_t>(rng.uniform_below(4)),
                                            static_cast<std::uint8_t>(rng.uniform_below(3)),
                                            static_cast<std::uint8_t>(rng.uniform_below(5))});
            const auto bytes = encode_frame(f);
            stream.insert(stream.end(), bytes.begin(), bytes.end());
            sent.push_back(std::move(f));
        }
        std::vector<std::uint8_t> buf;
        std::size_t consumed = 0;
        std::vector<Frame> got;
        while (consumed < stream.size() || !buf.empty()) {
            if (consumed < stream.size()) {
                const std::size_t n =
                    std::min<std::size_t>(1 + rng.uniform_below(13), stream.size() - consumed);
                buf.insert(buf.end(), stream.begin() + consumed, stream.begin() + consumed + n);
                consumed += n;
            }
            while (auto f = try_decode_frame(buf)) got.push_back(std::move(*f));
            if (consumed >= stream.size() && buf.empty()) break;
        }
        REQUIRE(got.size() == sent.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].request_id == sent[i].request_id);
            CHECK(got[i].payload == sent[i].payload);
        }
    }
}

TEST_CASE("latency sampling") {
    Rng rng(12);
    SUBCASE("zero jitter returns the base exactly") {
        const LatencyModel m{250.0, 0.0, 0.0};
        for (int i = 0; i < 100; ++i) {
            const auto s = latency_sample(m, rng);
            REQUIRE(std::holds_alternative<double>(s));
            CHECK(std::get<double>(s) == 250.0);
        }
    }
    SUBCASE("samples stay within the jitter window") {
        const LatencyModel m{100.0, 30.0, 0.0};
        for (int i = 0; i < 10000; ++i) {
            const auto s = latency_sample(m, rng);
            const double v = std::get<double>(s);
            CHECK(v >= 70.0);
            CHECK(v <= 130.0);
        }
    }
    SUBCASE("the empirical mean approaches the base") {
        const LatencyModel m{200.0, 50.0, 0.0};
        double total = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) total += std::get<double>(latency_sample(m, rng));
        CHECK(std::abs(total / n - 200.0) < 2.0);  // 1% of base
    }
    SUBCASE("drop probability one always drops") {
        const LatencyModel m{10.0, 0.0, 1.0};
        for (int i = 0; i < 50; ++i)
            CHECK(std::holds_alternative<Drop>(latency_sample(m, rng)));
    }
}

TEST_CASE("policy server answers over a live socket") {
    learn::ModelConfig cfg;
    cfg.image_w = 16;
    cfg.image_h = 16;
    cfg.patch = 8;
    cfg.patch_dim = 4;
    cfg.d_model = 16;
    cfg.caption_dim = 8;
    cfg.vocab_size = 16;
    const auto params = learn::PolicyParams::init(cfg, 5);
    PolicyServer server(params, "127.0.0.1", 0);
    REQUIRE(server.port() > 0);

    SUBCASE("well-formed observations get actions with matching request ids") {
        Connection conn("127.0.0.1", server.port());
        const auto r1 = conn.remote_act(small_obs(1), 0, 2000);
        REQUIRE(std::holds_alternative<sim::Action>(r1));
        const auto r2 = conn.remote_act(small_obs(2), 1, 2000);
        REQUIRE(std::holds_alternative<sim::Action>(r2));
    }
    SUBCASE("sequential requests return in order and deterministically") {
        Connection a("127.0.0.1", server.port());
        Connection b("127.0.0.1", server.port());
        for (int i = 0; i < 5; ++i) {
            const auto ra = a.remote_act(small_obs(100 + i), static_cast<std::uint8_t>(i), 2000);
            const auto rb = b.remote_act(small_obs(100 + i), static_cast<std::uint8_t>(i), 2000);
            REQUIRE(std::holds_alternative<sim::Action>(ra));
            REQUIRE(std::holds_alternative<sim::Action>(rb));
            CHECK(std::get<sim::Action>(ra) == std::get<sim::Action>(rb));
        }
    }
    SUBCASE("a malformed frame earns an error frame and a closed connection") {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(server.port()));
        ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
        REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
        const std::uint8_t junk[9] = {0, 0, 0, 5, 9, 0, 0, 0, 1};  // bad frame type
        ::send(fd, junk, sizeof(junk), 0);
        std::vector<std::uint8_t> buf(4096);
        std::size_t got = 0;
        for (;;) {
            const ssize_t rc = ::recv(fd, buf.data() + got, buf.size() - got, 0);
            if (rc <= 0) break;
            got += static_cast<std::size_t>(rc);
        }
        ::close(fd);
        REQUIRE(got > 0);
        std::vector<std::uint8_t> stream(buf.begin(), buf.begin() + got);
        const auto frame = try_decode_frame(stream);
        REQUIRE(frame);
        CHECK(frame->type == FrameType::Err);
    }
    server.stop();
}

TEST_CASE("stale replies are discarded by request id") {
    // Mock server: delays the first reply beyond the client timeout, then
    // answers the second request immediately after the stale first reply.
    const int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = 0;
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    REQUIRE(::listen(listen_fd, 1) == 0);

    std::thread mock([listen_fd] {
        const int fd = ::accept(listen_fd, nullptr, nullptr);
        REQUIRE(fd >= 0);
        std::vector<std::uint8_t> buf;
        int replies_sent = 0;
        std::uint32_t first_id = 0;
        while (replies_sent < 2) {
            std::uint8_t tmp[65536];
            const ssize_t rc = ::recv(fd, tmp, sizeof(tmp), 0);
            if (rc <= 0) break;
            buf.insert(buf.end(), tmp, tmp + rc);
            while (auto frame = try_decode_frame(buf)) {
                if (replies_sent == 0) {
                    // Hold the first reply until after the client times out.
                    first_id = frame->request_id;
                    std::this_thread::sleep_for(std::chrono::milliseconds(250));
                    Frame stale;
                    stale.type = FrameType::Act;
                    stale.request_id = first_id;
                    stale.payload = encode_act_payload({0, 0, 0});
                    const auto bytes = encode_frame(stale);
                    ::send(fd, bytes.data(), bytes.size(), 0);
                    ++replies_sent;
                } else {
                    Frame fresh;
                    fresh.type = FrameType::Act;
                    fresh.request_id = frame->request_id;
                    fresh.payload = encode_act_payload({3, 2, 4});
                    const auto bytes = encode_frame(fresh);
                    ::send(fd, bytes.data(), bytes.size(), 0);
                    ++replies_sent;
                }
            }
        }
        ::close(fd);
    });

    Connection conn("127.0.0.1", port);
    const auto first = conn.remote_act(small_obs(1), 0, 60);
    CHECK(std::holds_alternative<TimedOut>(first));
    // The stale reply for request 1 arrives during the second call and must
    // be skipped in favor of the reply for request 2.
    const auto second = conn.remote_act(small_obs(2), 1, 2000);
    REQUIRE(std::holds_alternative<sim::Action>(second));
    CHECK(std::get<sim::Action>(second) == sim::Action{3, 2, 4});
    mock.join();
    ::close(listen_fd);
}

TEST_CASE("deployment co-simulation") {
    const auto catalog = the_catalog();
    const auto lexicon = the_lexicon();
    const auto vocab = the_vocab();
    sim::PhysicsConfig physics;
    const eval::PolicyFactory scripted = [] {
        return std::make_unique<eval::ScriptedPolicy>();
    };

    SUBCASE("zero latency matches in-process evaluation within two points") {
        DeployConfig dc;
        dc.latency = {0.0, 0.0, 0.0};
        dc.trials = 30;
        dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
        dc.eval.trials = 30;
        dc.eval.workers = 2;
        const auto deploy_report = simulate_deployment(dc, scripted, std::nullopt, catalog,
                                                       lexicon, physics, vocab, 4242);
        eval::EvalConfig ec = dc.eval;
        const auto eval_report =
            eval::run_eval(ec, scripted, catalog, lexicon, physics, vocab, 4242);
        CHECK(std::abs(deploy_report.eval.success_rate - eval_report.success_rate) <= 0.02 + 1e-9);
    }
    SUBCASE("the zero action runs until the first reply arrives") {
        DeployConfig dc;
        dc.latency = {400.0, 0.0, 0.0};
        dc.trials = 2;
        dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
        dc.log_ticks = true;
        const auto report = simulate_deployment(dc, scripted, std::nullopt, catalog, lexicon,
                                                physics, vocab, 77);
        // Ticks 0..19 of each trial precede the 400 ms arrival: cache empty.
        int leading_empty = 0;
        for (const auto& t : report.ticks) {
            if (t.tick == 0) leading_empty = 0;
            if (t.tick < 20) {
                CHECK(t.seq == 0);
                ++leading_empty;
            }
        }
        CHECK(leading_empty > 0);
    }
    SUBCASE("applied actions under 400 ms base latency are at least that stale") {
        DeployConfig dc;
        dc.latency = {400.0, 0.0, 0.0};
        dc.trials = 5;
        dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
        dc.eval.workers = 2;
        const auto report = simulate_deployment(dc, scripted, std::nullopt, catalog, lexicon,
                                                physics, vocab, 99);
        CHECK(report.applied_actions > 0);
        CHECK(report.min_staleness_s >= 0.4 - 1e-9);
        CHECK(report.cache_monotone);
    }
    SUBCASE("dropping every request leaves only the zero action") {
        DeployConfig dc;
        dc.latency = {10.0, 0.0, 1.0};
        dc.trials = 3;
        dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
        const auto report = simulate_deployment(dc, scripted, std::nullopt, catalog, lexicon,
                                                physics, vocab, 5);
        CHECK(report.eval.success_rate == 0.0);
        CHECK(report.applied_actions == 0);
        CHECK(report.dropped_requests == report.issued_requests);
    }
    SUBCASE("jittered latency keeps the cache sequence monotone") {
        DeployConfig dc;
        dc.latency = {150.0, 120.0, 0.1};
        dc.trials = 8;
        dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
        dc.eval.workers = 2;
        const auto report = simulate_deployment(dc, scripted, std::nullopt, catalog, lexicon,
                                                physics, vocab, 6);
        CHECK(report.cache_monotone);
        CHECK(report.issued_requests > 0);
    }
}

TEST_CASE("deployment against a live endpoint") {
    learn::ModelConfig cfg;
    cfg.image_w = 64;
    cfg.image_h = 64;
    cfg.vocab_size = 64;
    const auto params = learn::PolicyParams::init(cfg, 5);
    PolicyServer server(params, "127.0.0.1", 0);

    const auto catalog = the_catalog();
    const auto lexicon = the_lexicon();
    const auto vocab = the_vocab();
    sim::PhysicsConfig physics;

    DeployConfig dc;
    dc.latency = {50.0, 0.0, 0.0};
    dc.trials = 1;
    dc.eval.recipe = scenegen::PlacementRecipe::reduced_recipe();
    const auto report = simulate_deployment(dc, {}, RemoteEndpoint{"127.0.0.1", server.port()},
                                            catalog, lexicon, physics, vocab, 9);
    CHECK(report.issued_requests > 0);
    CHECK(report.cache_monotone);

    // The synchronous remote adapter drives run_eval over the same server.
    eval::EvalConfig ec;
    ec.recipe = scenegen::PlacementRecipe::reduced_recipe();
    ec.trials = 1;
    const int port = server.port();
    const auto remote_report = eval::run_eval(
        ec, [port] { return std::make_unique<RemoteEvalPolicy>("127.0.0.1", port); }, catalog,
        lexicon, physics, vocab, 10);
    CHECK(remote_report.trials == 1);
    server.stop();

    CHECK_THROWS_AS(
        simulate_deployment(dc, {}, RemoteEndpoint{"127.0.0.1", 1}, catalog, lexicon, physics,
                            vocab, 9),
        EndpointUnreachable);
}
