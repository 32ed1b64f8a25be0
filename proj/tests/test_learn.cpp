#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "tsim/model.hpp"
#include "tsim/rng.hpp"
#include "tsim/train.hpp"

using namespace tsim;
using namespace tsim::learn;

namespace {

// Small model dims keep the gradient checks quick; the code path is the
// production one.
ModelConfig tiny_config(int vocab = 12) {
    ModelConfig cfg;
    cfg.image_w = 16;
    cfg.image_h = 16;
    cfg.patch = 8;
    cfg.patch_dim = 6;
    cfg.d_model = 24;
    cfg.caption_dim = 8;
    cfg.context = 8;
    cfg.vocab_size = vocab;
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, int n_traj, std::uint64_t seed,
                   int left_pad = 0) {
    Rng rng(seed);
    Batch b;
    b.n_traj = n_traj;
    b.steps = cfg.context;
    b.images.resize(static_cast<std::size_t>(n_traj) * cfg.context * cfg.step_bytes());
    for (auto& x : b.images) x = static_cast<std::uint8_t>(rng.uniform_below(256));
    for (int i = 0; i < n_traj; ++i) {
        std::vector<std::uint16_t> toks;
        const int len = 1 + static_cast<int>(rng.uniform_below(5));
        for (int t = 0; t < len; ++t)
            toks.push_back(static_cast<std::uint16_t>(rng.uniform_below(cfg.vocab_size)));
        b.tokens.push_back(std::move(toks));
    }
    for (int i = 0; i < n_traj * cfg.context; ++i)
        b.actions.push_back({static_cast<std::uint8_t>(rng.uniform_below(4)),
                             static_cast<std::uint8_t>(rng.uniform_below(3)),
                             static_cast<std::uint8_t>(rng.uniform_below(5))});
    b.padded.assign(static_cast<std::size_t>(n_traj) * cfg.context, 0);
    for (int i = 0; i < n_traj; ++i)
        for (int s = 0; s < left_pad; ++s) b.padded[i * cfg.context + s] = 1;
    return b;
}

}  // namespace

TEST_CASE("vocabulary") {
    SUBCASE("sorted assignment after the reserved ids") {
        const Vocab v = build_vocab({"a red sofa"});
        CHECK(v.size() == 5);
        CHECK(v.id("a") == 2);
        CHECK(v.id("red") == 3);
        CHECK(v.id("sofa") == 4);
    }
    SUBCASE("duplicates collapse") {
        const Vocab v = build_vocab({"sofa", "sofa"});
        CHECK(v.words.size() == 1);
    }
    SUBCASE("unseen words tokenize to UNK") {
        const Vocab v = build_vocab({"a red sofa"});
        const auto toks = tokenize("a blue sofa", v);
        CHECK(toks == std::vector<std::uint16_t>{2, Vocab::kUnk, 4});
    }
    SUBCASE("punctuation splits and case folds") {
        const Vocab v = build_vocab({"A Red, sofa."});
        CHECK(v.id("red") == 3);
        CHECK(tokenize("RED sofa", v) == std::vector<std::uint16_t>{3, 4});
    }
    SUBCASE("utf-8 accents survive tokenization") {
        const Vocab v = build_vocab({"più grande"});
        CHECK(v.id("più") >= 2);
        CHECK(tokenize("più", v)[0] == v.id("più"));
    }
    SUBCASE("empty corpus is rejected") {
        CHECK_THROWS_AS(build_vocab({}), EmptyCorpus);
    }
    SUBCASE("vocab round trip and stable hash") {
        const Vocab v = build_vocab({"a red sofa", "un divano rosso"});
        const auto path = std::filesystem::temp_directory_path() / "tsim_vocab_test.json";
        save_vocab(v, path.string());
        const Vocab l = load_vocab(path.string());
        CHECK(l.words == v.words);
        CHECK(l.hash() == v.hash());
        std::filesystem::remove(path);
    }
}

TEST_CASE("forward pass structure") {
    const ModelConfig cfg = tiny_config();
    const PolicyParams params = PolicyParams::init(cfg, 9);

    SUBCASE("causality: disturbing future steps leaves earlier logits unchanged") {
        Batch b = random_batch(cfg, 2, 100);
        const Mat before = forward_logits(params, b);
        // Scramble the last three steps of every trajectory.
        Rng rng(5);
        for (int i = 0; i < b.n_traj; ++i)
            for (int s = cfg.context - 3; s < cfg.context; ++s) {
                std::uint8_t* img = b.images.data() +
                                    (static_cast<std::size_t>(i) * cfg.context + s) *
                                        cfg.step_bytes();
                for (std::size_t k = 0; k < cfg.step_bytes(); ++k)
                    img[k] = static_cast<std::uint8_t>(rng.uniform_below(256));
            }
        const Mat after = forward_logits(params, b);
        for (int i = 0; i < b.n_traj; ++i)
            for (int s = 0; s < cfg.context - 3; ++s) {
                const int row = i * cfg.context + s;
                for (int c = 0; c < before.cols; ++c)
                    CHECK(before.at(row, c) == after.at(row, c));
            }
    }
    SUBCASE("zero parameters give all-zero logits and the uniform loss") {
        const PolicyParams zeros = PolicyParams::zeros(cfg);
        const Batch b = random_batch(cfg, 2, 101);
        const Mat logits = forward_logits(zeros, b);
        for (const double v : logits.v) CHECK(v == 0.0);
        const double loss = loss_from_logits(logits, b.actions, b.padded);
        const double uniform =
            (std::log(4.0) + std::log(3.0) + std::log(5.0)) / 3.0;
        CHECK(loss == doctest::Approx(uniform).epsilon(1e-12));
    }
    SUBCASE("a right-padded batch reproduces the single-step logits at step one") {
        Batch full = random_batch(cfg, 1, 102);
        // Mark steps 1.. as padding and zero their images.
        for (int s = 1; s < cfg.context; ++s) {
            full.padded[s] = 1;
            std::uint8_t* img =
                full.images.data() + static_cast<std::size_t>(s) * cfg.step_bytes();
            std::fill(img, img + cfg.step_bytes(), std::uint8_t{0});
        }
        const Mat wide = forward_logits(params, full);
        const double* first = wide.row(0);
        // Same step alone in a context-1 model.
        ModelConfig one = cfg;
        one.context = 1;
        PolicyParams pone = params;
        pone.cfg = one;
        Batch single;
        single.n_traj = 1;
        single.steps = 1;
        single.images.assign(full.images.begin(), full.images.begin() + cfg.step_bytes());
        single.tokens = full.tokens;
        single.actions = {full.actions[0]};
        single.padded = {0};
        const Mat narrow = forward_logits(pone, single);
        for (int c = 0; c < narrow.cols; ++c)
            CHECK(first[c] == doctest::Approx(narrow.at(0, c)).epsilon(1e-12));
    }
}

TEST_CASE("loss") {
    const ModelConfig cfg = tiny_config();
    SUBCASE("probability one on the true bins drives the loss to zero") {
        Batch b = random_batch(cfg, 1, 103);
        Mat logits(cfg.context, 12);
        for (int r = 0; r < cfg.context; ++r) {
            logits.at(r, b.actions[r][0]) = 200.0;
            logits.at(r, 4 + b.actions[r][1]) = 200.0;
            logits.at(r, 7 + b.actions[r][2]) = 200.0;
        }
        CHECK(loss_from_logits(logits, b.actions, b.padded) == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("a fully masked batch is rejected") {
        Batch b = random_batch(cfg, 1, 104, /*left_pad=*/cfg.context);
        const Mat logits(cfg.context, 12);
        CHECK_THROWS_AS(loss_from_logits(logits, b.actions, b.padded), AllMasked);
        CHECK_THROWS_AS(grad(PolicyParams::init(cfg, 1), b), AllMasked);
    }
    SUBCASE("tape loss equals the standalone loss") {
        const PolicyParams params = PolicyParams::init(cfg, 19);
        const Batch b = random_batch(cfg, 3, 105, /*left_pad=*/2);
        const Mat logits = forward_logits(params, b);
        const double standalone = loss_from_logits(logits, b.actions, b.padded);
        const Gradients g = grad(params, b);
        CHECK(g.loss == doctest::Approx(standalone).epsilon(1e-12));
    }
}

TEST_CASE("gradients match central finite differences") {
    const ModelConfig cfg = tiny_config();
    const double eps = 1e-4;
    double max_rel = 0.0;
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        PolicyParams params = PolicyParams::init(cfg, 200 + seed);
        const Batch b = random_batch(cfg, 2, 300 + seed, /*left_pad=*/1);
        const Gradients g = grad(params, b);

        std::array<Mat*, 17> tensors{};
        std::array<const Mat*, 17> grads{};
        int i = 0;
        params.for_each([&](const char*, Mat& m) { tensors[i++] = &m; });
        i = 0;
        g.tensors.for_each([&](const char*, const Mat& m) { grads[i++] = &m; });

        Rng rng(400 + seed);
        for (int probe = 0; probe < 24; ++probe) {
            const int t = static_cast<int>(rng.uniform_below(17));
            const std::size_t j = rng.uniform_below(tensors[t]->size());
            const double saved = tensors[t]->v[j];
            tensors[t]->v[j] = saved + eps;
            const double up = loss_from_logits(forward_logits(params, b), b.actions, b.padded);
            tensors[t]->v[j] = saved - eps;
            const double down = loss_from_logits(forward_logits(params, b), b.actions, b.padded);
            tensors[t]->v[j] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double an = grads[t]->v[j];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    CHECK(max_rel <= 1e-4);
}

TEST_CASE("gradient accumulation is linear across microbatches") {
    const ModelConfig cfg = tiny_config();
    const PolicyParams params = PolicyParams::init(cfg, 77);
    const Batch a = random_batch(cfg, 2, 501);
    const Batch b = random_batch(cfg, 2, 502);
    const Gradients ga = grad(params, a);
    const Gradients gb = grad(params, b);

    // Summed loss on one tape: grads must add exactly.
    Tape tape;
    std::array<Tape::Id, 17> ids_a{}, ids_b{};
    const auto fa = forward_on_tape(tape, params, a, &ids_a);
    const auto la = tape.action_cross_entropy({fa.logits_fwd, fa.logits_lat, fa.logits_yaw},
                                              a.actions, a.padded);
    const auto fb = forward_on_tape(tape, params, b, &ids_b);
    const auto lb = tape.action_cross_entropy({fb.logits_fwd, fb.logits_lat, fb.logits_yaw},
                                              b.actions, b.padded);
    const auto sum = tape.add(la, lb);
    tape.backward(sum);

    std::array<const Mat*, 17> ga_t{}, gb_t{};
    int i = 0;
    ga.tensors.for_each([&](const char*, const Mat& m) { ga_t[i++] = &m; });
    i = 0;
    gb.tensors.for_each([&](const char*, const Mat& m) { gb_t[i++] = &m; });
    for (int t = 0; t < 17; ++t) {
        const Mat& combined_a = tape.gradient(ids_a[t]);
        const Mat& combined_b = tape.gradient(ids_b[t]);
        for (std::size_t j = 0; j < combined_a.size(); ++j) {
            const double combined = combined_a.v[j] + combined_b.v[j];
            const double separate = ga_t[t]->v[j] + gb_t[t]->v[j];
            CHECK(combined == doctest::Approx(separate).epsilon(1e-12));
        }
    }
}

TEST_CASE("student decoding") {
    const ModelConfig cfg = tiny_config();

    SUBCASE("zero parameters decode to the zero action via the tie break") {
        const PolicyParams zeros = PolicyParams::zeros(cfg);
        render::Observation obs;
        obs.head = render::Image(cfg.image_w, cfg.image_h);
        obs.back = render::Image(cfg.image_w, cfg.image_h);
        obs.tokens = {2, 3};
        std::deque<render::Observation> ctx{obs};
        CHECK(student_act(zeros, ctx) == sim::Action::zero());
    }
    SUBCASE("argmax is invariant to constant logit shifts") {
        const double f[4] = {0.1, 0.9, 0.3, 0.2};
        const double l[3] = {0.5, 0.1, 0.2};
        const double y[5] = {0.0, 0.2, 0.9, 0.1, 0.3};
        const auto base = argmax_action(f, l, y);
        double f2[4], l2[3], y2[5];
        for (int i = 0; i < 4; ++i) f2[i] = f[i] + 7.5;
        for (int i = 0; i < 3; ++i) l2[i] = l[i] + 7.5;
        for (int i = 0; i < 5; ++i) y2[i] = y[i] + 7.5;
        CHECK(argmax_action(f2, l2, y2) == base);
    }
    SUBCASE("the incremental rollout matches student_act bit for bit") {
        const PolicyParams params = PolicyParams::init(cfg, 55);
        Rng rng(600);
        StudentRollout rollout(params);
        rollout.reset();
        std::deque<render::Observation> ctx;
        std::vector<std::uint16_t> tokens{4, 5, 6};
        for (int step = 0; step < 12; ++step) {
            render::Observation obs;
            obs.head = render::Image(cfg.image_w, cfg.image_h);
            obs.back = render::Image(cfg.image_w, cfg.image_h);
            for (auto& x : obs.head.rgb) x = static_cast<std::uint8_t>(rng.uniform_below(256));
            for (auto& x : obs.back.rgb) x = static_cast<std::uint8_t>(rng.uniform_below(256));
            obs.tokens = tokens;
            ctx.push_back(obs);
            if (static_cast<int>(ctx.size()) > cfg.context) ctx.pop_front();
            const auto direct = student_act(params, ctx);
            const auto incremental = rollout.act(obs);
            INFO("step ", step);
            CHECK(direct == incremental);
        }
    }
    SUBCASE("greedy decoding is repeatable") {
        const PolicyParams params = PolicyParams::init(cfg, 56);
        Rng rng(601);
        render::Observation obs;
        obs.head = render::Image(cfg.image_w, cfg.image_h);
        obs.back = render::Image(cfg.image_w, cfg.image_h);
        for (auto& x : obs.head.rgb) x = static_cast<std::uint8_t>(rng.uniform_below(256));
        obs.tokens = {2};
        std::deque<render::Observation> ctx{obs};
        const auto a = student_act(params, ctx);
        CHECK(student_act(params, ctx) == a);
        CHECK(student_act(params, ctx) == a);
    }
}

TEST_CASE("parameter file round trip") {
    const ModelConfig cfg = tiny_config();
    const PolicyParams params = PolicyParams::init(cfg, 88);
    const auto path = std::filesystem::temp_directory_path() / "tsim_params_test.bin";
    save_params(params, path.string());
    const PolicyParams loaded = load_params(path.string());
    CHECK(loaded.cfg.patch_dim == cfg.patch_dim);
    CHECK(loaded.cfg.vocab_size == cfg.vocab_size);
    CHECK(loaded.count() == params.count());

    // Values survive within f32 precision, and a second round trip is exact.
    CHECK(loaded.patch_w.v[0] ==
          doctest::Approx(params.patch_w.v[0]).epsilon(1e-6));
    const auto path2 = std::filesystem::temp_directory_path() / "tsim_params_test2.bin";
    save_params(loaded, path2.string());
    const PolicyParams again = load_params(path2.string());
    bool identical = true;
    int i = 0;
    std::array<const Mat*, 17> lt{}, at{};
    loaded.for_each([&](const char*, const Mat& m) { lt[i++] = &m; });
    i = 0;
    again.for_each([&](const char*, const Mat& m) { at[i++] = &m; });
    for (int t = 0; t < 17; ++t)
        for (std::size_t j = 0; j < lt[t]->size(); ++j)
            identical = identical && lt[t]->v[j] == at[t]->v[j];
    CHECK(identical);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("training is seed-deterministic and beats the uniform loss") {
    // Synthetic dataset with a learnable rule: the action bins follow the
    // dominant image intensity.
    const ModelConfig cfg = tiny_config(8);
    const auto path = std::filesystem::temp_directory_path() / "tsim_train_fixture.bin";
    {
        data::DatasetHeader header;
        header.image_w = cfg.image_w;
        header.image_h = cfg.image_h;
        data::DatasetWriter writer(path.string(), header);
        Rng rng(4096);
        for (int e = 0; e < 64; ++e) {
            data::Episode ep;
            ep.ordinal = e;
            const int bright = static_cast<int>(rng.uniform_below(2));
            for (int s = 0; s < 8; ++s) {
                data::EpisodeStep step;
                step.obs.head = render::Image(cfg.image_w, cfg.image_h);
                step.obs.back = render::Image(cfg.image_w, cfg.image_h);
                for (auto& x : step.obs.head.rgb)
                    x = static_cast<std::uint8_t>(bright ? 200 + rng.uniform_below(30)
                                                         : rng.uniform_below(30));
                step.obs.tokens = {2, 3};
                step.action = bright ? sim::Action{3, 2, 4} : sim::Action{0, 0, 0};
                step.clock = 0.5 * s;
                ep.steps.push_back(std::move(step));
            }
            ep.outcome = sim::Status::Success;
            for (const auto& t : data::chunk_episode(ep)) writer.append(t);
            writer.add_episode_count(1);
        }
        writer.finalize();
    }

    data::DatasetReader reader(path.string());
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch = 8;
    tc.lr = 0.001;
    tc.optimizer = "adam";
    tc.seed = 9;
    tc.quiet = true;
    const PolicyParams a = train_student(reader, cfg, tc);
    const PolicyParams b = train_student(reader, cfg, tc);

    SUBCASE("identical seeds give bit-identical parameters") {
        bool identical = true;
        int i = 0;
        std::array<const Mat*, 17> at{}, bt{};
        a.for_each([&](const char*, const Mat& m) { at[i++] = &m; });
        i = 0;
        b.for_each([&](const char*, const Mat& m) { bt[i++] = &m; });
        for (int t = 0; t < 17; ++t)
            for (std::size_t j = 0; j < at[t]->size(); ++j)
                identical = identical && at[t]->v[j] == bt[t]->v[j];
        CHECK(identical);
    }
    SUBCASE("one epoch lands below the uniform-logit loss") {
        std::vector<std::size_t> all(reader.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const Batch batch = batch_from_trajectories(reader, all, cfg);
        const double loss =
            loss_from_logits(forward_logits(a, batch), batch.actions, batch.padded);
        const double uniform = (std::log(4.0) + std::log(3.0) + std::log(5.0)) / 3.0;
        CHECK(loss < uniform);
    }
    std::filesystem::remove(path);
}

TEST_CASE("parameter count is reported") {
    const ModelConfig cfg = tiny_config();
    const PolicyParams params = PolicyParams::init(cfg, 1);
    std::size_t expected = 0;
    params.for_each([&](const char*, const Mat& m) { expected += m.size(); });
    CHECK(params.count() == expected);
    CHECK(expected > 0);
}
