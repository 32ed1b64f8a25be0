#include <doctest.h>

#include "tsim/autodiff.hpp"
#include "tsim/rng.hpp"

using namespace tsim;
using namespace tsim::learn;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (double& x : m.v) x = rng.uniform(-scale, scale);
    return m;
}

// Central finite differences of a scalar-valued tape program with respect to
// one leaf, compared against the tape's reverse pass.
template <class Build>
void check_leaf_gradient(const Mat& leaf, Build&& build, std::uint64_t seed, double tol = 1e-6) {
    Tape tape;
    const auto id = tape.input(leaf);
    const auto out = build(tape, id);
    tape.backward(out);
    const Mat analytic = tape.gradient(id);

    Rng rng(seed);
    const double eps = 1e-6;
    for (int probe = 0; probe < 12; ++probe) {
        const std::size_t j = rng.uniform_below(leaf.size());
        Mat up = leaf, down = leaf;
        up.v[j] += eps;
        down.v[j] -= eps;
        Tape tu, td;
        const double fu = tu.value(build(tu, tu.input(up))).v[0];
        const double fd = td.value(build(td, td.input(down))).v[0];
        const double fdiff = (fu - fd) / (2.0 * eps);
        CHECK(analytic.v[j] == doctest::Approx(fdiff).epsilon(tol).scale(1.0));
    }
}

// Sums all entries into a scalar through a matmul with a fixed vector.
Tape::Id reduce_sum(Tape& tape, Tape::Id a) {
    const Mat& v = tape.value(a);
    Mat ones(v.cols, 1);
    for (double& x : ones.v) x = 1.0;
    Mat onesl(1, v.rows);
    for (double& x : onesl.v) x = 1.0;
    return tape.matmul(tape.matmul(tape.input(onesl), a), tape.input(ones));
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(31);
    const Mat x = random_mat(3, 5, rng, 1.5);
    SUBCASE("relu") {
        // Keep probes away from the kink.
        Mat safe = x;
        for (double& v : safe.v)
            if (std::abs(v) < 0.05) v = 0.2;
        check_leaf_gradient(safe, [](Tape& t, Tape::Id a) { return reduce_sum(t, t.relu(a)); },
                            1);
    }
    SUBCASE("tanh") {
        check_leaf_gradient(x, [](Tape& t, Tape::Id a) { return reduce_sum(t, t.tanh_op(a)); },
                            2);
    }
    SUBCASE("gelu") {
        check_leaf_gradient(x, [](Tape& t, Tape::Id a) { return reduce_sum(t, t.gelu(a)); }, 3);
    }
    SUBCASE("slice_cols") {
        check_leaf_gradient(
            x, [](Tape& t, Tape::Id a) { return reduce_sum(t, t.slice_cols(a, 1, 3)); }, 4);
    }
    SUBCASE("repeat_rows and tiled add") {
        Mat pattern(6, 5);
        Rng prng(9);
        for (double& v : pattern.v) v = prng.uniform(-1.0, 1.0);
        check_leaf_gradient(x,
                            [&](Tape& t, Tape::Id a) {
                                return reduce_sum(t, t.add_tiled_rows(t.repeat_rows(a, 2),
                                                                      pattern));
                            },
                            5);
    }
}

TEST_CASE("matmul gradients match finite differences on both operands") {
    Rng rng(33);
    const Mat a = random_mat(4, 6, rng);
    const Mat b = random_mat(6, 3, rng);
    check_leaf_gradient(a,
                        [&](Tape& t, Tape::Id x) {
                            return reduce_sum(t, t.matmul(x, t.input(b)));
                        },
                        6);
    check_leaf_gradient(b,
                        [&](Tape& t, Tape::Id x) {
                            return reduce_sum(t, t.matmul(t.input(a), x));
                        },
                        7);
}

TEST_CASE("policy gradient loss matches finite differences") {
    Rng rng(35);
    const int n = 6;
    const Mat logits = random_mat(n, 12, rng);
    std::vector<std::array<std::uint8_t, 3>> actions;
    std::vector<double> advantages;
    for (int i = 0; i < n; ++i) {
        actions.push_back({static_cast<std::uint8_t>(rng.uniform_below(4)),
                           static_cast<std::uint8_t>(rng.uniform_below(3)),
                           static_cast<std::uint8_t>(rng.uniform_below(5))});
        advantages.push_back(rng.uniform(-2.0, 2.0));
    }
    check_leaf_gradient(logits,
                        [&](Tape& t, Tape::Id x) {
                            const auto lf = t.slice_cols(x, 0, 4);
                            const auto ll = t.slice_cols(x, 4, 3);
                            const auto ly = t.slice_cols(x, 7, 5);
                            return t.policy_gradient_loss({lf, ll, ly}, actions, advantages,
                                                          0.02);
                        },
                        8, 1e-5);
}

TEST_CASE("shape mismatches are rejected") {
    Tape tape;
    const auto a = tape.input(Mat(2, 3));
    const auto b = tape.input(Mat(2, 3));
    CHECK_THROWS_AS(tape.matmul(a, b), ShapeMismatch);
    CHECK_THROWS_AS(tape.reshape(a, 4, 4), ShapeMismatch);
    CHECK_THROWS_AS(tape.slice_cols(a, 2, 5), ShapeMismatch);
    CHECK_THROWS_AS(tape.backward(a), ShapeMismatch);
}
