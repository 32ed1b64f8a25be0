#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace tsim::learn {

// Dense row-major matrix of doubles. Vectors are [1, n].
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    std::size_t size() const { return v.size(); }
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AllMasked : std::runtime_error {
    AllMasked() : std::runtime_error("loss over a fully masked batch") {}
};
struct NonFiniteLoss : std::runtime_error {
    NonFiniteLoss() : std::runtime_error("loss is not finite") {}
};

// Shared raw kernels. The tape ops and the inference path both call these so
// identical inputs produce bitwise-identical outputs on either path.
namespace detail {
void matmul_accum(const Mat& a, const Mat& b, Mat& c);           // c += a * b
void matmul_at_b_accum(const Mat& a, const Mat& b, Mat& c);      // c += a^T * b
void matmul_a_bt_accum(const Mat& a, const Mat& b, Mat& c);      // c += a * b^T
void softmax_row(double* s, int n);                              // in place
}  // namespace detail

// Reverse-mode tape over matrices. Nodes are created through op methods and
// freed wholesale with the tape.
class Tape {
public:
    using Id = int;

    Id input(Mat m);

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);                // same shape
    Id add_row_broadcast(Id a, Id bias);  // bias: [1, n]
    Id relu(Id a);
    Id tanh_op(Id a);
    Id gelu(Id a);
    Id concat_cols(Id a, Id b);
    Id slice_cols(Id a, int start, int n);
    Id reshape(Id a, int rows, int cols);

    // Repeat each row of a `times` times: [m, n] -> [m*times, n].
    Id repeat_rows(Id a, int times);

    // Add a fixed [t, n] pattern tiled down the rows (no gradient to pattern).
    Id add_tiled_rows(Id a, const Mat& pattern);

    // Mean-pooled embedding rows: out[i] = mean over tokens[i] of emb[token].
    // Empty token lists contribute a zero row.
    Id embed_mean(Id emb, const std::vector<std::vector<std::uint16_t>>& tokens);

    // Scaled masked causal attention core: softmax(Q K^T / sqrt(d)) V, applied
    // independently per sample of `t` timesteps. Key u is visible from query
    // step q iff u <= q and (u == q or !padded[u]).
    Id attention_core(Id q, Id k, Id v, int t, const std::vector<std::uint8_t>& padded);

    // Mean categorical cross-entropy over unmasked (step, dim) pairs for the
    // three action heads. Throws AllMasked when every step is padded.
    Id action_cross_entropy(const std::array<Id, 3>& logits,
                            const std::vector<std::array<std::uint8_t, 3>>& labels,
                            const std::vector<std::uint8_t>& padded);

    // REINFORCE surrogate: mean over rows of
    //   -advantage * log pi(action) - entropy_weight * H(pi), summed per head.
    Id policy_gradient_loss(const std::array<Id, 3>& logits,
                            const std::vector<std::array<std::uint8_t, 3>>& actions,
                            const std::vector<double>& advantages, double entropy_weight);

    const Mat& value(Id id) const { return nodes_[id].val; }
    const Mat& gradient(Id id) const { return nodes_[id].grad; }

    // Seed d(out)=1 and propagate. `out` must be a [1,1] scalar node.
    void backward(Id out);

private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void()> back;  // empty for leaves
    };

    Id push(Mat val, std::function<void()> back = {});
    std::vector<Node> nodes_;
};

}  // namespace tsim::learn
