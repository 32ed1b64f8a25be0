#include "tsim/autodiff.hpp"

#include <algorithm>
#include <memory>
#include <cmath>

#include "tsim/threading.hpp"

namespace tsim::learn {

namespace detail {

namespace {
int matmul_workers(std::size_t flops) {
    return flops > 400000 ? global_workers() : 1;
}
}  // namespace

void matmul_accum(const Mat& a, const Mat& b, Mat& c) {
    const int m = a.rows, k = a.cols, n = b.cols;
    parallel_ranges(m, matmul_workers(static_cast<std::size_t>(m) * k * n),
                    [&](int r0, int r1) {
                        for (int i = r0; i < r1; ++i) {
                            const double* ai = a.row(i);
                            double* ci = c.row(i);
                            for (int p = 0; p < k; ++p) {
                                const double av = ai[p];
                                if (av == 0.0) continue;
                                const double* bp = b.row(p);
                                for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
                            }
                        }
                    });
}

void matmul_at_b_accum(const Mat& a, const Mat& b, Mat& c) {
    // c [a.cols, b.cols] += a^T * b; owner partition over output rows.
    const int m = a.rows, k = a.cols, n = b.cols;
    parallel_ranges(k, matmul_workers(static_cast<std::size_t>(m) * k * n),
                    [&](int r0, int r1) {
                        for (int p = 0; p < m; ++p) {
                            const double* ap = a.row(p);
                            const double* bp = b.row(p);
                            for (int i = r0; i < r1; ++i) {
                                const double av = ap[i];
                                if (av == 0.0) continue;
                                double* ci = c.row(i);
                                for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
                            }
                        }
                    });
}

void matmul_a_bt_accum(const Mat& a, const Mat& b, Mat& c) {
    // c [a.rows, b.rows] += a * b^T.
    const int m = a.rows, k = a.cols, n = b.rows;
    parallel_ranges(m, matmul_workers(static_cast<std::size_t>(m) * k * n),
                    [&](int r0, int r1) {
                        for (int i = r0; i < r1; ++i) {
                            const double* ai = a.row(i);
                            double* ci = c.row(i);
                            for (int j = 0; j < n; ++j) {
                                const double* bj = b.row(j);
                                double acc = 0.0;
                                for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
                                ci[j] += acc;
                            }
                        }
                    });
}

void softmax_row(double* s, int n) {
    double mx = s[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, s[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        s[i] = std::exp(s[i] - mx);
        sum += s[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) s[i] *= inv;
}

}  // namespace detail

Tape::Id Tape::push(Mat val, std::function<void()> back) {
    nodes_.push_back({std::move(val), Mat{}, std::move(back)});
    Node& n = nodes_.back();
    n.grad = Mat(n.val.rows, n.val.cols);
    return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::input(Mat m) { return push(std::move(m)); }

Tape::Id Tape::matmul(Id a, Id b) {
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[b].val;
    if (av.cols != bv.rows) throw ShapeMismatch("matmul shape mismatch");
    Mat out(av.rows, bv.cols);
    detail::matmul_accum(av, bv, out);
    const Id id = push(std::move(out), [this, a, b, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        detail::matmul_a_bt_accum(g, nodes_[b].val, nodes_[a].grad);
        detail::matmul_at_b_accum(nodes_[a].val, g, nodes_[b].grad);
    });
    return id;
}

Tape::Id Tape::add(Id a, Id b) {
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[b].val;
    if (av.rows != bv.rows || av.cols != bv.cols) throw ShapeMismatch("add shape mismatch");
    Mat out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
    return push(std::move(out), [this, a, b, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            nodes_[a].grad.v[i] += g.v[i];
            nodes_[b].grad.v[i] += g.v[i];
        }
    });
}

Tape::Id Tape::add_row_broadcast(Id a, Id bias) {
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[bias].val;
    if (bv.rows != 1 || bv.cols != av.cols) throw ShapeMismatch("bias shape mismatch");
    Mat out = av;
    for (int r = 0; r < out.rows; ++r) {
        double* orow = out.row(r);
        for (int c = 0; c < out.cols; ++c) orow[c] += bv.v[c];
    }
    return push(std::move(out), [this, a, bias, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += g.v[i];
        Mat& bg = nodes_[bias].grad;
        for (int r = 0; r < g.rows; ++r) {
            const double* grow = g.row(r);
            for (int c = 0; c < g.cols; ++c) bg.v[c] += grow[c];
        }
    });
}

Tape::Id Tape::relu(Id a) {
    Mat out = nodes_[a].val;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), [this, a, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        const Mat& v = nodes_[id].val;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (v.v[i] > 0.0) nodes_[a].grad.v[i] += g.v[i];
    });
}

Tape::Id Tape::tanh_op(Id a) {
    Mat out = nodes_[a].val;
    for (double& x : out.v) x = std::tanh(x);
    return push(std::move(out), [this, a, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        const Mat& v = nodes_[id].val;
        for (std::size_t i = 0; i < g.size(); ++i)
            nodes_[a].grad.v[i] += g.v[i] * (1.0 - v.v[i] * v.v[i]);
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tape::Id Tape::gelu(Id a) {
    Mat out = nodes_[a].val;
    for (double& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    return push(std::move(out), [this, a, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        const Mat& x = nodes_[a].val;
        Mat& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = x.v[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            ga.v[i] += g.v[i] * (cdf + v * pdf);
        }
    });
}

Tape::Id Tape::slice_cols(Id a, int start, int n) {
    const Mat& av = nodes_[a].val;
    if (start < 0 || start + n > av.cols) throw ShapeMismatch("slice_cols out of range");
    Mat out(av.rows, n);
    for (int r = 0; r < av.rows; ++r)
        std::copy(av.row(r) + start, av.row(r) + start + n, out.row(r));
    return push(std::move(out), [this, a, start, n, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        Mat& ga = nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < n; ++c) ga.row(r)[start + c] += g.row(r)[c];
    });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[b].val;
    if (av.rows != bv.rows) throw ShapeMismatch("concat_cols row mismatch");
    Mat out(av.rows, av.cols + bv.cols);
    for (int r = 0; r < av.rows; ++r) {
        std::copy(av.row(r), av.row(r) + av.cols, out.row(r));
        std::copy(bv.row(r), bv.row(r) + bv.cols, out.row(r) + av.cols);
    }
    return push(std::move(out), [this, a, b, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        Mat& ga = nodes_[a].grad;
        Mat& gb = nodes_[b].grad;
        for (int r = 0; r < g.rows; ++r) {
            const double* grow = g.row(r);
            for (int c = 0; c < ga.cols; ++c) ga.row(r)[c] += grow[c];
            for (int c = 0; c < gb.cols; ++c) gb.row(r)[c] += grow[ga.cols + c];
        }
    });
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
    const Mat& av = nodes_[a].val;
    if (static_cast<std::size_t>(rows) * cols != av.size())
        throw ShapeMismatch("reshape size mismatch");
    Mat out(rows, cols);
    out.v = av.v;
    return push(std::move(out), [this, a, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += g.v[i];
    });
}

Tape::Id Tape::repeat_rows(Id a, int times) {
    const Mat& av = nodes_[a].val;
    Mat out(av.rows * times, av.cols);
    for (int r = 0; r < av.rows; ++r)
        for (int t = 0; t < times; ++t)
            std::copy(av.row(r), av.row(r) + av.cols, out.row(r * times + t));
    return push(std::move(out), [this, a, times, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        Mat& ga = nodes_[a].grad;
        for (int r = 0; r < ga.rows; ++r)
            for (int t = 0; t < times; ++t) {
                const double* grow = g.row(r * times + t);
                for (int c = 0; c < ga.cols; ++c) ga.row(r)[c] += grow[c];
            }
    });
}

Tape::Id Tape::add_tiled_rows(Id a, const Mat& pattern) {
    const Mat& av = nodes_[a].val;
    if (av.cols != pattern.cols || av.rows % pattern.rows != 0)
        throw ShapeMismatch("tiled pattern shape mismatch");
    Mat out = av;
    for (int r = 0; r < out.rows; ++r) {
        const double* prow = pattern.row(r % pattern.rows);
        double* orow = out.row(r);
        for (int c = 0; c < out.cols; ++c) orow[c] += prow[c];
    }
    return push(std::move(out), [this, a, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += g.v[i];
    });
}

Tape::Id Tape::embed_mean(Id emb, const std::vector<std::vector<std::uint16_t>>& tokens) {
    const Mat& ev = nodes_[emb].val;
    Mat out(static_cast<int>(tokens.size()), ev.cols);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].empty()) continue;
        double* orow = out.row(static_cast<int>(i));
        for (const std::uint16_t tok : tokens[i]) {
            const double* erow = ev.row(tok);
            for (int c = 0; c < ev.cols; ++c) orow[c] += erow[c];
        }
        const double inv = 1.0 / static_cast<double>(tokens[i].size());
        for (int c = 0; c < ev.cols; ++c) orow[c] *= inv;
    }
    return push(std::move(out), [this, emb, tokens, id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        Mat& ge = nodes_[emb].grad;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i].empty()) continue;
            const double inv = 1.0 / static_cast<double>(tokens[i].size());
            const double* grow = g.row(static_cast<int>(i));
            for (const std::uint16_t tok : tokens[i]) {
                double* erow = ge.row(tok);
                for (int c = 0; c < g.cols; ++c) erow[c] += grow[c] * inv;
            }
        }
    });
}

Tape::Id Tape::attention_core(Id q, Id k, Id v, int t, const std::vector<std::uint8_t>& padded) {
    const Mat& qv = nodes_[q].val;
    const Mat& kv = nodes_[k].val;
    const Mat& vv = nodes_[v].val;
    if (qv.rows != kv.rows || qv.rows != vv.rows || qv.rows % t != 0)
        throw ShapeMismatch("attention batch shape mismatch");
    if (static_cast<int>(padded.size()) != qv.rows)
        throw ShapeMismatch("attention pad mask size mismatch");
    const int d = qv.cols;
    const int batch = qv.rows / t;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Attention weights are kept for the backward pass.
    auto weights = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(batch) * t * t, 0.0);

    Mat out(qv.rows, d);
    for (int b = 0; b < batch; ++b) {
        double* wb = weights->data() + static_cast<std::size_t>(b) * t * t;
        for (int qi = 0; qi < t; ++qi) {
            const int qrow = b * t + qi;
            double* wrow = wb + static_cast<std::size_t>(qi) * t;
            double mx = -std::numeric_limits<double>::infinity();
            for (int ui = 0; ui <= qi; ++ui) {
                if (padded[b * t + ui] && ui != qi) continue;
                const double* qr = qv.row(qrow);
                const double* kr = kv.row(b * t + ui);
                double s = 0.0;
                for (int c = 0; c < d; ++c) s += qr[c] * kr[c];
                wrow[ui] = s * scale;
                mx = std::max(mx, wrow[ui]);
            }
            double sum = 0.0;
            for (int ui = 0; ui <= qi; ++ui) {
                if (padded[b * t + ui] && ui != qi) {
                    wrow[ui] = 0.0;
                    continue;
                }
                wrow[ui] = std::exp(wrow[ui] - mx);
                sum += wrow[ui];
            }
            const double inv = 1.0 / sum;
            double* orow = out.row(qrow);
            for (int ui = 0; ui <= qi; ++ui) {
                if (wrow[ui] == 0.0) continue;
                wrow[ui] *= inv;
                const double* vr = vv.row(b * t + ui);
                for (int c = 0; c < d; ++c) orow[c] += wrow[ui] * vr[c];
            }
        }
    }

    return push(std::move(out),
                [this, q, k, v, t, batch, d, scale, weights,
                 id = static_cast<Id>(nodes_.size())]() {
        const Mat& g = nodes_[id].grad;
        const Mat& qv2 = nodes_[q].val;
        const Mat& kv2 = nodes_[k].val;
        const Mat& vv2 = nodes_[v].val;
        Mat& gq = nodes_[q].grad;
        Mat& gk = nodes_[k].grad;
        Mat& gv = nodes_[v].grad;
        std::vector<double> da(static_cast<std::size_t>(t), 0.0);
        for (int b = 0; b < batch; ++b) {
            const double* wb = weights->data() + static_cast<std::size_t>(b) * t * t;
            for (int qi = 0; qi < t; ++qi) {
                const int qrow = b * t + qi;
                const double* wrow = wb + static_cast<std::size_t>(qi) * t;
                const double* grow = g.row(qrow);
                // dA and dV
                double dot_aw = 0.0;
                for (int ui = 0; ui <= qi; ++ui) {
                    if (wrow[ui] == 0.0) {
                        da[ui] = 0.0;
                        continue;
                    }
                    const double* vr = vv2.row(b * t + ui);
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) s += grow[c] * vr[c];
                    da[ui] = s;
                    dot_aw += s * wrow[ui];
                    double* gvr = gv.row(b * t + ui);
                    for (int c = 0; c < d; ++c) gvr[c] += wrow[ui] * grow[c];
                }
                // dS = A * (dA - sum(dA*A)); then dQ, dK
                for (int ui = 0; ui <= qi; ++ui) {
                    if (wrow[ui] == 0.0) continue;
                    const double ds = wrow[ui] * (da[ui] - dot_aw) * scale;
                    const double* kr = kv2.row(b * t + ui);
                    const double* qr = qv2.row(qrow);
                    double* gqr = gq.row(qrow);
                    double* gkr = gk.row(b * t + ui);
                    for (int c = 0; c < d; ++c) {
                        gqr[c] += ds * kr[c];
                        gkr[c] += ds * qr[c];
                    }
                }
            }
        }
    });
}

Tape::Id Tape::action_cross_entropy(const std::array<Id, 3>& logits,
                                    const std::vector<std::array<std::uint8_t, 3>>& labels,
                                    const std::vector<std::uint8_t>& padded) {
    const int n = nodes_[logits[0]].val.rows;
    if (static_cast<int>(labels.size()) != n || static_cast<int>(padded.size()) != n)
        throw ShapeMismatch("cross entropy label/mask size mismatch");
    int n_valid = 0;
    for (const auto p : padded)
        if (!p) ++n_valid;
    if (n_valid == 0) throw AllMasked();
    const double denom = 3.0 * n_valid;

    double total = 0.0;
    std::array<const Mat*, 3> lv{&nodes_[logits[0]].val, &nodes_[logits[1]].val,
                                 &nodes_[logits[2]].val};
    for (int r = 0; r < n; ++r) {
        if (padded[r]) continue;
        for (int h = 0; h < 3; ++h) {
            const Mat& m = *lv[h];
            const double* row = m.row(r);
            double mx = row[0];
            for (int c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
            double sum = 0.0;
            for (int c = 0; c < m.cols; ++c) sum += std::exp(row[c] - mx);
            total += std::log(sum) + mx - row[labels[r][h]];
        }
    }
    Mat out(1, 1);
    out.v[0] = total / denom;

    return push(std::move(out),
                [this, logits, labels, padded, denom, id = static_cast<Id>(nodes_.size())]() {
        const double gscale = nodes_[id].grad.v[0] / denom;
        for (int h = 0; h < 3; ++h) {
            const Mat& m = nodes_[logits[h]].val;
            Mat& gm = nodes_[logits[h]].grad;
            for (int r = 0; r < m.rows; ++r) {
                if (padded[r]) continue;
                const double* row = m.row(r);
                double* grow = gm.row(r);
                double mx = row[0];
                for (int c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int c = 0; c < m.cols; ++c) sum += std::exp(row[c] - mx);
                for (int c = 0; c < m.cols; ++c) {
                    const double p = std::exp(row[c] - mx) / sum;
                    grow[c] += gscale * (p - (c == labels[r][h] ? 1.0 : 0.0));
                }
            }
        }
    });
}

Tape::Id Tape::policy_gradient_loss(const std::array<Id, 3>& logits,
                                    const std::vector<std::array<std::uint8_t, 3>>& actions,
                                    const std::vector<double>& advantages,
                                    double entropy_weight) {
    const int n = nodes_[logits[0]].val.rows;
    if (static_cast<int>(actions.size()) != n || static_cast<int>(advantages.size()) != n)
        throw ShapeMismatch("policy gradient label size mismatch");
    if (n == 0) throw AllMasked();

    double total = 0.0;
    for (int h = 0; h < 3; ++h) {
        const Mat& m = nodes_[logits[h]].val;
        for (int r = 0; r < n; ++r) {
            const double* row = m.row(r);
            double mx = row[0];
            for (int c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
            double sum = 0.0;
            for (int c = 0; c < m.cols; ++c) sum += std::exp(row[c] - mx);
            const double lse = std::log(sum) + mx;
            double entropy = 0.0;
            for (int c = 0; c < m.cols; ++c) {
                const double logp = row[c] - lse;
                entropy -= std::exp(logp) * logp;
            }
            total += -advantages[r] * (row[actions[r][h]] - lse) - entropy_weight * entropy;
        }
    }
    Mat out(1, 1);
    out.v[0] = total / n;

    return push(std::move(out), [this, logits, actions, advantages, entropy_weight, n,
                                 id = static_cast<Id>(nodes_.size())]() {
        const double gscale = nodes_[id].grad.v[0] / n;
        for (int h = 0; h < 3; ++h) {
            const Mat& m = nodes_[logits[h]].val;
            Mat& gm = nodes_[logits[h]].grad;
            for (int r = 0; r < n; ++r) {
                const double* row = m.row(r);
                double* grow = gm.row(r);
                double mx = row[0];
                for (int c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int c = 0; c < m.cols; ++c) sum += std::exp(row[c] - mx);
                const double lse = std::log(sum) + mx;
                double entropy = 0.0;
                for (int c = 0; c < m.cols; ++c) {
                    const double logp = row[c] - lse;
                    entropy -= std::exp(logp) * logp;
                }
                for (int c = 0; c < m.cols; ++c) {
                    const double p = std::exp(row[c] - lse);
                    const double d_nll = advantages[r] * (p - (c == actions[r][h] ? 1.0 : 0.0));
                    const double d_ent = entropy_weight * p * ((row[c] - lse) + entropy);
                    grow[c] += gscale * (d_nll + d_ent);
                }
            }
        }
    });
}

void Tape::backward(Id out) {
    if (nodes_[out].val.size() != 1) throw ShapeMismatch("backward target must be scalar");
    nodes_[out].grad.v[0] = 1.0;
    for (Id i = out; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back();
}

}  // namespace tsim::learn
