#include "tsim/model.hpp"

#include <cmath>

#include "tsim/rng.hpp"

namespace tsim::learn {

namespace {

Mat xavier(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    const double s = std::sqrt(6.0 / (rows + cols));
    for (double& x : m.v) x = rng.uniform(-s, s);
    return m;
}

// Patch rows for one timestep (both cameras), normalized to [-0.5, 0.5].
// Row layout: camera-major, then patch row, patch col; columns iterate the
// patch pixels row-major with 3 channels.
void patchify_step(const std::uint8_t* head, const std::uint8_t* back, const ModelConfig& cfg,
                   Mat& out, int row0) {
    const int pp = cfg.image_w / cfg.patch;
    const std::uint8_t* cams[2] = {head, back};
    int row = row0;
    for (int cam = 0; cam < cfg.n_cameras; ++cam) {
        const std::uint8_t* img = cams[cam];
        for (int py = 0; py < pp; ++py) {
            for (int px = 0; px < pp; ++px) {
                double* dst = out.row(row++);
                int c = 0;
                for (int dy = 0; dy < cfg.patch; ++dy) {
                    const std::uint8_t* src =
                        img + (static_cast<std::size_t>(py * cfg.patch + dy) * cfg.image_w +
                               px * cfg.patch) * 3;
                    for (int dx = 0; dx < cfg.patch * 3; ++dx)
                        dst[c++] = static_cast<double>(src[dx]) / 255.0 - 0.5;
                }
            }
        }
    }
}

Mat patchify_batch(const Batch& batch, const ModelConfig& cfg) {
    const int steps_total = batch.n_traj * batch.steps;
    Mat out(steps_total * cfg.n_patches(), cfg.patch_vec());
    const std::size_t step_bytes = cfg.step_bytes();
    for (int s = 0; s < steps_total; ++s) {
        const std::uint8_t* head = batch.images.data() + s * step_bytes;
        const std::uint8_t* back = head + cfg.image_bytes();
        patchify_step(head, back, cfg, out, s * cfg.n_patches());
    }
    return out;
}

}  // namespace

Mat positional_encoding(int context, int d_model) {
    Mat pe(context, d_model);
    for (int t = 0; t < context; ++t) {
        for (int i = 0; i < d_model; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
            pe.at(t, i) = std::sin(t * freq);
            if (i + 1 < d_model) pe.at(t, i + 1) = std::cos(t * freq);
        }
    }
    return pe;
}

PolicyParams PolicyParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x11217));
    PolicyParams p;
    p.cfg = cfg;
    p.patch_w = xavier(cfg.patch_vec(), cfg.patch_dim, rng);
    p.patch_b = Mat(1, cfg.patch_dim);
    p.proj_w = xavier(cfg.enc_concat(), cfg.d_model, rng);
    p.proj_b = Mat(1, cfg.d_model);
    p.embed = Mat(cfg.vocab_size, cfg.caption_dim);
    for (double& x : p.embed.v) x = rng.uniform(-0.05, 0.05);
    p.fuse_w = xavier(cfg.fused_in(), cfg.d_model, rng);
    p.fuse_b = Mat(1, cfg.d_model);
    p.wq = xavier(cfg.d_model, cfg.d_model, rng);
    p.wk = xavier(cfg.d_model, cfg.d_model, rng);
    p.wv = xavier(cfg.d_model, cfg.d_model, rng);
    p.wo = xavier(cfg.d_model, cfg.d_model, rng);
    for (int h = 0; h < 3; ++h) {
        p.head_w[h] = xavier(cfg.d_model, kHeadSizes[h], rng);
        p.head_b[h] = Mat(1, kHeadSizes[h]);
    }
    return p;
}

PolicyParams PolicyParams::zeros(const ModelConfig& cfg) {
    PolicyParams p;
    p.cfg = cfg;
    p.patch_w = Mat(cfg.patch_vec(), cfg.patch_dim);
    p.patch_b = Mat(1, cfg.patch_dim);
    p.proj_w = Mat(cfg.enc_concat(), cfg.d_model);
    p.proj_b = Mat(1, cfg.d_model);
    p.embed = Mat(cfg.vocab_size, cfg.caption_dim);
    p.fuse_w = Mat(cfg.fused_in(), cfg.d_model);
    p.fuse_b = Mat(1, cfg.d_model);
    p.wq = Mat(cfg.d_model, cfg.d_model);
    p.wk = Mat(cfg.d_model, cfg.d_model);
    p.wv = Mat(cfg.d_model, cfg.d_model);
    p.wo = Mat(cfg.d_model, cfg.d_model);
    for (int h = 0; h < 3; ++h) {
        p.head_w[h] = Mat(cfg.d_model, kHeadSizes[h]);
        p.head_b[h] = Mat(1, kHeadSizes[h]);
    }
    return p;
}

std::size_t PolicyParams::count() const {
    std::size_t n = 0;
    for_each([&](const char*, const Mat& m) { n += m.size(); });
    return n;
}

ForwardNodes forward_on_tape(Tape& tape, const PolicyParams& params, const Batch& batch,
                             std::array<Tape::Id, 17>* param_nodes_out) {
    const ModelConfig& cfg = params.cfg;
    if (batch.steps != cfg.context) throw ShapeMismatch("batch context length mismatch");
    const int nt = batch.n_traj * batch.steps;
    if (static_cast<int>(batch.actions.size()) != nt ||
        static_cast<int>(batch.padded.size()) != nt ||
        static_cast<int>(batch.tokens.size()) != batch.n_traj ||
        batch.images.size() != static_cast<std::size_t>(nt) * cfg.step_bytes())
        throw ShapeMismatch("batch field sizes inconsistent");

    std::array<Tape::Id, 17> ids{};
    int i = 0;
    const_cast<PolicyParams&>(params).for_each(
        [&](const char*, Mat& m) { ids[i++] = tape.input(m); });
    if (param_nodes_out) *param_nodes_out = ids;

    const Tape::Id x_patches = tape.input(patchify_batch(batch, cfg));
    const Tape::Id h1 =
        tape.gelu(tape.add_row_broadcast(tape.matmul(x_patches, ids[0]), ids[1]));
    const Tape::Id h1r = tape.reshape(h1, nt, cfg.enc_concat());
    const Tape::Id h2 = tape.gelu(tape.add_row_broadcast(tape.matmul(h1r, ids[2]), ids[3]));

    const Tape::Id cap = tape.embed_mean(ids[4], batch.tokens);
    const Tape::Id cap_rep = tape.repeat_rows(cap, batch.steps);

    const Tape::Id fused = tape.gelu(tape.add_row_broadcast(
        tape.matmul(tape.concat_cols(h2, cap_rep), ids[5]), ids[6]));
    const Tape::Id x = tape.add_tiled_rows(fused, positional_encoding(cfg.context, cfg.d_model));

    const Tape::Id q = tape.matmul(x, ids[7]);
    const Tape::Id k = tape.matmul(x, ids[8]);
    const Tape::Id v = tape.matmul(x, ids[9]);
    const Tape::Id core = tape.attention_core(q, k, v, batch.steps, batch.padded);
    const Tape::Id att = tape.add(x, tape.matmul(core, ids[10]));

    ForwardNodes out;
    out.logits_fwd = tape.add_row_broadcast(tape.matmul(att, ids[11]), ids[12]);
    out.logits_lat = tape.add_row_broadcast(tape.matmul(att, ids[13]), ids[14]);
    out.logits_yaw = tape.add_row_broadcast(tape.matmul(att, ids[15]), ids[16]);
    return out;
}

Mat forward_logits(const PolicyParams& params, const Batch& batch) {
    Tape tape;
    const ForwardNodes nodes = forward_on_tape(tape, params, batch);
    const Mat& f = tape.value(nodes.logits_fwd);
    const Mat& l = tape.value(nodes.logits_lat);
    const Mat& y = tape.value(nodes.logits_yaw);
    Mat out(f.rows, f.cols + l.cols + y.cols);
    for (int r = 0; r < f.rows; ++r) {
        std::copy(f.row(r), f.row(r) + f.cols, out.row(r));
        std::copy(l.row(r), l.row(r) + l.cols, out.row(r) + f.cols);
        std::copy(y.row(r), y.row(r) + y.cols, out.row(r) + f.cols + l.cols);
    }
    return out;
}

double loss_from_logits(const Mat& logits, const std::vector<std::array<std::uint8_t, 3>>& actions,
                        const std::vector<std::uint8_t>& padded) {
    const int n = logits.rows;
    if (static_cast<int>(actions.size()) != n || static_cast<int>(padded.size()) != n)
        throw ShapeMismatch("loss label/mask size mismatch");
    int n_valid = 0;
    for (const auto p : padded)
        if (!p) ++n_valid;
    if (n_valid == 0) throw AllMasked();

    const int offsets[4] = {0, kHeadSizes[0], kHeadSizes[0] + kHeadSizes[1],
                            kHeadSizes[0] + kHeadSizes[1] + kHeadSizes[2]};
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        if (padded[r]) continue;
        const double* row = logits.row(r);
        for (int h = 0; h < 3; ++h) {
            const double* seg = row + offsets[h];
            const int width = offsets[h + 1] - offsets[h];
            double mx = seg[0];
            for (int c = 1; c < width; ++c) mx = std::max(mx, seg[c]);
            double sum = 0.0;
            for (int c = 0; c < width; ++c) sum += std::exp(seg[c] - mx);
            total += std::log(sum) + mx - seg[actions[r][h]];
        }
    }
    return total / (3.0 * n_valid);
}

Gradients grad(const PolicyParams& params, const Batch& batch) {
    Tape tape;
    std::array<Tape::Id, 17> ids{};
    const ForwardNodes nodes = forward_on_tape(tape, params, batch, &ids);
    const Tape::Id loss = tape.action_cross_entropy(
        {nodes.logits_fwd, nodes.logits_lat, nodes.logits_yaw}, batch.actions, batch.padded);
    const double loss_value = tape.value(loss).v[0];
    if (!std::isfinite(loss_value)) throw NonFiniteLoss();
    tape.backward(loss);

    Gradients g;
    g.loss = loss_value;
    g.tensors = PolicyParams::zeros(params.cfg);
    int i = 0;
    g.tensors.for_each([&](const char*, Mat& m) { m = tape.gradient(ids[i++]); });
    return g;
}

// ---- inference -------------------------------------------------------------

sim::Action argmax_action(const double* fwd, const double* lat, const double* yaw) {
    const auto pick = [](const double* v, const double* bins, int n) {
        int best = 0;
        for (int i = 1; i < n; ++i) {
            if (v[i] > v[best]) {
                best = i;
            } else if (v[i] == v[best] && std::abs(bins[i]) < std::abs(bins[best])) {
                best = i;
            }
        }
        return static_cast<std::uint8_t>(best);
    };
    return {pick(fwd, sim::kForwardBins.data(), kHeadSizes[0]),
            pick(lat, sim::kLateralBins.data(), kHeadSizes[1]),
            pick(yaw, sim::kYawBins.data(), kHeadSizes[2])};
}

sim::Action student_act(const PolicyParams& params,
                        const std::deque<render::Observation>& context) {
    if (context.empty()) throw std::invalid_argument("student_act: empty context");
    const ModelConfig& cfg = params.cfg;
    const int t = cfg.context;
    const int len = std::min<int>(static_cast<int>(context.size()), t);
    const int pad = t - len;

    Batch batch;
    batch.n_traj = 1;
    batch.steps = t;
    batch.images.assign(static_cast<std::size_t>(t) * cfg.step_bytes(), 0);
    batch.actions.assign(t, {0, 0, 0});
    batch.padded.assign(t, 0);
    for (int s = 0; s < pad; ++s) batch.padded[s] = 1;
    const std::size_t first = context.size() - static_cast<std::size_t>(len);
    for (int s = 0; s < len; ++s) {
        const render::Observation& obs = context[first + s];
        std::uint8_t* dst = batch.images.data() + static_cast<std::size_t>(pad + s) * cfg.step_bytes();
        std::copy(obs.head.rgb.begin(), obs.head.rgb.end(), dst);
        std::copy(obs.back.rgb.begin(), obs.back.rgb.end(), dst + cfg.image_bytes());
    }
    batch.tokens.push_back(context.back().tokens);

    const Mat logits = forward_logits(params, batch);
    const double* last = logits.row(t - 1);
    return argmax_action(last, last + kHeadSizes[0], last + kHeadSizes[0] + kHeadSizes[1]);
}

StudentRollout::StudentRollout(const PolicyParams& params)
    : params_(params), pe_(positional_encoding(params.cfg.context, params.cfg.d_model)) {}

void StudentRollout::reset() {
    fused_.clear();
    raw_.clear();
    tokens_.clear();
    caption_embed_.clear();
}

namespace {

// [1,n] matrix view helpers reusing the shared kernels so the incremental
// path accumulates in exactly the same order as the tape path.
Mat row_matmul(const std::vector<double>& row, const Mat& w) {
    Mat a(1, static_cast<int>(row.size()));
    a.v = row;
    Mat c(1, w.cols);
    detail::matmul_accum(a, w, c);
    return c;
}

void gelu_inplace(Mat& m) {
    for (double& x : m.v) x = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

}  // namespace

sim::Action StudentRollout::act(const render::Observation& obs) {
    const ModelConfig& cfg = params_.cfg;
    const int t = cfg.context;

    if (obs.tokens != tokens_) {
        tokens_ = obs.tokens;
        caption_embed_.assign(cfg.caption_dim, 0.0);
        if (!tokens_.empty()) {
            for (const std::uint16_t tok : tokens_) {
                const double* erow = params_.embed.row(tok);
                for (int c = 0; c < cfg.caption_dim; ++c) caption_embed_[c] += erow[c];
            }
            const double inv = 1.0 / static_cast<double>(tokens_.size());
            for (double& x : caption_embed_) x *= inv;
        }
        // A caption change invalidates every cached fusion.
        std::deque<render::Observation> keep = std::move(raw_);
        fused_.clear();
        raw_.clear();
        for (const auto& o : keep) act_encode_only(o);
    }
    act_encode_only(obs);

    const int len = static_cast<int>(fused_.size());
    const int pad = t - len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    // x rows for real steps (position pad..t-1); q from the last row only.
    std::vector<std::vector<double>> x(len);
    for (int j = 0; j < len; ++j) {
        x[j].resize(cfg.d_model);
        const double* prow = pe_.row(pad + j);
        for (int c = 0; c < cfg.d_model; ++c) x[j][c] = fused_[j][c] + prow[c];
    }
    const Mat q = row_matmul(x[len - 1], params_.wq);
    std::vector<Mat> k(len), v(len);
    for (int j = 0; j < len; ++j) {
        k[j] = row_matmul(x[j], params_.wk);
        v[j] = row_matmul(x[j], params_.wv);
    }

    // Masked softmax over the real keys, mirroring the tape kernel's order.
    std::vector<double> w(len);
    double mx = -std::numeric_limits<double>::infinity();
    for (int u = 0; u < len; ++u) {
        double s = 0.0;
        for (int c = 0; c < cfg.d_model; ++c) s += q.v[c] * k[u].v[c];
        w[u] = s * scale;
        mx = std::max(mx, w[u]);
    }
    double sum = 0.0;
    for (int u = 0; u < len; ++u) {
        w[u] = std::exp(w[u] - mx);
        sum += w[u];
    }
    const double inv = 1.0 / sum;
    std::vector<double> core(cfg.d_model, 0.0);
    for (int u = 0; u < len; ++u) {
        w[u] *= inv;
        for (int c = 0; c < cfg.d_model; ++c) core[c] += w[u] * v[u].v[c];
    }

    const Mat o = row_matmul(core, params_.wo);
    std::vector<double> att(cfg.d_model);
    for (int c = 0; c < cfg.d_model; ++c) att[c] = x[len - 1][c] + o.v[c];

    Mat logits[3];
    for (int h = 0; h < 3; ++h) {
        logits[h] = row_matmul(att, params_.head_w[h]);
        for (int c = 0; c < kHeadSizes[h]; ++c) logits[h].v[c] += params_.head_b[h].v[c];
    }
    return argmax_action(logits[0].v.data(), logits[1].v.data(), logits[2].v.data());
}

void StudentRollout::act_encode_only(const render::Observation& obs) {
    const ModelConfig& cfg = params_.cfg;
    if (static_cast<int>(raw_.size()) >= cfg.context) {
        raw_.pop_front();
        fused_.pop_front();
    }

    Mat patches(cfg.n_patches(), cfg.patch_vec());
    patchify_step(obs.head.rgb.data(), obs.back.rgb.data(), cfg, patches, 0);
    Mat h1(cfg.n_patches(), cfg.patch_dim);
    detail::matmul_accum(patches, params_.patch_w, h1);
    for (int r = 0; r < h1.rows; ++r)
        for (int c = 0; c < h1.cols; ++c) h1.at(r, c) += params_.patch_b.v[c];
    gelu_inplace(h1);

    std::vector<double> flat(h1.v);
    Mat h2 = row_matmul(flat, params_.proj_w);
    for (int c = 0; c < cfg.d_model; ++c) h2.v[c] += params_.proj_b.v[c];
    gelu_inplace(h2);

    std::vector<double> cat(cfg.fused_in());
    std::copy(h2.v.begin(), h2.v.end(), cat.begin());
    std::copy(caption_embed_.begin(), caption_embed_.end(), cat.begin() + cfg.d_model);
    Mat fused = row_matmul(cat, params_.fuse_w);
    for (int c = 0; c < cfg.d_model; ++c) fused.v[c] += params_.fuse_b.v[c];
    gelu_inplace(fused);

    raw_.push_back(obs);
    fused_.push_back(std::move(fused.v));
}

}  // namespace tsim::learn
