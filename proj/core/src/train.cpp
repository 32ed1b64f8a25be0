#include "tsim/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tsim/rng.hpp"

namespace tsim::learn {

Batch batch_from_trajectories(const data::DatasetReader& reader,
                              const std::vector<std::size_t>& indices,
                              const ModelConfig& cfg) {
    Batch b;
    b.n_traj = static_cast<int>(indices.size());
    b.steps = data::kTrajectoryLen;
    b.images.resize(static_cast<std::size_t>(b.n_traj) * b.steps * cfg.step_bytes());
    b.actions.resize(static_cast<std::size_t>(b.n_traj) * b.steps);
    b.padded.resize(static_cast<std::size_t>(b.n_traj) * b.steps);
    b.tokens.reserve(indices.size());
    for (int i = 0; i < b.n_traj; ++i) {
        const data::Trajectory t = reader.read(indices[i]);
        b.tokens.push_back(t.tokens);
        for (int s = 0; s < b.steps; ++s) {
            const int row = i * b.steps + s;
            std::uint8_t* dst = b.images.data() + static_cast<std::size_t>(row) * cfg.step_bytes();
            std::copy(t.steps[s].head_rgb.begin(), t.steps[s].head_rgb.end(), dst);
            std::copy(t.steps[s].back_rgb.begin(), t.steps[s].back_rgb.end(),
                      dst + cfg.image_bytes());
            b.actions[row] = t.steps[s].action;
            b.padded[row] = t.padded[s] ? 1 : 0;
        }
    }
    return b;
}

namespace {

struct AdamState {
    PolicyParams m, v;
    std::uint64_t t = 0;
};

void sgd_update(PolicyParams& p, const PolicyParams& g, double lr) {
    auto* gp = const_cast<PolicyParams*>(&g);
    int i = 0;
    std::array<Mat*, 17> gm{};
    gp->for_each([&](const char*, Mat& m) { gm[i++] = &m; });
    i = 0;
    p.for_each([&](const char*, Mat& m) {
        const Mat& gmat = *gm[i++];
        for (std::size_t j = 0; j < m.size(); ++j) m.v[j] -= lr * gmat.v[j];
    });
}

void adam_update(PolicyParams& p, const PolicyParams& g, AdamState& st, const TrainConfig& cfg,
                 double lr) {
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.t));
    auto* gp = const_cast<PolicyParams*>(&g);
    std::array<Mat*, 17> gm{}, mm{}, vm{};
    int i = 0;
    gp->for_each([&](const char*, Mat& m) { gm[i++] = &m; });
    i = 0;
    st.m.for_each([&](const char*, Mat& m) { mm[i++] = &m; });
    i = 0;
    st.v.for_each([&](const char*, Mat& m) { vm[i++] = &m; });
    i = 0;
    p.for_each([&](const char*, Mat& m) {
        Mat& mo = *mm[i];
        Mat& va = *vm[i];
        const Mat& gr = *gm[i];
        ++i;
        for (std::size_t j = 0; j < m.size(); ++j) {
            mo.v[j] = cfg.adam_beta1 * mo.v[j] + (1.0 - cfg.adam_beta1) * gr.v[j];
            va.v[j] = cfg.adam_beta2 * va.v[j] + (1.0 - cfg.adam_beta2) * gr.v[j] * gr.v[j];
            m.v[j] -= lr * (mo.v[j] / bc1) / (std::sqrt(va.v[j] / bc2) + cfg.adam_eps);
        }
    });
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_below(i)]);
}

}  // namespace

PolicyParams train_student(const data::DatasetReader& reader, const ModelConfig& cfg,
                           const TrainConfig& train) {
    if (reader.size() == 0) throw std::invalid_argument("train_student: dataset is empty");

    PolicyParams params = PolicyParams::init(cfg, train.seed);
    AdamState adam;
    if (train.optimizer == "adam") {
        adam.m = PolicyParams::zeros(cfg);
        adam.v = PolicyParams::zeros(cfg);
    } else if (train.optimizer != "sgd") {
        throw std::invalid_argument("unknown optimizer: " + train.optimizer);
    }

    std::ofstream log;
    if (!train.log_path.empty()) {
        log.open(train.log_path);
        if (!log) throw std::runtime_error("cannot open training log: " + train.log_path);
        log << "epoch,step,loss,lr\n";
    }

    std::vector<std::size_t> indices(reader.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

    if (!train.quiet)
        std::printf("train: %zu trajectories, %zu parameters, %d epochs, optimizer=%s\n",
                    reader.size(), params.count(), train.epochs, train.optimizer.c_str());

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        Rng rng(derive_seed(train.seed, 0xE000 + static_cast<std::uint64_t>(epoch)));
        shuffle_indices(indices, rng);
        const double lr = train.lr * std::pow(train.lr_decay, epoch);

        double epoch_loss = 0.0;
        int steps = 0;
        for (std::size_t off = 0; off < indices.size(); off += train.batch) {
            const std::size_t hi = std::min(indices.size(), off + train.batch);
            const std::vector<std::size_t> slice(indices.begin() + off, indices.begin() + hi);
            const Batch batch = batch_from_trajectories(reader, slice, cfg);
            Gradients g;
            try {
                g = grad(params, batch);
            } catch (const NonFiniteLoss&) {
                throw DivergedLoss();
            }
            if (train.optimizer == "adam") {
                adam_update(params, g.tensors, adam, train, lr);
            } else {
                sgd_update(params, g.tensors, lr);
            }
            epoch_loss += g.loss;
            ++steps;
            if (log) log << epoch << "," << steps << "," << g.loss << "," << lr << "\n";
            if (!train.quiet && steps % train.log_every == 0)
                std::printf("  epoch %d step %d loss %.4f lr %.5f\n", epoch, steps, g.loss, lr);
        }
        if (!train.quiet)
            std::printf("epoch %d mean loss %.4f\n", epoch,
                        epoch_loss / std::max(1, steps));
    }
    return params;
}

}  // namespace tsim::learn
