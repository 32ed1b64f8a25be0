#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "tsim/dataset.hpp"
#include "tsim/model.hpp"

namespace tsim::learn {

struct DivergedLoss : std::runtime_error {
    DivergedLoss() : std::runtime_error("training loss diverged (non-finite)") {}
};

struct TrainConfig {
    int epochs = 4;
    int batch = 16;
    double lr = 0.08;
    double lr_decay = 0.7;  // per-epoch multiplier
    std::uint64_t seed = 0;
    std::string optimizer = "sgd";  // "sgd" | "adam"
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string log_path;       // CSV: epoch, step, loss, lr; empty = no file
    int log_every = 25;         // console cadence, steps
    bool quiet = false;
};

Batch batch_from_trajectories(const data::DatasetReader& reader,
                              const std::vector<std::size_t>& indices,
                              const ModelConfig& cfg);

// Behavior cloning with the configured schedule; bit-deterministic given the
// seed (worker parallelism lives inside the matmul kernels only).
PolicyParams train_student(const data::DatasetReader& reader, const ModelConfig& cfg,
                           const TrainConfig& train);

}  // namespace tsim::learn
