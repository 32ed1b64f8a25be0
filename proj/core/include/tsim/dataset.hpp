#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsim/render.hpp"
#include "tsim/scenegen.hpp"
#include "tsim/sim.hpp"

namespace tsim::data {

struct EpisodeStep {
    render::Observation obs;
    sim::Action action;
    double clock = 0.0;  // seconds at decision time
};

struct Episode {
    std::uint64_t ordinal = 0;    // collection ordinal; doubles as episode id
    std::uint64_t scene_seed = 0;
    std::uint64_t rand_seed = 0;
    scenegen::TaskSpec task;
    std::vector<EpisodeStep> steps;
    sim::Status outcome = sim::Status::Timeout;
    double duration = 0.0;
};

inline constexpr int kTrajectoryLen = 8;

struct TrajectoryStep {
    std::vector<std::uint8_t> head_rgb;
    std::vector<std::uint8_t> back_rgb;
    std::array<std::uint8_t, 3> action{};
};

struct Trajectory {
    std::uint64_t episode_id = 0;
    std::uint16_t start_index = 0;
    std::array<bool, kTrajectoryLen> padded{};  // true only on a left prefix
    std::vector<std::uint16_t> tokens;
    std::array<TrajectoryStep, kTrajectoryLen> steps;
};

// Non-overlapping windows [0,8), [8,16), ...; a short tail re-anchors to the
// final 8 steps; an episode shorter than 8 yields one left-padded trajectory.
std::vector<Trajectory> chunk_episode(const Episode& episode, int window = kTrajectoryLen);

// ---- dataset file ----------------------------------------------------------

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptRecord : std::runtime_error {
    CorruptRecord(std::size_t index, const std::string& what)
        : std::runtime_error("corrupt record " + std::to_string(index) + ": " + what),
          index(index) {}
    std::size_t index;
};

struct DatasetHeader {
    int version = 1;
    int image_w = 64, image_h = 64;
    std::vector<double> fwd_bins{sim::kForwardBins.begin(), sim::kForwardBins.end()};
    std::vector<double> lat_bins{sim::kLateralBins.begin(), sim::kLateralBins.end()};
    std::vector<double> yaw_bins{sim::kYawBins.begin(), sim::kYawBins.end()};
    render::CameraCfg head = render::CameraCfg::head();
    render::CameraCfg back = render::CameraCfg::back();
    std::uint64_t vocab_hash = 0;
    std::uint64_t n_trajectories = 0;
    std::uint64_t n_episodes = 0;
};

// Streamed writer: JSON header line (fixed-width, patched on finalize), then
// length-prefixed little-endian binary records.
class DatasetWriter {
public:
    DatasetWriter(const std::string& path, DatasetHeader header);
    ~DatasetWriter();

    void append(const Trajectory& traj);
    void add_episode_count(std::uint64_t n) { episodes_ += n; }
    void finalize();

    std::uint64_t trajectories_written() const { return written_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::uint64_t written_ = 0;
    std::uint64_t episodes_ = 0;
    bool finalized_ = false;
};

class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);
    ~DatasetReader();

    const DatasetHeader& header() const;
    std::size_t size() const;
    Trajectory read(std::size_t index) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

void write_dataset(const std::vector<Trajectory>& trajectories, const std::string& path,
                   DatasetHeader header);
std::vector<Trajectory> read_dataset(const std::string& path);

// ---- rollout collection ----------------------------------------------------

struct ZeroSuccessRate : std::runtime_error {
    ZeroSuccessRate()
        : std::runtime_error("1000 consecutive episodes dropped; policy never succeeds") {}
};

enum class KeepRule { SuccessOnly, All };

// Per-ordinal episode factory: runs one full episode for the given collection
// ordinal. Seeds must be derived from (root seed, ordinal) so output is
// independent of worker count.
using EpisodeRunner = std::function<Episode(std::uint64_t ordinal)>;

struct CollectStats {
    std::uint64_t episodes_run = 0;
    std::uint64_t episodes_kept = 0;
    std::uint64_t trajectories = 0;
};

// Runs episodes until `n_target` is reached, committing results in ordinal
// order through a bounded window so the dataset content is invariant to the
// worker count. `count_trajectories` switches the stop rule from kept
// episodes to kept trajectories.
CollectStats collect_rollouts(const EpisodeRunner& runner, std::uint64_t n_target,
                              KeepRule keep, int workers, DatasetWriter& writer,
                              bool count_trajectories = false);

// Episode log JSON for the replay subcommand (scene + task + seeds + actions).
std::string episode_log_to_json(const Episode& episode, const scenegen::Scene& scene);
void write_episode_log(const Episode& episode, const scenegen::Scene& scene,
                       const std::string& path);

}  // namespace tsim::data
