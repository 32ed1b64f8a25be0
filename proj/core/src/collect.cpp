#include <condition_variable>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "tsim/dataset.hpp"

namespace tsim::data {

namespace {
constexpr std::uint64_t kMaxConsecutiveDrops = 1000;
}

CollectStats collect_rollouts(const EpisodeRunner& runner, std::uint64_t n_target, KeepRule keep,
                              int workers, DatasetWriter& writer, bool count_trajectories) {
    if (n_target == 0) throw std::invalid_argument("collect_rollouts: n_target must be >= 1");
    workers = std::max(1, workers);
    const std::uint64_t window = static_cast<std::uint64_t>(workers) * 4 + 4;

    std::mutex mu;
    std::condition_variable cv;
    std::uint64_t next_ordinal = 0;
    std::uint64_t commit_next = 0;
    std::map<std::uint64_t, Episode> pending;
    std::uint64_t consecutive_drops = 0;
    CollectStats stats;
    bool stop = false;
    std::exception_ptr error;

    // Commits every ready episode in ordinal order. Runs under the lock.
    const auto drain = [&]() {
        for (auto it = pending.find(commit_next); it != pending.end() && !stop;
             it = pending.find(commit_next)) {
            Episode ep = std::move(it->second);
            pending.erase(it);
            ++commit_next;
            ++stats.episodes_run;
            const bool kept = keep == KeepRule::All || ep.outcome == sim::Status::Success;
            if (kept) {
                consecutive_drops = 0;
                ++stats.episodes_kept;
                writer.add_episode_count(1);
                for (const auto& traj : chunk_episode(ep)) {
                    writer.append(traj);
                    ++stats.trajectories;
                    if (count_trajectories && stats.trajectories >= n_target) {
                        stop = true;
                        break;
                    }
                }
                if (!count_trajectories && stats.episodes_kept >= n_target) stop = true;
            } else if (++consecutive_drops >= kMaxConsecutiveDrops) {
                error = std::make_exception_ptr(ZeroSuccessRate());
                stop = true;
            }
        }
    };

    const auto work = [&]() {
        for (;;) {
            std::uint64_t mine;
            {
                std::unique_lock<std::mutex> lock(mu);
                cv.wait(lock, [&] { return stop || next_ordinal < commit_next + window; });
                if (stop) return;
                mine = next_ordinal++;
            }
            Episode ep;
            try {
                ep = runner(mine);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) error = std::current_exception();
                stop = true;
                cv.notify_all();
                return;
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                ep.ordinal = mine;
                pending.emplace(mine, std::move(ep));
                drain();
                cv.notify_all();
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) threads.emplace_back(work);
    work();
    for (auto& t : threads) t.join();

    if (error) std::rethrow_exception(error);
    return stats;
}

}  // namespace tsim::data
