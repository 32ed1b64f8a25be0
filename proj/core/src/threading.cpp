#include "tsim/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace tsim {

namespace {
std::atomic<int> g_workers{0};  // 0 = auto
}

void set_global_workers(int n) { g_workers.store(n < 1 ? 1 : n); }

int global_workers() {
    const int n = g_workers.load();
    if (n > 0) return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_ranges(int n, int workers, const std::function<void(int, int)>& fn) {
    workers = std::min(workers, n);
    if (workers <= 1 || n <= 1) {
        if (n > 0) fn(0, n);
        return;
    }
    const int chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) {
        const int begin = w * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back(fn, begin, end);
    }
    fn(0, std::min(n, chunk));
    for (auto& t : threads) t.join();
}

}  // namespace tsim
