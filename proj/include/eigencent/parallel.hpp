// Deterministic fork-join helper. EIGENCENT_THREADS caps the worker count;
// each index writes its own output slot so results never depend on scheduling.
#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace eigencent {

inline unsigned worker_count() {
    unsigned workers = std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
    if (const char* env = std::getenv("EIGENCENT_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap < 1)
                workers = 1;
            else if (static_cast<unsigned>(cap) < workers)
                workers = static_cast<unsigned>(cap);
        } catch (...) {
            // unparsable value: keep hardware default
        }
    }
    return workers;
}

/// Runs fn(i) for i in [0, n). Static contiguous partitioning.
template <typename Fn>
void parallel_for(std::size_t n, const Fn& fn) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t threads = std::min<std::size_t>(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace eigencent
