#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace indmap {

// Runs fn(i) for i in [0, n). Results must be written to preallocated
// per-index slots so the outcome is identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = std::min<unsigned>(threads, std::thread::hardware_concurrency() > 0
                                                             ? std::thread::hardware_concurrency() * 2
                                                             : threads);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace indmap
