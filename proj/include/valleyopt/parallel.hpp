#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace valleyopt {

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// worker. Results must be written to per-index slots by the caller; nothing
// here depends on scheduling order, so output is identical for any worker
// count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t w = static_cast<std::size_t>(workers);
    if (w > n) w = n;
    std::vector<std::thread> pool;
    pool.reserve(w);
    std::exception_ptr err;
    std::mutex err_mu;
    for (std::size_t k = 0; k < w; ++k) {
        std::size_t lo = n * k / w;
        std::size_t hi = n * (k + 1) / w;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace valleyopt
