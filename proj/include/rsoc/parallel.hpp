#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rsoc {

namespace detail {
inline std::atomic<unsigned>& worker_count() {
    static std::atomic<unsigned> count{1};
    return count;
}
}  // namespace detail

/// Number of worker threads used by data-parallel loops. Results never depend
/// on this value: every loop writes per-index outputs and reductions happen
/// afterwards in index order.
inline unsigned workers() { return detail::worker_count().load(); }

inline void set_workers(unsigned n) { detail::worker_count().store(std::max(1u, n)); }

/// Static-chunked parallel loop over [0, n). `body(i)` must only write state
/// owned by index i.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const std::size_t w = std::min<std::size_t>(workers(), n);
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> threads;
    threads.reserve(w);
    const std::size_t chunk = (n + w - 1) / w;
    for (std::size_t k = 0; k < w; ++k) {
        const std::size_t begin = k * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace rsoc
