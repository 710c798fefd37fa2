#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace cocycle_lab {

/* Worker count: COCYCLE_LAB_THREADS if set, else hardware concurrency,
 * clamped to [1, 16]. */
inline int default_thread_count() {
    if (const char* env = std::getenv("COCYCLE_LAB_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return std::min(n, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return std::clamp(static_cast<int>(hw == 0 ? 1 : hw), 1, 16);
}

/* Run chunk_fn(begin, end) over a static contiguous split of [0, n).
 * Results are deterministic for any thread count as long as chunks only
 * write disjoint output slots.  The first exception is rethrown. */
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& chunk_fn) {
    if (n == 0) return;
    std::size_t workers = static_cast<std::size_t>(default_thread_count());
    workers = std::min(workers, n);
    if (workers <= 1) {
        chunk_fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t b = w * chunk;
        std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&, w, b, e] {
            try {
                chunk_fn(b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

} // namespace cocycle_lab
