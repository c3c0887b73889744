#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace encfm {

/// Runs fn(worker) for worker in [0, workers) on separate threads and joins.
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void runWorkers(unsigned workers, Fn&& fn) {
    if (workers <= 1) {
        fn(0u);
        return;
    }
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                fn(w);
            } catch (...) {
                std::lock_guard lock(m);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Half-open slice [begin, end) of [0, total) owned by worker w of n.
inline std::pair<std::size_t, std::size_t> evenSlice(std::size_t total, unsigned w, unsigned n) {
    const std::size_t per = total / n, extra = total % n;
    const std::size_t begin = w * per + std::min<std::size_t>(w, extra);
    return {begin, begin + per + (w < extra ? 1 : 0)};
}

}  // namespace encfm
