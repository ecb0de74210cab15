#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace uncd {

namespace detail {

inline int default_thread_count() {
    if (const char* env = std::getenv("UNCD_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::atomic<int>& thread_setting() {
    static std::atomic<int> n{default_thread_count()};
    return n;
}

}  // namespace detail

inline int max_threads() { return detail::thread_setting().load(std::memory_order_relaxed); }

inline void set_max_threads(int n) {
    detail::thread_setting().store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

/// Runs f(begin, end) over [0, count) split into contiguous chunks, one per
/// thread. Work items must be independent across chunk boundaries; chunking
/// never splits a single index, so results are identical for any thread count
/// as long as each index's work is self-contained.
template <typename F>
void parallel_for(std::size_t count, F&& f, std::size_t min_per_thread = 1) {
    if (count == 0) return;
    const int setting = max_threads();
    std::size_t nthreads = setting < 1 ? 1 : static_cast<std::size_t>(setting);
    if (min_per_thread > 0) {
        const std::size_t cap = (count + min_per_thread - 1) / min_per_thread;
        if (nthreads > cap) nthreads = cap;
    }
    if (nthreads > count) nthreads = count;
    if (nthreads <= 1) {
        f(std::size_t{0}, count);
        return;
    }

    std::exception_ptr first_error;
    std::mutex err_mu;
    auto run = [&](std::size_t begin, std::size_t end) {
        try {
            f(begin, end);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!first_error) first_error = std::current_exception();
        }
    };

    std::vector<std::thread> workers;
    workers.reserve(nthreads - 1);
    const std::size_t chunk = count / nthreads;
    const std::size_t rem = count % nthreads;
    std::size_t begin = 0;
    for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t len = chunk + (t < rem ? 1 : 0);
        const std::size_t end = begin + len;
        if (t + 1 == nthreads) {
            run(begin, end);
        } else {
            workers.emplace_back(run, begin, end);
        }
        begin = end;
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace uncd
