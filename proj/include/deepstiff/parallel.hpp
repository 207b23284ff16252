#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace deepstiff {

inline std::atomic<unsigned>& thread_setting() {
    static std::atomic<unsigned> n{1};
    return n;
}

inline void set_threads(unsigned n) { thread_setting() = std::max(1u, n); }
inline unsigned threads() { return thread_setting(); }

/// Static contiguous partition of [0, n); fn(i) must write only to slot i.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t t = std::min<std::size_t>(threads(), std::max<std::size_t>(n, 1));
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(t);
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t k = 0; k < t; ++k) {
        pool.emplace_back([&, k] {
            try {
                const std::size_t lo = k * chunk, hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errs[k] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace deepstiff
