#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace attnconv {

/// Worker cap for data-parallel loops inside ops. Read once from ATTN_THREADS
/// (default 1). Loops parallelized this way only ever write disjoint outputs, so
/// results do not depend on the worker count.
inline int& thread_override() {
    static int n = 0;
    return n;
}

/// Overrides ATTN_THREADS for the rest of the process; 0 restores it.
inline void set_max_threads(int n) { thread_override() = std::max(0, n); }

inline int max_threads() {
    if (thread_override() > 0) return thread_override();
    static const int cap = [] {
        const char* env = std::getenv("ATTN_THREADS");
        if (env == nullptr) return 1;
        try {
            return std::max(1, std::stoi(env));
        } catch (...) {
            return 1;
        }
    }();
    return cap;
}

/// Calls fn(i) for i in [0, n). Iterations must be independent.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::int64_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace attnconv
