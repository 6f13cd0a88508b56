#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace morphotok {

/// Process-wide override used by timing paths that must run single-threaded.
inline unsigned& thread_cap_override() {
    static unsigned cap = 0;
    return cap;
}

struct ScopedSingleThread {
    unsigned saved;
    ScopedSingleThread() : saved(thread_cap_override()) { thread_cap_override() = 1; }
    ~ScopedSingleThread() { thread_cap_override() = saved; }
};

/// Worker cap from MORPHOTOK_THREADS; 0 or unset means hardware concurrency.
inline unsigned thread_budget() {
    if (thread_cap_override() != 0) return thread_cap_override();
    unsigned n = 0;
    if (const char* env = std::getenv("MORPHOTOK_THREADS")) {
        n = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
    }
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

/// Static chunked parallel loop. Work items must write only to their own
/// slots; results are then order-independent of the schedule.
inline void parallel_for(std::size_t n, unsigned max_threads,
                         const std::function<void(std::size_t)>& fn) {
    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(n, std::max(1u, max_threads)));
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace morphotok
