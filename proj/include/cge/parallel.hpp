#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cge {

// Runs fn(i) for i in [0, n). Each index owns its output slot, so results are
// bit-identical regardless of thread count. CGE_THREADS=1 forces serial.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("CGE_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) hw = static_cast<unsigned>(v);
    }
    if (hw <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<size_t>(hw, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace cge
