#include "direal/parallel.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

namespace direal {

unsigned thread_cap() {
    static const unsigned cap = [] {
        const char* env = std::getenv("DIREAL_THREADS");
        if (!env) return 1u;
        long v = std::strtol(env, nullptr, 10);
        return v <= 1 ? 1u : static_cast<unsigned>(v);
    }();
    return cap;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned cap = thread_cap();
    if (cap <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(cap, n);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace direal
