#include "nefes/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace nefes {

std::size_t worker_count() {
    static const std::size_t n = [] {
        std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("NEFES_THREADS")) {
            long v = std::atol(env);
            if (v >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(v));
        }
        return hw;
    }();
    return n;
}

void parallel_for_blocks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::min(worker_count(), n);
    if (workers == 1) {
        fn(0, 0, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t b = 0; b < workers; ++b) {
        const std::size_t begin = b * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, b, begin, end] { fn(b, begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace nefes
