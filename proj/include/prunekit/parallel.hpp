#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace prunekit {

// Thread count resolution: explicit request > PRUNEKIT_THREADS > hardware.
inline int resolve_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PRUNEKIT_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). Work items must write to disjoint state;
// the partition into chunks is fixed by n alone, so any reduction done
// per chunk index is independent of the thread count.
inline void parallel_for_chunks(std::size_t n, std::size_t chunk_size, int threads,
                                const std::function<void(std::size_t chunk_idx,
                                                         std::size_t begin,
                                                         std::size_t end)>& fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    const std::size_t num_chunks = (n + chunk_size - 1) / chunk_size;
    if (threads <= 1 || num_chunks == 1) {
        for (std::size_t c = 0; c < num_chunks; ++c) {
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= num_chunks) return;
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        }
    };
    const int nthreads = std::min<std::size_t>(threads, num_chunks);
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
    parallel_for_chunks(n, 1, threads,
                        [&](std::size_t, std::size_t b, std::size_t) { fn(b); });
}

}  // namespace prunekit
