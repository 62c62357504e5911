#include "dsreg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dsreg::parallel {

namespace {
std::atomic<int> g_threads{0};
}

void set_threads(int n) { g_threads.store(std::max(0, n)); }

int threads() {
    const int n = g_threads.load();
    if (n > 0) return n;
    return std::max(1u, std::thread::hardware_concurrency());
}

int chunk_count(std::size_t n) {
    if (n == 0) return 0;
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads()), n));
}

void for_chunks(std::size_t n,
                const std::function<void(int, std::size_t, std::size_t)>& fn) {
    const int chunks = chunk_count(n);
    if (chunks == 0) return;
    auto bounds = [&](int w) {
        return std::pair{n * static_cast<std::size_t>(w) / static_cast<std::size_t>(chunks),
                         n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(chunks)};
    };
    if (chunks == 1) {
        fn(0, 0, n);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(chunks - 1));
    auto run = [&](int w) {
        try {
            const auto [b, e] = bounds(w);
            fn(w, b, e);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    for (int w = 1; w < chunks; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace dsreg::parallel
