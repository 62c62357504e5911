#pragma once

#include <cstddef>
#include <functional>

namespace dsreg::parallel {

// Process-wide worker count. 0 selects std::thread::hardware_concurrency().
void set_threads(int n);
int threads();

// Splits [0, n) into threads() contiguous chunks (fewer when n is small) and
// calls fn(worker, begin, end) for each. Chunk boundaries depend only on n and
// the worker count, so per-worker partial sums merged in worker order give a
// reduction order that is fixed for a given thread count.
void for_chunks(std::size_t n,
                const std::function<void(int, std::size_t, std::size_t)>& fn);

int chunk_count(std::size_t n);

} // namespace dsreg::parallel
