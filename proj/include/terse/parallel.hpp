#pragma once

#include <functional>
#include <cstddef>

namespace terse {

// Worker cap: TERSE_THREADS env var, else hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges, so
// any op whose writes are disjoint per index produces bitwise-identical
// results for every worker count. Falls through to a plain loop when n is
// small or only one worker is available.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& range_fn);

template <typename F>
void parallel_for_each(std::size_t n, F&& fn) {
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
}

}  // namespace terse
