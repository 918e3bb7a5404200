#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace complift {

// Worker count: explicit value if positive, else COMPLIFT_JOBS, else 1.
inline int resolve_jobs(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("COMPLIFT_JOBS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

// Splits [0, n) into contiguous ranges whose boundaries are multiples of
// `align` and runs fn(begin, end) on up to `jobs` threads. Each range is
// owned by exactly one call, so writes to disjoint output slices are safe.
template <class Fn>
void parallel_ranges(std::size_t n, int jobs, std::size_t align, Fn&& fn) {
    if (n == 0) return;
    align = std::max<std::size_t>(align, 1);
    const std::size_t units = (n + align - 1) / align;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), units);
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t per = (units + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(n, w * per * align);
        const std::size_t end = std::min(n, (w + 1) * per * align);
        if (begin >= end) break;
        threads.emplace_back([&, w, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace complift
