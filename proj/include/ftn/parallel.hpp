#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ftn {

/// Rows per work chunk. Chunk boundaries never depend on the worker count,
/// so reductions over chunks are bitwise reproducible.
inline constexpr std::size_t kChunkRows = 256;

namespace detail {
inline std::size_t& worker_setting() {
    static std::size_t workers = 0;
    return workers;
}
}  // namespace detail

/// Sets the worker count; 0 selects FTN_THREADS or the hardware concurrency.
inline void set_worker_count(std::size_t n) { detail::worker_setting() = n; }

inline std::size_t worker_count() {
    if (detail::worker_setting() > 0) return detail::worker_setting();
    if (const char* env = std::getenv("FTN_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

inline std::size_t chunk_count(std::size_t rows) { return (rows + kChunkRows - 1) / kChunkRows; }

/// Calls fn(chunk, begin, end) for every chunk of [0, rows). Chunks are
/// distributed over workers; fn must only write chunk-private state.
template <class Fn>
void for_each_chunk(std::size_t rows, Fn&& fn) {
    const std::size_t chunks = chunk_count(rows);
    const std::size_t workers = std::min(worker_count(), chunks);
    auto run = [&](std::size_t c) {
        const std::size_t begin = c * kChunkRows;
        fn(c, begin, std::min(rows, begin + kChunkRows));
    };
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) run(c);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < chunks; c += workers) run(c);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Calls fn(i) for i in [0, n) on the worker pool. Tasks must be independent.
template <class Fn>
void for_each_index(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ftn
