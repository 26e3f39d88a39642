#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace persuasion {

inline std::atomic<int>& thread_cap_storage() {
    static std::atomic<int> cap{0};
    return cap;
}

// 0 means hardware concurrency.
inline void set_thread_cap(int n) { thread_cap_storage().store(std::max(0, n)); }

inline int worker_count() {
    int cap = thread_cap_storage().load();
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    return cap > 0 ? std::min(cap, hw) : hw;
}

// Block size is fixed so block partials never depend on the worker count.
inline constexpr std::size_t kBlock = 4096;

inline std::size_t block_count(std::size_t n) { return (n + kBlock - 1) / kBlock; }

// fn(blockIndex, begin, end) for every block; blocks are claimed dynamically.
template <class F>
void for_each_block(std::size_t n, F&& fn) {
    const std::size_t nb = block_count(n);
    const int workers = std::min<int>(worker_count(), static_cast<int>(nb));
    if (workers <= 1) {
        for (std::size_t b = 0; b < nb; ++b) fn(b, b * kBlock, std::min(n, (b + 1) * kBlock));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex errMutex;
    auto body = [&] {
        try {
            for (;;) {
                const std::size_t b = next.fetch_add(1);
                if (b >= nb) break;
                fn(b, b * kBlock, std::min(n, (b + 1) * kBlock));
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(errMutex);
            if (!err) err = std::current_exception();
            next.store(nb);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

template <class F>
void parallel_for(std::size_t n, F&& fn) {
    for_each_block(n, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
}

// Pairwise fold over an ordered list of partials; shape depends only on size.
template <class T, class Combine>
T pairwise_fold(std::vector<T> parts, Combine&& combine) {
    if (parts.empty()) return T{};
    while (parts.size() > 1) {
        std::vector<T> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(combine(parts[i], parts[i + 1]));
        if (parts.size() % 2) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return std::move(parts.front());
}

// Deterministic reduction: per-block partials, then a fixed pairwise tree.
template <class T, class BlockFn, class Combine>
T block_reduce(std::size_t n, BlockFn&& blockFn, Combine&& combine) {
    std::vector<T> parts(block_count(n));
    for_each_block(n, [&](std::size_t b, std::size_t lo, std::size_t hi) { parts[b] = blockFn(lo, hi); });
    return pairwise_fold(std::move(parts), combine);
}

}  // namespace persuasion
