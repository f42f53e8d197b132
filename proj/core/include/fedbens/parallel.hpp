#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fedbens {

// Runs fn(i) for i in [0, count) across up to `threads` workers. Each index
// owns its output slot, so results are identical for any schedule. The first
// exception thrown by a worker is rethrown on the calling thread.
inline void parallel_for(std::size_t count, int threads,
                         const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(count, threads < 1 ? 1 : static_cast<std::size_t>(threads));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fedbens
