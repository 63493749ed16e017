#pragma once

#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace puyun {

enum class WorkerExec { kSequential, kParallel };

// PUYUN_THREADS caps how many worker threads kParallel may spawn.
inline int thread_cap() {
    if (const char* env = std::getenv("PUYUN_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(0..n-1). Workers write only into their own slots, so parallel and
// sequential execution produce identical buffers; any reduction over the
// results must then happen in index order. The lowest-index exception, if
// any, is rethrown after all workers finish.
inline void run_workers(int n, const std::function<void(int)>& fn, WorkerExec exec) {
    if (exec == WorkerExec::kSequential || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    int stride = std::min(n, thread_cap());
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(stride));
    for (int t = 0; t < stride; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += stride) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

}  // namespace puyun
