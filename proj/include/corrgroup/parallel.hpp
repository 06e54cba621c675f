#ifndef CORRGROUP_PARALLEL_HPP
#define CORRGROUP_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace corrgroup {

/**
 * Default worker count: `CORRGROUP_THREADS` if set, otherwise the number of cores.
 */
inline int default_threads() {
    if (const char* env = std::getenv("CORRGROUP_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/**
 * Run `fun(i)` for every `i` in `[0, n)` on up to `nthreads` threads.
 * Tasks must write to disjoint outputs; the first exception thrown is rethrown here.
 */
template<class Function>
void parallel_for(std::size_t n, int nthreads, Function fun) {
    std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(nthreads, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fun(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;

    auto worker = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fun(i);
            } catch (...) {
                std::lock_guard<std::mutex> guard(failure_lock);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}

#endif
