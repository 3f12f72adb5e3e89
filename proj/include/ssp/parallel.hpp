#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ssp {

namespace detail {
inline std::atomic<int>& thread_count() {
    static std::atomic<int> n{1};
    return n;
}
} // namespace detail

/// Worker count used by parallel_for. Results never depend on it: work items
/// write disjoint outputs and reductions happen afterwards in index order.
inline int threads() { return detail::thread_count().load(); }

inline void set_threads(int n) {
    if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    detail::thread_count().store(n);
}

/// Run f(i) for i in [0, n). Items are handed out dynamically; the first
/// exception thrown by any item is rethrown on the calling thread.
template <class F>
void parallel_for(int n, F&& f) {
    const int workers = std::min(threads(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto run = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!err) err = std::current_exception();
                next.store(n);
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace ssp
