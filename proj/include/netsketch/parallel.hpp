#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace netsketch {

/// Worker cap: NETSKETCH_THREADS when set (minimum 1), otherwise the
/// hardware concurrency.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("NETSKETCH_THREADS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) return std::size_t(parsed);
        return 1;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

/// Run body(i) for i in [0, count) across worker threads. Each index must
/// touch only its own outputs; results are then independent of scheduling.
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t workers = std::min(thread_cap(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t wid = 0; wid < workers; ++wid) {
        threads.emplace_back([&, wid] {
            try {
                for (std::size_t i = wid; i < count; i += workers) body(i);
            } catch (...) {
                std::scoped_lock lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace netsketch
