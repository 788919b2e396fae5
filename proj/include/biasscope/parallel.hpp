#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace biasscope {

// Runs fn(i) for i in [0, n) on at most `workers` threads. Items are claimed in
// index order; callers write results into index-addressed slots, so output
// order never depends on completion order. Returns one exception_ptr per item
// (null on success).
template <class Fn>
std::vector<std::exception_ptr> run_indexed(std::size_t n, std::size_t workers, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(n, std::max<std::size_t>(workers, 1));
    if (threads <= 1) {
        worker();
        return errors;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return errors;
}

}  // namespace biasscope
