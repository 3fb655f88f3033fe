#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace uicoder {

// Runs fn(0..n-1) on up to `width` threads (the caller included). Rethrows
// the exception of the lowest failing index after all work has finished.
template <class Fn>
void parallel_for(std::size_t n, std::size_t width, Fn&& fn) {
    if (n == 0) return;
    width = std::clamp<std::size_t>(width, 1, n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> threads;
        threads.reserve(width - 1);
        for (std::size_t w = 1; w < width; ++w) threads.emplace_back(worker);
        worker();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace uicoder
