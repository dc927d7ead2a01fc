#ifndef RBF_PARALLEL_HPP
#define RBF_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace rbf {

// Index-ordered parallel loop: runs fn(i) for i in [0, n) across contiguous
// chunks on `threads` workers.  Callers write results into per-index slots,
// so the output is identical for any thread count; the first failing chunk's
// exception is rethrown on the calling thread.
inline void for_each_index(std::size_t n, std::size_t threads,
                           const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&fn, &errors, t, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rbf

#endif  // RBF_PARALLEL_HPP
