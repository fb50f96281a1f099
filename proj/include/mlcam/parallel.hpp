#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mlcam {

// Worker cap: min(hardware_concurrency, MLCAM_THREADS). MLCAM_THREADS=1
// forces sequential execution.
inline int worker_count() {
  static const int cached = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("MLCAM_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
    }
    return n;
  }();
  return cached;
}

// Runs fn(0..n-1) across workers. Each index is independent; callers write
// results into pre-sized slots so the outcome does not depend on the thread
// count. The lowest-index exception wins and is rethrown on the caller.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }
}

}  // namespace mlcam
