#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace relic {

// Runs fn(i) for i in [0, n). With threads <= 1 the loop is plain and
// sequential, which is the mode all bitwise-determinism guarantees refer to.
// With more threads, items are claimed from a shared counter; fn(i) must not
// touch shared mutable state, so the per-item arithmetic is identical to the
// sequential run and any reduction done afterwards in index order is too.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nworkers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(nworkers));
  std::mutex mu;
  int next = 0;
  std::exception_ptr err;
  for (int t = 0; t < nworkers; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        int i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= n || err) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace relic
