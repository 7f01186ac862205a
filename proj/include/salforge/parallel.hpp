#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace salforge {

// Process-wide worker budget for data-parallel loops. Results never depend
// on this value: parallel sections write disjoint outputs and reductions
// happen in a fixed index order afterwards.
inline std::atomic<unsigned>& worker_count_ref() {
  static std::atomic<unsigned> count{
      std::thread::hardware_concurrency() > 0
          ? std::thread::hardware_concurrency()
          : 1u};
  return count;
}

inline unsigned worker_count() { return worker_count_ref().load(); }
inline void set_worker_count(unsigned n) { worker_count_ref().store(n ? n : 1); }

// Static partition of [0, n) across workers; fn(i) must only touch state
// owned by index i. If workers throw, the lowest-index exception is
// rethrown after all threads join, so error behavior does not depend on
// scheduling.
template <typename Fn>
void parallel_for(std::size_t n, const Fn& fn) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

}  // namespace salforge
