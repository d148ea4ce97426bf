#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gmn {

namespace detail {
inline std::atomic<int>& thread_limit_slot() {
  static std::atomic<int> limit{0};
  return limit;
}
inline bool& in_parallel_region() {
  thread_local bool inside = false;
  return inside;
}
}  // namespace detail

/// Caps the number of worker threads used by parallel loops. 0 restores the default.
inline void set_thread_limit(int threads) { detail::thread_limit_slot().store(std::max(0, threads)); }

/// Effective worker count: explicit limit, else GMN_THREADS, else hardware concurrency.
inline int thread_limit() {
  int limit = detail::thread_limit_slot().load();
  if (limit > 0) return limit;
  if (const char* env = std::getenv("GMN_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Runs body(i) for i in [0, count). Each index is executed exactly once; the first
/// exception thrown by any task is rethrown after all workers join. Nested calls run serially.
template <typename Body>
void parallel_for(int count, Body&& body) {
  int workers = detail::in_parallel_region() ? 1 : std::min(thread_limit(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    bool& inside = detail::in_parallel_region();
    const bool outer = inside;
    inside = true;
    struct Reset {
      bool& flag;
      bool value;
      ~Reset() { flag = value; }
    } reset{inside, outer};
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace gmn
