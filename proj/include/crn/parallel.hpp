#pragma once

// Deterministic fork-join over an index range. Work is split into
// `threads` contiguous chunks; chunks must write disjoint state so the
// result cannot depend on the split or on scheduling.

#include <cstdint>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

namespace crn {

template <class F>
void parallel_for(std::int64_t n, int threads, F&& fn) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  const std::int64_t chunks = std::min<std::int64_t>(threads, n);
  if (chunks == 1) {
    fn(std::int64_t{0}, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(chunks));
  std::vector<std::exception_ptr> errs(static_cast<size_t>(chunks));
  const std::int64_t step = (n + chunks - 1) / chunks;
  for (std::int64_t t = 0; t < chunks; ++t) {
    const std::int64_t begin = t * step;
    const std::int64_t end = std::min(n, begin + step);
    pool.emplace_back([&, begin, end, t] {
      try {
        fn(begin, end, static_cast<int>(t));
      } catch (...) {
        errs[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace crn
