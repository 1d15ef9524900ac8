#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace scnn {

// How a batch is spread over threads. With `deterministic` set, per-thread
// partial results are reduced in thread-index order so a fixed thread count
// always yields the same bits; otherwise they are reduced as threads finish.
struct ExecOptions {
  std::size_t threads = 1;
  bool deterministic = true;
};

namespace detail {

// Calls fn(begin, end, worker) over contiguous chunks of [0, n).
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::size_t worker_count(std::size_t n, std::size_t threads) {
  return std::max<std::size_t>(1, std::min(threads, n));
}

}  // namespace detail
}  // namespace scnn
