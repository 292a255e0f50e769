#include "segvggt/numerics/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace segvggt::numerics {

namespace {

std::size_t default_budget() {
  if (const char* env = std::getenv("SEGVGGT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& budget() {
  static std::atomic<std::size_t> value{default_budget()};
  return value;
}

}  // namespace

std::size_t thread_budget() { return budget().load(); }

void set_thread_budget(std::size_t threads) { budget().store(std::max<std::size_t>(1, threads)); }

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers =
      std::min(thread_budget(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min(n, chunk));
}

}  // namespace segvggt::numerics
