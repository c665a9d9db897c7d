// SPDX-License-Identifier: Apache-2.0

#include "trex/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace trex {

namespace {
NumericMode g_mode = NumericMode::f32;
}

void set_numeric_mode(NumericMode mode) { g_mode = mode; }
NumericMode numeric_mode() { return g_mode; }

std::size_t worker_thread_count() {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  n = std::min<std::size_t>(n, 8);
  if (const char* env = std::getenv("TREX_THREADS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = std::min(worker_thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace trex
