#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace weaklab {

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
}

// Runs body(worker, begin, end) over contiguous chunks of [0, n). Chunking
// is static, so any caller-side reduction over worker index is
// deterministic regardless of scheduling.
template <typename Body>
void parallel_chunks(std::int64_t n, int threads, Body&& body) {
  if (n <= 0) return;
  const int t = static_cast<int>(
      std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));
  if (t == 1) {
    body(0, std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  const std::int64_t chunk = (n + t - 1) / t;
  for (int w = 0; w < t; ++w) {
    const std::int64_t b = w * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, w, b, e] { body(w, b, e); });
  }
  for (auto& th : pool) th.join();
}

} // namespace weaklab
