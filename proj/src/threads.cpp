#include "rslab/threads.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace rslab {

int worker_count() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("RSLAB_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
  }();
  return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = worker_count();
  if (workers == 1 || n < 4096) {
    fn(0, n);
    return;
  }
  const int chunks = static_cast<int>(std::min<std::int64_t>(workers, n));
  const std::int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks) - 1);
  for (int c = 1; c < chunks; ++c) {
    std::int64_t lo = c * per;
    std::int64_t hi = std::min<std::int64_t>(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(0, std::min<std::int64_t>(n, per));
  for (auto& t : pool) t.join();
}

}  // namespace rslab
