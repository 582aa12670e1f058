#include "rdunet/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace rdunet {

namespace {
std::atomic<int> g_threads{0};
}

void set_threads(int threads) { g_threads.store(threads < 0 ? 0 : threads); }

int threads() { return g_threads.load(); }

void init_threads_from_env() {
  const char* v = std::getenv("RDUNET_THREADS");
  if (v == nullptr) {
    set_threads(0);
    return;
  }
  try {
    set_threads(std::stoi(v));
  } catch (...) {
    set_threads(0);
  }
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  int workers = threads();
  if (workers <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    std::int64_t lo = n * t / workers;
    std::int64_t hi = n * (t + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rdunet
