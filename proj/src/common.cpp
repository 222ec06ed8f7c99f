#include "tcsf/common.hpp"

#include <algorithm>
#include <cstdlib>

namespace tcsf {

namespace {

int initial_thread_count() {
  if (const char* env = std::getenv("TCSF_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return std::max(1, std::min(static_cast<int>(hw), 8));
}

std::atomic<int> g_threads{initial_thread_count()};

}  // namespace

int default_thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_default_thread_count(int n) { g_threads.store(std::max(1, n), std::memory_order_relaxed); }

}  // namespace tcsf
