#include "stsc/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace stsc {

namespace {

int read_env_threads() {
  const char* env = std::getenv("STSC_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (...) {
    return 1;
  }
}

std::atomic<int>& threads() {
  static std::atomic<int> n{read_env_threads()};
  return n;
}

std::atomic<Fault> g_fault{Fault::none};

}  // namespace

int thread_count() { return threads().load(); }

void set_thread_count(int n) { threads().store(std::max(1, n)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::int64_t i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void set_fault(Fault fault) { g_fault.store(fault); }

Fault active_fault() { return g_fault.load(); }

}  // namespace stsc
