#pragma once

#include <cstdint>
#include <functional>

namespace stsc {

/// Worker cap for within-op parallelism, read once from STSC_THREADS (default 1).
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; callers
/// reduce partial results in index order so the result never depends on the
/// thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// Test-only fault injection used as a negative control for gradient checks.
enum class Fault : std::uint8_t { none, conv2d_backward };

void set_fault(Fault fault);
Fault active_fault();

class ScopedFault {
 public:
  explicit ScopedFault(Fault fault) : previous_(active_fault()) { set_fault(fault); }
  ~ScopedFault() { set_fault(previous_); }
  ScopedFault(const ScopedFault&) = delete;
  ScopedFault& operator=(const ScopedFault&) = delete;

 private:
  Fault previous_;
};

}  // namespace stsc
