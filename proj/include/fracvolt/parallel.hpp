#pragma once

#include <functional>

namespace fracvolt {

// Worker count: an active ScopedThreadCount, else FRACVOLT_THREADS if set and
// positive, else the hardware count.
int thread_count();

// Overrides thread_count() for its lifetime; nests, not thread safe.
class ScopedThreadCount {
 public:
  explicit ScopedThreadCount(int n);
  ~ScopedThreadCount();
  ScopedThreadCount(const ScopedThreadCount&) = delete;
  ScopedThreadCount& operator=(const ScopedThreadCount&) = delete;

 private:
  int previous_;
};

// Runs body(i) for i in [0, n) on thread_count() workers. Each index is
// handled exactly once; callers write results by index, so output does not
// depend on the schedule. The first exception thrown is rethrown here.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace fracvolt
