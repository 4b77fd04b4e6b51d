#pragma once

#include <cstddef>
#include <functional>

namespace farm {

/// Number of worker threads used by parallel_for. 0 means "all cores".
void set_thread_count(unsigned count);
unsigned thread_count();

/// Runs body(i) for i in [0, count). Each index is visited exactly once;
/// callers write results into per-index slots so the output never depends
/// on the schedule. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace farm
