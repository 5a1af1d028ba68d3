#pragma once

#include <cstddef>
#include <functional>

namespace propensity {

/// Caps the number of worker threads used by parallel_for. 0 selects the
/// hardware concurrency. Results never depend on this value: every parallel
/// loop writes to per-index slots and reductions run sequentially afterwards.
void set_thread_count(unsigned n);
unsigned thread_count() noexcept;

/// Runs body(i) for i in [0, n) across up to thread_count() workers, in
/// contiguous chunks. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace propensity
