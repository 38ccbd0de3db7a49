#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace geoprev {

/// Worker count: GEOPREV_THREADS if set and positive, else hardware concurrency.
int default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Iterations must be
/// independent; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

/// Deterministic child seed for partition `index` of a master seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace geoprev
