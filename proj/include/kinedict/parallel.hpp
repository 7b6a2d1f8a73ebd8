#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace kinedict {

/// Worker count: hardware concurrency, capped by the KINEDICT_THREADS environment variable.
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; nested calls from inside a
/// worker run serially. The first exception thrown by any task is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Independent stream seed for task `index` under a base seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace kinedict
