#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>

namespace mmfuse {

/// Worker cap: MMFUSE_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index
/// must write disjoint state; results never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive combination of seed components into one 64-bit seed.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

using Rng = std::mt19937_64;

}  // namespace mmfuse
