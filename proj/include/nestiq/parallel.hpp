#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace nestiq {

/// Worker-count cap. Defaults to the NESTIQ_THREADS environment variable,
/// falling back to the hardware concurrency.
std::size_t max_threads();

/// Overrides the worker-count cap for the current process; 0 restores the default.
void set_max_threads(std::size_t n);

/// Runs body(i) for i in [0, count). Each index is executed exactly once; the
/// exception thrown by the lowest failing index is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Fixed-shape pairwise summation; the result depends only on the input order.
double pairwise_sum(std::span<const double> values);

}  // namespace nestiq
