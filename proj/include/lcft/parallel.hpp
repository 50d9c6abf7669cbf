#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lcft {

/// Worker count: LCFT_WORKERS if set and positive, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Each
/// index is executed exactly once; the caller writes results into per-index
/// slots so the reduction order never depends on scheduling. The first
/// exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Pairwise (cascade) summation in a fixed tree order.
double pairwise_sum(std::span<const double> values);

/// Mean and standard error of i.i.d. replica values, reduced in fixed order.
struct SampleStats {
    double mean = 0.0;
    double stderr_ = 0.0;
    double variance = 0.0;
    std::size_t count = 0;
};

SampleStats sample_stats(std::span<const double> values);

/// Sample covariance of paired replica values.
double sample_covariance(std::span<const double> a, std::span<const double> b);

}  // namespace lcft
