#include "lcft/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace lcft {

unsigned worker_count() {
    if (const char* env = std::getenv("LCFT_WORKERS")) {
        try {
            const long requested = std::stol(env);
            if (requested > 0) return static_cast<unsigned>(requested);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(count);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

SampleStats sample_stats(std::span<const double> values) {
    SampleStats out;
    out.count = values.size();
    if (values.empty()) return out;
    out.mean = pairwise_sum(values) / static_cast<double>(values.size());
    if (values.size() > 1) {
        std::vector<double> sq(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double d = values[i] - out.mean;
            sq[i] = d * d;
        }
        out.variance = pairwise_sum(sq) / static_cast<double>(values.size() - 1);
        out.stderr_ = std::sqrt(out.variance / static_cast<double>(values.size()));
    }
    return out;
}

double sample_covariance(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = std::min(a.size(), b.size());
    if (n < 2) return 0.0;
    const double ma = pairwise_sum(a.first(n)) / static_cast<double>(n);
    const double mb = pairwise_sum(b.first(n)) / static_cast<double>(n);
    std::vector<double> prod(n);
    for (std::size_t i = 0; i < n; ++i) prod[i] = (a[i] - ma) * (b[i] - mb);
    return pairwise_sum(prod) / static_cast<double>(n - 1);
}

}  // namespace lcft
