#include "roughflow/parallel.hpp"

#include <Eigen/Core>

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace roughflow {

int thread_count() {
    if (const char* env = std::getenv("ROUGHFLOW_THREADS")) {
        int n = 0;
        const auto* end = env + std::strlen(env);
        const auto [ptr, ec] = std::from_chars(env, end, n);
        if (ec == std::errc() && ptr == end && n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void configure_threads() {
    Eigen::setNbThreads(thread_count());
#ifdef __GLIBC__
    // Batch matrices are a few MB each; with the default thresholds glibc
    // maps and unmaps them on every step, which costs about a fifth of the run.
    constexpr int kLargeBlock = 256 << 20;
    mallopt(M_MMAP_THRESHOLD, kLargeBlock);
    mallopt(M_TRIM_THRESHOLD, kLargeBlock);
#endif
}

}  // namespace roughflow
