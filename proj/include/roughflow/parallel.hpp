/// @file parallel.hpp
/// @brief Data-parallel width control (ROUGHFLOW_THREADS).
#pragma once

namespace roughflow {

/// Threads allowed for data-parallel loops: ROUGHFLOW_THREADS if set to a
/// positive integer, otherwise the number of available cores.
int thread_count();

/// Applies thread_count() to the linear-algebra backend and keeps large
/// training buffers in the heap instead of returning them to the kernel
/// after every batch.
void configure_threads();

}  // namespace roughflow
