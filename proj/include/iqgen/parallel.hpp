#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdint>
#include <utility>

// OpenMP-backed data parallelism with a serial reference path. Every parallel
// kernel in the project runs over independent items and writes to
// pre-allocated per-item slots, so the serial path (threads <= 1) and the
// parallel path produce bitwise-identical results; reductions over the slots
// always happen serially in item order afterwards.

namespace iqgen {

inline int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Resolves a configured thread count: 0 means "all available".
inline int resolve_threads(int requested) {
    if (requested <= 0) return hardware_threads();
    return requested;
}

template <class Body>
void parallel_for(int64_t n, int threads, Body&& body) {
    if (threads <= 1) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int64_t i = 0; i < n; ++i) body(i);
#else
    for (int64_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace iqgen
