#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tformer {

// Kernels assign every output element to exactly one thread and accumulate it
// in a fixed order, so results are bit-identical for any thread count.
inline void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

inline int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace tformer
