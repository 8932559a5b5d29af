#pragma once

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace edd {

/// Keeps large tensor buffers on the heap instead of a fresh mmap per
/// allocation. Training allocates and frees many multi-megabyte
/// intermediates per step; with glibc defaults that cost rivals the math.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace edd
