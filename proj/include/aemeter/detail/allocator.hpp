#pragma once

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace aemeter::detail {

// Training allocates and frees the same large im2col / activation buffers every
// sample. glibc's defaults hand them back to the kernel each time.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace aemeter::detail
