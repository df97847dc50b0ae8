// Allocator tuning. Every graph node owns its buffers, so a training step or
// a timed loss call frees and reallocates the same few hundred kilobytes.
// glibc's defaults hand large blocks straight back to the kernel, and the
// page faults that follow dominate the arithmetic at N in the thousands.
#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gar {

/// Keeps freed memory in the process heap. A no-op outside glibc.
inline void keep_heap_resident()
{
#if defined(__GLIBC__)
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_MMAP_THRESHOLD, 1 << 28);
#endif
}

} // namespace gar
