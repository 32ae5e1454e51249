// Copyright 2026 The fildp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FILDP_BOOTSTRAP_HPP_
#define FILDP_BOOTSTRAP_HPP_

#include <cstdlib>

#if defined(__linux__)
#include <malloc.h>
#include <unistd.h>
#endif

namespace fildp {

// OpenBLAS selects its compute kernel from CPUID in a shared-library
// constructor, i.e. before main() runs.  On CPUs newer than its dispatch
// table it silently falls back to a pre-AVX kernel that is several times
// slower than the AVX-512 path the hardware supports, and the choice can
// differ between hosts, which would also break bit-exact replays.  Setting
// OPENBLAS_CORETYPE from main() is too late, so when the variable is unset
// and the CPU has AVX-512 this re-executes the current binary once with the
// kernel pinned.  The second pass sees the variable and falls through; if
// exec fails we simply continue on the slow kernel.
inline void bootstrap_blas_kernel(char** argv) {
#if defined(__linux__)
  // Training allocates multi-megabyte activation tensors every step.  With
  // glibc defaults those land in fresh mmap regions that are unmapped on
  // free, so each step pays the page-fault cost again; raising the
  // thresholds keeps the blocks on the reusable heap.
  ::mallopt(M_MMAP_THRESHOLD, 1 << 30);
  ::mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
#if defined(FILDP_USE_CBLAS) && defined(__linux__) && defined(__x86_64__)
  if (std::getenv("OPENBLAS_CORETYPE") == nullptr &&
      __builtin_cpu_supports("avx512f")) {
    ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    ::execv("/proc/self/exe", argv);
  }
#else
  (void)argv;
#endif
}

}  // namespace fildp

#endif  // FILDP_BOOTSTRAP_HPP_
