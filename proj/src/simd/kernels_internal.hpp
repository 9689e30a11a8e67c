#pragma once

#include "steerkit/simd/kernels.hpp"

namespace steerkit::simd::detail {

// Defined only when the matching translation unit is compiled.
const KernelTable& avx2_table();
const KernelTable& neon_table();

}  // namespace steerkit::simd::detail
