#pragma once

// Dense double-precision inner loops used by the model.
//
// Every kernel has a portable scalar reference in kernels_scalar.cpp plus
// vectorized variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is
// picked once per process from the CPU feature bits; STEERKIT_ISA=scalar (or
// set_active_isa) forces the reference path. Variants agree with the scalar
// reference to rounding (reduction order differs), which the kernel
// equivalence tests pin down.

#include <cstddef>
#include <span>
#include <string_view>

namespace steerkit::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
    Isa isa;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // sum_i x[i]
    double (*sum)(const double* x, std::size_t n);
    // y[r] = sum_c w[r * cols + c] * x[c], w row-major
    void (*matvec)(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best variant supported by this CPU, honoring STEERKIT_ISA.
const KernelTable& active_kernels();

// Overrides the process-wide choice. Not thread-safe; call before any model
// work (tests and the CLI's --isa flag use it). Returns false if the
// requested variant is unavailable, in which case nothing changes.
bool set_active_isa(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active_kernels().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active_kernels().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sum(std::span<const double> x) {
    return active_kernels().sum(x.data(), x.size());
}

}  // namespace steerkit::simd
