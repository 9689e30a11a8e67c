#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"

namespace steerkit::simd {

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

const KernelTable* avx2_kernels() {
#if defined(STEERKIT_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &detail::avx2_table() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(STEERKIT_HAVE_NEON)
    return &detail::neon_table();
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* pick_default() {
    if (const char* env = std::getenv("STEERKIT_ISA")) {
        const std::string want{env};
        if (want == "scalar") return &scalar_kernels();
        if (want == "avx2" && avx2_kernels()) return avx2_kernels();
        if (want == "neon" && neon_kernels()) return neon_kernels();
    }
    if (const auto* k = avx2_kernels()) return k;
    if (const auto* k = neon_kernels()) return k;
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
    static std::atomic<const KernelTable*> slot{pick_default()};
    return slot;
}

}  // namespace

const KernelTable& active_kernels() { return *active_slot().load(std::memory_order_relaxed); }

bool set_active_isa(Isa isa) {
    const KernelTable* table = nullptr;
    switch (isa) {
        case Isa::scalar: table = &scalar_kernels(); break;
        case Isa::avx2: table = avx2_kernels(); break;
        case Isa::neon: table = neon_kernels(); break;
    }
    if (!table) return false;
    active_slot().store(table, std::memory_order_relaxed);
    return true;
}

}  // namespace steerkit::simd
