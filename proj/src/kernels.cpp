#include "morphotok/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace morphotok::kernels {

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const KernelTable* select() {
    const char* env = std::getenv("MORPHOTOK_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return &avx2_table();
        // "auto" or anything unrecognized falls through to detection.
    }
    return avx2_supported() ? &avx2_table() : &scalar_table();
}

} // namespace

const KernelTable& active() {
    static const KernelTable* table = select();
    return *table;
}

std::string_view active_name() { return active().name; }

} // namespace morphotok::kernels
