#pragma once

#include <cstddef>
#include <string_view>

namespace morphotok::kernels {

/// Dispatch table of the double-precision vector kernels used by the
/// embedding inner loops. One scalar reference implementation and one
/// AVX2/FMA implementation exist; the active table is picked once at
/// startup from CPU capabilities, overridable with MORPHOTOK_SIMD
/// (auto | scalar | avx2).
struct KernelTable {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sqnorm)(const double* a, std::size_t n);
    // y += alpha * x
    void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
    // x *= alpha
    void (*scal)(double* x, double alpha, std::size_t n);
    // y = A x, A row-major rows x cols
    void (*matvec)(const double* a, const double* x, double* y,
                   std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_table();
const KernelTable& avx2_table(); // valid only if avx2_supported()
bool avx2_supported();

/// The table selected for this process (CPU detection + env override).
const KernelTable& active();

/// Name of the active table ("scalar" or "avx2").
std::string_view active_name();

inline double dot(const double* a, const double* b, std::size_t n) {
    return active().dot(a, b, n);
}
inline double sqnorm(const double* a, std::size_t n) {
    return active().sqnorm(a, n);
}
inline void axpy(double* y, double alpha, const double* x, std::size_t n) {
    active().axpy(y, alpha, x, n);
}
inline void scal(double* x, double alpha, std::size_t n) {
    active().scal(x, alpha, n);
}
inline void matvec(const double* a, const double* x, double* y,
                   std::size_t rows, std::size_t cols) {
    active().matvec(a, x, y, rows, cols);
}

} // namespace morphotok::kernels
