#include "rd/simd.hpp"

#include <algorithm>
#include <cassert>

#if defined(__x86_64__)
#include <immintrin.h>
#define RD_HAVE_AVX2_TARGET 1
#endif

namespace rd::simd {

namespace {

// ---- scalar reference kernels ----

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double sum_squares_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

double max_scalar(const double* a, std::size_t n) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

#if RD_HAVE_AVX2_TARGET

// ---- AVX2 variants ----

__attribute__((target("avx2"))) double hadd256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s = _mm_add_pd(lo, hi);
    __m128d swap = _mm_unpackhi_pd(s, s);
    return _mm_cvtsd_f64(_mm_add_sd(s, swap));
}

__attribute__((target("avx2"))) double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return hadd256(acc) + tail;
}

__attribute__((target("avx2"))) double sum_avx2(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i];
    return hadd256(acc) + tail;
}

__attribute__((target("avx2"))) double sum_squares_avx2(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(a + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(v, v));
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * a[i];
    return hadd256(acc) + tail;
}

__attribute__((target("avx2"))) void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, v);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2"))) void scale_avx2(double alpha, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) y[i] = alpha * x[i];
}

__attribute__((target("avx2"))) double max_avx2(const double* a, std::size_t n) {
    if (n < 4) return max_scalar(a, n);
    __m256d acc = _mm256_loadu_pd(a);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(a + i));
    __m128d lo = _mm256_castpd256_pd128(acc);
    __m128d hi = _mm256_extractf128_pd(acc, 1);
    __m128d s = _mm_max_pd(lo, hi);
    __m128d swap = _mm_unpackhi_pd(s, s);
    double m = _mm_cvtsd_f64(_mm_max_sd(s, swap));
    for (; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

#endif  // RD_HAVE_AVX2_TARGET

Backend detect_backend() {
#if RD_HAVE_AVX2_TARGET
    if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

Backend g_backend = detect_backend();

}  // namespace

Backend active_backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }
Backend best_backend() { return detect_backend(); }

std::string backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) return dot_avx2(a, b, n);
#endif
    return dot_scalar(a, b, n);
}

double sum(const double* a, std::size_t n) {
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) return sum_avx2(a, n);
#endif
    return sum_scalar(a, n);
}

double sum_squares(const double* a, std::size_t n) {
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) return sum_squares_avx2(a, n);
#endif
    return sum_squares_scalar(a, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) { axpy_avx2(alpha, x, y, n); return; }
#endif
    axpy_scalar(alpha, x, y, n);
}

void scale(double alpha, const double* x, double* y, std::size_t n) {
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) { scale_avx2(alpha, x, y, n); return; }
#endif
    scale_scalar(alpha, x, y, n);
}

double max_value(const double* a, std::size_t n) {
    assert(n > 0);
#if RD_HAVE_AVX2_TARGET
    if (g_backend == Backend::Avx2) return max_avx2(a, n);
#endif
    return max_scalar(a, n);
}

}  // namespace rd::simd
