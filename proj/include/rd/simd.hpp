#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops for the numeric kernel. Every kernel has a
// scalar reference implementation and an AVX2 variant; the backend is
// picked once at startup from CPUID and can be forced for equivalence
// testing. AVX2 horizontal sums reorder additions, so cross-backend
// comparisons are tolerance-based, not bitwise.

namespace rd::simd {

enum class Backend { Scalar, Avx2 };

Backend active_backend();
void set_backend(Backend b);
Backend best_backend();
std::string backend_name(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double sum_squares(const double* a, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// y = alpha * x
void scale(double alpha, const double* x, double* y, std::size_t n);
double max_value(const double* a, std::size_t n);

}  // namespace rd::simd
