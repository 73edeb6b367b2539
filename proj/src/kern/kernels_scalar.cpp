#include "labr/kern/kernels.hpp"

#include <cstring>

namespace labr::kern {
namespace {

void s_add(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void s_scale(const double* x, double s, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}

void s_axpy(double s, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

void s_relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_backward(const double* x, const double* dy, double* dx,
                     std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

// Broadcast-A formulation: the k loop is outermost over the accumulation, so
// every C element sees contributions in ascending-k order. The AVX2 variant
// keeps the same order, which makes the two backends bit-identical.
void s_matmul(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

const Kernels& scalar() {
  static const Kernels table = {
      "scalar", s_add,  s_sub, s_mul,  s_scale,  s_axpy,
      s_relu,   s_relu_backward, s_dot, s_sum, s_matmul,
  };
  return table;
}

}  // namespace labr::kern
