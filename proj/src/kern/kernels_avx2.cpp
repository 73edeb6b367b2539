// AVX2 variants of the compute kernels. Compiled with -mavx2 only; callers
// reach this code exclusively through the runtime dispatch table, which
// checks CPU support first. No FMA: mul+add keeps results bit-identical to
// the scalar reference for the elementwise kernels and matmul.

#include "labr/kern/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define LABR_HAVE_AVX2_BUILD 1
#include <immintrin.h>

#include <cstring>
#endif

namespace labr::kern {

#if defined(LABR_HAVE_AVX2_BUILD)
namespace {

void v_add(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                          _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                          _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                          _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void v_scale(const double* x, double s, double* y, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = s * x[i];
}

void v_axpy(double s, const double* x, double* y, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) y[i] += s * x[i];
}

void v_relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_backward(const double* x, const double* dy, double* dx,
                     std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                           _mm256_loadu_pd(b + i)));
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double v_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

void v_matmul(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d va = _mm256_set1_pd(arow[p]);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        __m256d c1 = _mm256_loadu_pd(crow + j + 4);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
        c1 = _mm256_add_pd(c1, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j + 4)));
        _mm256_storeu_pd(crow + j, c0);
        _mm256_storeu_pd(crow + j + 4, c1);
      }
      for (; j + 4 <= n; j += 4) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
        _mm256_storeu_pd(crow + j, c0);
      }
      const double aip = arow[p];
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

const Kernels* avx2() {
  static const Kernels table = {
      "avx2",  v_add, v_sub, v_mul, v_scale, v_axpy,
      v_relu,  v_relu_backward, v_dot, v_sum, v_matmul,
  };
  if (!__builtin_cpu_supports("avx2")) return nullptr;
  return &table;
}

#else

const Kernels* avx2() { return nullptr; }

#endif

}  // namespace labr::kern
