#pragma once

// Dispatched f64 compute kernels. Every kernel has a scalar reference
// implementation and (on x86-64 with AVX2) a vectorized variant selected at
// runtime. Elementwise kernels and matmul keep the exact accumulation order
// of the scalar reference, so both backends produce bit-identical results;
// dot/sum reduce in lanes and are equivalence-tested to tolerance instead.

#include <cstddef>
#include <string_view>

namespace labr::kern {

struct Kernels {
  const char* name;

  // y[i] = a[i] op b[i]
  void (*add)(const double* a, const double* b, double* y, std::size_t n);
  void (*sub)(const double* a, const double* b, double* y, std::size_t n);
  void (*mul)(const double* a, const double* b, double* y, std::size_t n);

  // y[i] = s * x[i]
  void (*scale)(const double* x, double s, double* y, std::size_t n);
  // y[i] += s * x[i]
  void (*axpy)(double s, const double* x, double* y, std::size_t n);

  // y[i] = max(x[i], 0)
  void (*relu)(const double* x, double* y, std::size_t n);
  // dx[i] += dy[i] where x[i] > 0
  void (*relu_backward)(const double* x, const double* dy, double* dx,
                        std::size_t n);

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);

  // Row-major C(MxN) = A(MxK) * B(KxN); accumulate=true adds into C.
  void (*matmul)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n, bool accumulate);
};

// Scalar reference backend (always available).
const Kernels& scalar();

// Currently active backend (auto-selected at startup; "avx2" when the CPU
// supports it, otherwise scalar).
const Kernels& active();

// Force a backend by name: "scalar", "avx2" or "auto". Returns false if the
// requested backend is unavailable on this CPU. The LABR_KERNEL environment
// variable applies the same override at startup.
bool set_backend(std::string_view name);

// Backend compiled for AVX2, or nullptr when unsupported at build/run time.
const Kernels* avx2();

}  // namespace labr::kern
