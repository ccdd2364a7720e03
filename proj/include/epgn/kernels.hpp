#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision inner loops. Every routine has a portable scalar
// reference; SIMD variants are picked at runtime when the CPU supports them
// and must agree with the reference to rounding.
namespace epgn::kernels {

struct KernelTable {
  const char* name;
  // c[n x m] = a[n x k] * b[k x m], all row-major, c overwritten.
  void (*gemm_nn)(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
                  double* c);
  // c[n x m] = a[n x k] * b[m x k]^T.
  void (*gemm_nt)(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
                  double* c);
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  // out = scale * x + shift
  void (*affine)(std::size_t n, const double* x, double scale, double shift, double* out);
  void (*relu)(std::size_t n, const double* x, double* out);
  double (*dot)(std::size_t n, const double* x, const double* y);
  // out[r, :] = x[r, :] + bias for every row r.
  void (*add_row)(std::size_t rows, std::size_t cols, const double* x, const double* bias, double* out);
  // False if any value is NaN or infinite.
  bool (*all_finite)(std::size_t n, const double* x);
  // In-place Adam update of one parameter block.
  void (*adam)(std::size_t n, double* param, const double* grad, double* m, double* v, double beta1,
               double beta2, double step_size, double bias2, double eps);
};

const KernelTable& scalar_table();
// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table();

// Table used by the tensor library. Chosen once: the EPGN_KERNELS environment
// variable ("scalar" or "avx2") overrides CPU detection.
const KernelTable& active();
// Forces a table by name; returns false if it is unavailable.
bool select(std::string_view name);

}  // namespace epgn::kernels
