// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "epgn/kernels.hpp"

namespace epgn::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4 rows x 8 columns register tile, accumulated over the full k extent.
inline void tile_4x8(std::size_t k, std::size_t m, const double* a, std::size_t lda, const double* b,
                     double* c) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * m);
    const __m256d b1 = _mm256_loadu_pd(b + p * m + 4);
    __m256d a0 = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(a0, b0, c00);
    c01 = _mm256_fmadd_pd(a0, b1, c01);
    a0 = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(a0, b0, c10);
    c11 = _mm256_fmadd_pd(a0, b1, c11);
    a0 = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(a0, b0, c20);
    c21 = _mm256_fmadd_pd(a0, b1, c21);
    a0 = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(a0, b0, c30);
    c31 = _mm256_fmadd_pd(a0, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + m, c10);
  _mm256_storeu_pd(c + m + 4, c11);
  _mm256_storeu_pd(c + 2 * m, c20);
  _mm256_storeu_pd(c + 2 * m + 4, c21);
  _mm256_storeu_pd(c + 3 * m, c30);
  _mm256_storeu_pd(c + 3 * m + 4, c31);
}

inline void tile_1x8(std::size_t k, std::size_t m, const double* a, const double* b, double* c) {
  __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d a0 = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b + p * m), c0);
    c1 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b + p * m + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

inline void tile_1x4(std::size_t k, std::size_t m, const double* a, const double* b, double* c) {
  __m256d c0 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * m), c0);
  }
  _mm256_storeu_pd(c, c0);
}

void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  const std::size_t m8 = m - m % 8;
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    for (std::size_t j = 0; j < m8; j += 8) tile_4x8(k, m, a + i * k, k, b + j, c + i * m + j);
  }
  for (std::size_t i = n4; i < n; ++i) {
    for (std::size_t j = 0; j < m8; j += 8) tile_1x8(k, m, a + i * k, b + j, c + i * m + j);
  }
  std::size_t j = m8;
  if (m - j >= 4) {
    for (std::size_t i = 0; i < n; ++i) tile_1x4(k, m, a + i * k, b + j, c + i * m + j);
    j += 4;
  }
  for (; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  }
}

inline double dot_impl(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  const std::size_t k4 = k - k % 4;
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (std::size_t p = k4; p < k; ++p) {
        r0 += arow[p] * b0[p];
        r1 += arow[p] * b1[p];
        r2 += arow[p] * b2[p];
        r3 += arow[p] * b3[p];
      }
      c[i * m + j] = r0;
      c[i * m + j + 1] = r1;
      c[i * m + j + 2] = r2;
      c[i * m + j + 3] = r3;
    }
    for (; j < m; ++j) c[i * m + j] = dot_impl(k, arow, b + j * k);
  }
}

template <class VecOp, class ScalarOp>
inline void binary(std::size_t n, const double* x, const double* y, double* out, VecOp vop,
                   ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void add(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_add_pd(a, b); },
         [](double a, double b) { return a + b; });
}

void sub(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_sub_pd(a, b); },
         [](double a, double b) { return a - b; });
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_mul_pd(a, b); },
         [](double a, double b) { return a * b; });
}

void affine(std::size_t n, const double* x, double scale, double shift, double* out) {
  const __m256d s = _mm256_set1_pd(scale);
  const __m256d t = _mm256_set1_pd(shift);
  std::size_t i = 0;
  // mul then add (no FMA) so results match the scalar reference bit for bit.
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(s, _mm256_loadu_pd(x + i)), t));
  }
  for (; i < n; ++i) out[i] = scale * x[i] + shift;
}

void relu(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

double dot(std::size_t n, const double* x, const double* y) { return dot_impl(n, x, y); }

void add_row(std::size_t rows, std::size_t cols, const double* x, const double* bias, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* o = out + r * cols;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      _mm256_storeu_pd(o + c, _mm256_add_pd(_mm256_loadu_pd(xr + c), _mm256_loadu_pd(bias + c)));
    }
    for (; c < cols; ++c) o[c] = xr[c] + bias[c];
  }
}

// inf and nan are exactly the values whose exponent bits are all set.
bool all_finite(std::size_t n, const double* x) {
  const __m256d exp_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7ff0000000000000LL));
  __m256i bad = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256i e = _mm256_castpd_si256(_mm256_and_pd(_mm256_loadu_pd(x + i), exp_mask));
    bad = _mm256_or_si256(bad, _mm256_cmpeq_epi64(e, _mm256_castpd_si256(exp_mask)));
  }
  if (!_mm256_testz_si256(bad, bad)) return false;
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

void adam(std::size_t n, double* param, const double* grad, double* m, double* v, double beta1,
          double beta2, double step_size, double bias2, double eps) {
  const __m256d b1 = _mm256_set1_pd(beta1), c1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2), c2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d lr = _mm256_set1_pd(step_size), bc2 = _mm256_set1_pd(bias2);
  const __m256d ep = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi =
        _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(_mm256_mul_pd(c2, g), g));
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vi, bc2)), ep);
    const __m256d p = _mm256_sub_pd(_mm256_loadu_pd(param + i),
                                    _mm256_div_pd(_mm256_mul_pd(lr, mi), denom));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    _mm256_storeu_pd(param + i, p);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    param[i] -= step_size * m[i] / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace

const KernelTable& avx2_table_impl() {
  static const KernelTable table{"avx2", gemm_nn, gemm_nt, add,        sub, mul, affine,
                                 relu,   dot,     add_row, all_finite, adam};
  return table;
}

}  // namespace epgn::kernels
