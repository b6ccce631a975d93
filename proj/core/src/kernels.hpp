#pragma once

// Raw numeric kernels shared by the tape ops and the no-tape inference path.
// Both callers must go through the same code so the beam search scores match
// the training-time decoder exactly, not just approximately.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace ctxst::kernels {

// out[m x n] += a[m x k] * b[k x n]  (out must be zeroed by the caller)
inline void matmul_acc(const double* a, const double* b, double* out, std::size_t m,
                       std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// In-place softmax over each row of a[m x n], max-subtracted.
inline void softmax_rows_inplace(double* a, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = a + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j)
      if (row[j] > mx) mx = row[j];
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
}

// In-place log-softmax over each row of a[m x n], max-subtracted.
inline void log_softmax_rows_inplace(double* a, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = a + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j)
      if (row[j] > mx) mx = row[j];
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lz;
  }
}

// Per-row mean/variance normalization followed by gain/bias, writing out.
// Biased variance (divide by n), epsilon inside the sqrt.
inline void layer_norm_row(const double* row, const double* gain, const double* bias,
                           double* out, std::size_t n, double eps = 1e-5) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += row[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = row[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) out[j] = (row[j] - mean) * inv * gain[j] + bias[j];
}

// Sinusoidal position value for coordinate j of a dim-wide embedding row.
// Even coordinates take sin, odd take cos, both at the even frequency.
inline double position_value(std::size_t pos, std::size_t j, std::size_t dim) {
  const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(dim);
  const double angle = static_cast<double>(pos) * std::exp(-std::log(10000.0) * exponent);
  return (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double mx = a > b ? a : b;
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

}  // namespace ctxst::kernels
