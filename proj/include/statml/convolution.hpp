#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"

namespace statml::conv {

using Complex = std::complex<double>;

namespace detail {

inline void check_coeffs(std::span<const double> v, const char* op, const char* name) {
  if (v.empty()) throw ValidationError(std::string(op) + ": " + name + " is empty");
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError(std::string(op) + ": " + name + " has a non-finite entry");
}

}  // namespace detail

/**
 * c_k = sum_i a_i b_{k-i}, length |a| + |b| - 1.
 *
 * Terms are summed in mirrored pairs (a_m b_{k-m} + a_{k-m} b_m) for m = 0, 1, ..., so that
 * conv_naive(a, b) and conv_naive(b, a) round identically.
 */
inline std::vector<double> conv_naive(std::span<const double> a, std::span<const double> b) {
  detail::check_coeffs(a, "conv_naive", "a");
  detail::check_coeffs(b, "conv_naive", "b");
  const std::size_t na = a.size(), nb = b.size(), top = std::max(na, nb) - 1;
  const auto term = [&](std::size_t i, std::size_t j) { return i < na && j < nb ? a[i] * b[j] : 0.0; };
  std::vector<double> c(na + nb - 1, 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    double s = 0.0;
    for (std::size_t m = k > top ? k - top : 0; 2 * m <= k; ++m) {
      const std::size_t n = k - m;
      s += m == n ? term(m, n) : term(m, n) + term(n, m);
    }
    c[k] = s;
  }
  return c;
}

/**
 * In-place iterative radix-2 transform. Forward uses exp(-2 pi i jk / N); the inverse uses the
 * conjugate roots and divides by N. N must be a power of two.
 */
inline void fft_inplace(std::vector<Complex>& x, bool inverse) {
  const std::size_t n = x.size();
  if (n == 0 || !std::has_single_bit(n)) throw ValidationError("fft: length must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  // Twiddles evaluated directly, not by repeated multiplication, to keep rounding error flat.
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> roots(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    roots[k] = {std::cos(angle), std::sin(angle)};
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = x[start + k];
        const Complex v = x[start + k + half] * roots[k * stride];
        x[start + k] = u + v;
        x[start + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= scale;
  }
}

/**
 * Convolution through the transform: pad to the next power of two >= |a| + |b| - 1, multiply
 * pointwise, invert, truncate. Throws NumericalError if the inverse has an imaginary residue
 * above 1e-9 relative to the largest output.
 */
inline std::vector<double> conv_fft(std::span<const double> a, std::span<const double> b) {
  detail::check_coeffs(a, "conv_fft", "a");
  detail::check_coeffs(b, "conv_fft", "b");
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = std::bit_ceil(out_len);

  std::vector<Complex> fa(n), fb(n);
  std::copy(a.begin(), a.end(), fa.begin());
  std::copy(b.begin(), b.end(), fb.begin());
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t k = 0; k < n; ++k) fa[k] *= fb[k];
  fft_inplace(fa, true);

  std::vector<double> c(out_len);
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t k = 0; k < out_len; ++k) {
    c[k] = fa[k].real();
    max_re = std::max(max_re, std::abs(c[k]));
    max_im = std::max(max_im, std::abs(fa[k].imag()));
  }
  if (max_im > 1e-9 * std::max(1.0, max_re))
    throw NumericalError("conv_fft: imaginary residue " + std::to_string(max_im) + " in real convolution");
  return c;
}

/// Sizes at which conv_auto switches from the quadratic loop to the transform.
inline constexpr std::size_t kNaiveWorkLimit = 1U << 14;

inline std::vector<double> conv_auto(std::span<const double> a, std::span<const double> b) {
  return a.size() * b.size() <= kNaiveWorkLimit ? conv_naive(a, b) : conv_fft(a, b);
}

/**
 * Distribution of X + Y for independent X ~ pA, Y ~ pB on supports 0..n-1. Transform round-off
 * can leave tiny negative entries; they are clipped and the result renormalized.
 */
inline DiscreteDistribution distribution_sum(const DiscreteDistribution& pa, const DiscreteDistribution& pb) {
  if (pa.size() == 0 || pb.size() == 0) throw ValidationError("distribution_sum: empty distribution");
  auto c = conv_auto(pa.probs(), pb.probs());
  double s = 0.0;
  for (auto& x : c) s += x = std::max(x, 0.0);
  for (auto& x : c) x /= s;
  return DiscreteDistribution(std::move(c));
}

/**
 * Same-length smoothing g = f * h. The kernel is centred at index (K - 1) / 2 and samples
 * outside the signal are treated as zero.
 */
inline std::vector<double> smooth_signal(std::span<const double> signal, std::span<const double> kernel) {
  detail::check_coeffs(kernel, "smooth_signal", "kernel");
  if (signal.empty()) return {};
  detail::check_coeffs(signal, "smooth_signal", "signal");
  const auto full = conv_auto(signal, kernel);
  const std::size_t offset = (kernel.size() - 1) / 2;
  return std::vector<double>(full.begin() + static_cast<std::ptrdiff_t>(offset),
                             full.begin() + static_cast<std::ptrdiff_t>(offset + signal.size()));
}

}  // namespace statml::conv
