#include "sleepstage/resample.hpp"

#include <cmath>
#include <numeric>

#include "sleepstage/common.hpp"

namespace sleepstage {

std::vector<double> resample(const std::vector<double>& x, std::int64_t src_rate_hz,
                             std::int64_t dst_rate_hz) {
  check(src_rate_hz > 0 && dst_rate_hz > 0, ErrorKind::validation,
        "resample: rates must be positive");
  if (src_rate_hz == dst_rate_hz) return x;
  const std::int64_t g = std::gcd(src_rate_hz, dst_rate_hz);
  const std::int64_t L = dst_rate_hz / g;  // upsample factor
  const std::int64_t M = src_rate_hz / g;  // downsample factor
  const std::int64_t n_in = static_cast<std::int64_t>(x.size());
  check((n_in * L) % M == 0, ErrorKind::validation,
        "resample: length " + std::to_string(n_in) + " not exactly divisible for ratio " +
            std::to_string(L) + "/" + std::to_string(M));
  const std::int64_t n_out = n_in * L / M;

  // Kernel designed at the upsampled rate src * L. Cutoff = 0.45 * target
  // Nyquist. Symmetric, so the filter introduces no delay.
  const double fs_up = static_cast<double>(src_rate_hz) * static_cast<double>(L);
  const double fc = 0.45 * static_cast<double>(dst_rate_hz) / 2.0;
  const double wc = 2.0 * M_PI * fc / fs_up;  // rad/sample at the upsampled rate
  const std::int64_t half = 10 * std::max(L, M);
  std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
  for (std::int64_t n = -half; n <= half; ++n) {
    const double ideal =
        (n == 0) ? wc / M_PI : std::sin(wc * static_cast<double>(n)) / (M_PI * static_cast<double>(n));
    const double window =
        0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(n + half) /
                               static_cast<double>(2 * half));
    h[static_cast<std::size_t>(n + half)] = ideal * window;
  }

  // y[j] = L * sum_k x[k] * h[j*M - k*L]; edges treated as zero.
  std::vector<double> y(static_cast<std::size_t>(n_out), 0.0);
  const double gain = static_cast<double>(L);
  for (std::int64_t j = 0; j < n_out; ++j) {
    const std::int64_t u = j * M;
    // k range with |u - k*L| <= half
    std::int64_t k_lo = (u - half + L - 1) / L;  // ceil((u-half)/L) for positives
    if (u - half < 0) k_lo = (u - half) / L;     // floor is fine; clamped below
    std::int64_t k_hi = (u + half) / L;
    k_lo = std::max<std::int64_t>(k_lo, 0);
    k_hi = std::min<std::int64_t>(k_hi, n_in - 1);
    double acc = 0.0;
    for (std::int64_t k = k_lo; k <= k_hi; ++k) {
      const std::int64_t tap = u - k * L;
      if (tap < -half || tap > half) continue;
      acc += x[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(tap + half)];
    }
    y[static_cast<std::size_t>(j)] = gain * acc;
  }
  return y;
}

}  // namespace sleepstage
