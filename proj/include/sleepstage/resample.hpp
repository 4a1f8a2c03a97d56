#pragma once

// Rational polyphase resampler with a Hamming-windowed-sinc anti-aliasing
// low-pass at 0.45x the target Nyquist frequency.

#include <cstdint>
#include <vector>

namespace sleepstage {

// Output rate = dst_rate_hz. Both rates must be positive integers and the
// input length times L must divide exactly by M (L/M = reduced rate ratio) so
// the output still covers a whole number of epochs.
std::vector<double> resample(const std::vector<double>& x, std::int64_t src_rate_hz,
                             std::int64_t dst_rate_hz);

}  // namespace sleepstage
