#pragma once

// Time-frequency transforms: radix-2 FFT, Hamming-windowed STFT log-power
// spectrograms, triangular filter banks, and the per-recording image cache.

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepstage/bundle.hpp"
#include "sleepstage/tensor.hpp"

namespace sleepstage {

// In-place iterative radix-2 FFT; length must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// Symmetric Hamming window: 0.54 - 0.46*cos(2*pi*n/(N-1)).
std::vector<double> hamming_window(int n);

// Log-power spectrogram of one epoch: frames of win_len samples every hop
// samples, Hamming-windowed, zero-padded to nfft, one-sided bins.
// Returns [F, T] with F = nfft/2 + 1 and T = floor((L - win_len)/hop) + 1.
// Power is floored at 1e-10 before the natural log.
Tensor stft_log_power(const std::vector<double>& samples, int win_len, int hop,
                      int nfft);

struct FilterBank {
  Tensor weights;  // [M, F], rows non-negative and unit-sum
  double sample_rate_hz = 0.0;
};

// M triangular filters with peaks linearly spaced on [0, Nyquist], adjacent
// filters crossing at half height; each row scaled to unit sum. 2 <= M <= F.
FilterBank make_triangular_filterbank(int n_filters, int n_bins,
                                      double sample_rate_hz);

// out[m, t] = sum_f weights[m, f] * spec[f, t]
Tensor apply_filterbank(const Tensor& spec, const FilterBank& fb);

std::uint64_t filterbank_hash(const FilterBank& fb);

// Per-recording cache of preprocessed multi-channel images.
struct TfCache {
  std::int64_t planes = 0;   // P
  std::int64_t bands = 0;    // M
  std::int64_t frames = 0;   // T
  std::vector<std::string> channels;  // size P, plane order
  std::uint64_t fb_hash = 0;
  std::vector<Tensor> epochs;         // each [P, M, T]
};

void write_tf_cache(const std::filesystem::path& path, const TfCache& cache);
TfCache read_tf_cache(const std::filesystem::path& path);

// Per-channel affine normalization (subtract mean, divide by stddev).
struct ChannelStandardizer {
  double mean = 0.0;
  double stddev = 1.0;
};

// Stacks one filtered spectrogram plane per selected channel, in selection
// order, for the given epoch: result is [P, M, T]. STFT uses a 2 s Hamming
// window with 50% overlap and the next power-of-two transform size.
Tensor build_tf_image(const RecordingBundle& bundle, std::int64_t epoch_index,
                      const std::vector<std::string>& channel_selection,
                      const std::vector<FilterBank>& fb_per_channel,
                      const std::vector<ChannelStandardizer>* standardizers = nullptr);

// Runs build_tf_image over every epoch of a recording.
TfCache preprocess_recording(const RecordingBundle& bundle,
                             const std::vector<std::string>& channel_selection,
                             const std::vector<FilterBank>& fb_per_channel);

}  // namespace sleepstage
