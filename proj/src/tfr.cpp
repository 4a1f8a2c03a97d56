#include "sleepstage/tfr.hpp"

#include <cmath>

#include "sleepstage/common.hpp"

namespace sleepstage {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kPowerFloor = 1e-10;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }
}  // namespace

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  check(is_pow2(n), ErrorKind::validation, "fft length must be a power of two");
  if (n == 1) return;
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -kTwoPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hamming_window(int n) {
  check(n >= 2, ErrorKind::validation, "hamming window needs n >= 2");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(kTwoPi * i / static_cast<double>(n - 1));
  return w;
}

Tensor stft_log_power(const std::vector<double>& samples, int win_len, int hop,
                      int nfft) {
  const std::int64_t L = static_cast<std::int64_t>(samples.size());
  check(win_len >= 2 && win_len <= L, ErrorKind::validation,
        "stft: window length must be in [2, signal length]");
  check(hop >= 1, ErrorKind::validation, "stft: hop must be >= 1");
  check(nfft >= win_len, ErrorKind::validation, "stft: nfft must be >= window length");
  check(is_pow2(static_cast<std::size_t>(nfft)), ErrorKind::validation,
        "stft: nfft must be a power of two");
  const std::int64_t T = (L - win_len) / hop + 1;
  const std::int64_t F = nfft / 2 + 1;
  const std::vector<double> win = hamming_window(win_len);

  Tensor out({F, T});
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(nfft));
  for (std::int64_t t = 0; t < T; ++t) {
    const std::int64_t start = t * hop;
    for (int i = 0; i < win_len; ++i)
      buf[static_cast<std::size_t>(i)] = {
          samples[static_cast<std::size_t>(start + i)] * win[static_cast<std::size_t>(i)],
          0.0};
    for (int i = win_len; i < nfft; ++i) buf[static_cast<std::size_t>(i)] = {0.0, 0.0};
    fft_radix2(buf);
    for (std::int64_t f = 0; f < F; ++f) {
      const auto& c = buf[static_cast<std::size_t>(f)];
      const double power = c.real() * c.real() + c.imag() * c.imag();
      out.at({f, t}) = std::log(std::max(power, kPowerFloor));
    }
  }
  return out;
}

FilterBank make_triangular_filterbank(int n_filters, int n_bins,
                                      double sample_rate_hz) {
  check(n_filters >= 2, ErrorKind::validation, "filterbank: need at least 2 filters");
  check(n_filters <= n_bins, ErrorKind::validation,
        "filterbank: more filters than frequency bins");
  check(sample_rate_hz > 0, ErrorKind::validation, "filterbank: bad sample rate");
  const double nyq = sample_rate_hz / 2.0;
  const double delta = nyq / static_cast<double>(n_filters - 1);
  FilterBank fb;
  fb.sample_rate_hz = sample_rate_hz;
  fb.weights = Tensor({n_filters, n_bins});
  for (int m = 0; m < n_filters; ++m) {
    const double peak = m * delta;
    double row_sum = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * nyq / static_cast<double>(n_bins - 1);
      const double w = std::max(0.0, 1.0 - std::fabs(f - peak) / delta);
      fb.weights.at({m, k}) = w;
      row_sum += w;
    }
    check(row_sum > 0, ErrorKind::internal, "filterbank: empty filter row");
    for (int k = 0; k < n_bins; ++k) fb.weights.at({m, k}) /= row_sum;
  }
  return fb;
}

Tensor apply_filterbank(const Tensor& spec, const FilterBank& fb) {
  check(spec.shape.size() == 2, ErrorKind::validation,
        "apply_filterbank: spectrogram must be [F,T]");
  const std::int64_t F = spec.shape[0], T = spec.shape[1];
  const std::int64_t M = fb.weights.shape[0];
  check(fb.weights.shape[1] == F, ErrorKind::validation,
        "apply_filterbank: bank bin count does not match spectrogram");
  Tensor out({M, T});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t f = 0; f < F; ++f) {
      const double w = fb.weights.v[static_cast<std::size_t>(m * F + f)];
      if (w == 0.0) continue;
      const double* src = spec.data() + f * T;
      double* dst = out.data() + m * T;
      for (std::int64_t t = 0; t < T; ++t) dst[t] += w * src[t];
    }
  return out;
}

std::uint64_t filterbank_hash(const FilterBank& fb) {
  ByteWriter w;
  w.i64(fb.weights.shape[0]);
  w.i64(fb.weights.shape[1]);
  w.f64(fb.sample_rate_hz);
  for (double x : fb.weights.v) w.f64(x);
  return fnv1a64(w.data().data(), w.data().size());
}

namespace {
constexpr char kCacheMagic[4] = {'T', 'F', 'I', 'C'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void write_tf_cache(const std::filesystem::path& path, const TfCache& cache) {
  check(static_cast<std::int64_t>(cache.channels.size()) == cache.planes,
        ErrorKind::validation, "tf cache: channel list does not match plane count");
  ByteWriter w;
  w.bytes(kCacheMagic, 4);
  w.u32(kCacheVersion);
  w.i64(cache.planes);
  w.i64(cache.bands);
  w.i64(cache.frames);
  w.i64(static_cast<std::int64_t>(cache.epochs.size()));
  w.u32(static_cast<std::uint32_t>(cache.channels.size()));
  for (const auto& c : cache.channels) w.str(c);
  w.u64(cache.fb_hash);
  const std::int64_t plane_elems = cache.planes * cache.bands * cache.frames;
  for (const auto& e : cache.epochs) {
    check(e.shape == std::vector<std::int64_t>{cache.planes, cache.bands, cache.frames},
          ErrorKind::validation, "tf cache: epoch image shape mismatch");
    check(e.numel() == plane_elems, ErrorKind::internal, "tf cache: size bug");
    for (double x : e.v) w.f32(static_cast<float>(x));
  }
  write_file_bytes(path, w.data());
}

TfCache read_tf_cache(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path));
  char magic[4];
  r.bytes(magic, 4);
  check(std::equal(magic, magic + 4, kCacheMagic), ErrorKind::io,
        "tf cache: bad magic in " + path.string());
  const std::uint32_t version = r.u32();
  check(version == kCacheVersion, ErrorKind::io, "tf cache: unsupported version");
  TfCache c;
  c.planes = r.i64();
  c.bands = r.i64();
  c.frames = r.i64();
  const std::int64_t n_epochs = r.i64();
  const std::uint32_t n_channels = r.u32();
  for (std::uint32_t i = 0; i < n_channels; ++i) c.channels.push_back(r.str());
  check(static_cast<std::int64_t>(c.channels.size()) == c.planes, ErrorKind::io,
        "tf cache: channel list does not match plane count");
  c.fb_hash = r.u64();
  check(c.planes > 0 && c.bands > 0 && c.frames > 0 && n_epochs >= 0, ErrorKind::io,
        "tf cache: corrupt dimensions");
  c.epochs.reserve(static_cast<std::size_t>(n_epochs));
  for (std::int64_t e = 0; e < n_epochs; ++e) {
    Tensor img({c.planes, c.bands, c.frames});
    for (auto& x : img.v) x = static_cast<double>(r.f32());
    c.epochs.push_back(std::move(img));
  }
  check(r.at_end(), ErrorKind::io, "tf cache: trailing bytes");
  return c;
}

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

Tensor build_tf_image(const RecordingBundle& bundle, std::int64_t epoch_index,
                      const std::vector<std::string>& channel_selection,
                      const std::vector<FilterBank>& fb_per_channel,
                      const std::vector<ChannelStandardizer>* standardizers) {
  check(epoch_index >= 0 && epoch_index < bundle.epoch_count(), ErrorKind::validation,
        "build_tf_image: epoch index out of range");
  check(!channel_selection.empty(), ErrorKind::validation,
        "build_tf_image: empty channel selection");
  check(channel_selection.size() == fb_per_channel.size(), ErrorKind::validation,
        "build_tf_image: one filter bank required per selected channel");
  if (standardizers)
    check(standardizers->size() == channel_selection.size(), ErrorKind::validation,
          "build_tf_image: one standardizer required per selected channel");

  const std::int64_t spe = bundle.samples_per_epoch();
  const int win = static_cast<int>(2 * bundle.sample_rate_hz);
  const int hop = static_cast<int>(bundle.sample_rate_hz);
  const int nfft = next_pow2(win);

  Tensor image;  // allocated once M, T are known
  const std::int64_t P = static_cast<std::int64_t>(channel_selection.size());
  std::int64_t M = -1, T = -1;
  for (std::int64_t p = 0; p < P; ++p) {
    const Channel* ch = nullptr;
    for (const auto& c : bundle.channels)
      if (c.name == channel_selection[static_cast<std::size_t>(p)]) ch = &c;
    check(ch != nullptr, ErrorKind::validation,
          "build_tf_image: missing channel '" +
              channel_selection[static_cast<std::size_t>(p)] + "'");
    std::vector<double> seg(ch->samples.begin() + epoch_index * spe,
                            ch->samples.begin() + (epoch_index + 1) * spe);
    Tensor spec = stft_log_power(seg, win, hop, nfft);
    Tensor plane = apply_filterbank(spec, fb_per_channel[static_cast<std::size_t>(p)]);
    if (M < 0) {
      M = plane.shape[0];
      T = plane.shape[1];
      image = Tensor({P, M, T});
    }
    check(plane.shape[0] == M && plane.shape[1] == T, ErrorKind::validation,
          "build_tf_image: filter banks disagree on output size");
    double scale = 1.0, shift = 0.0;
    if (standardizers) {
      const auto& st = (*standardizers)[static_cast<std::size_t>(p)];
      check(st.stddev > 0, ErrorKind::validation, "build_tf_image: stddev must be positive");
      shift = st.mean;
      scale = 1.0 / st.stddev;
    }
    for (std::int64_t i = 0; i < M * T; ++i)
      image.v[static_cast<std::size_t>(p * M * T + i)] = (plane.v[static_cast<std::size_t>(i)] - shift) * scale;
  }
  return image;
}

TfCache preprocess_recording(const RecordingBundle& bundle,
                             const std::vector<std::string>& channel_selection,
                             const std::vector<FilterBank>& fb_per_channel) {
  TfCache cache;
  cache.channels = channel_selection;
  ByteWriter hash_acc;
  for (const auto& fb : fb_per_channel) hash_acc.u64(filterbank_hash(fb));
  cache.fb_hash = fnv1a64(hash_acc.data().data(), hash_acc.data().size());
  for (std::int64_t e = 0; e < bundle.epoch_count(); ++e) {
    Tensor img = build_tf_image(bundle, e, channel_selection, fb_per_channel);
    if (e == 0) {
      cache.planes = img.shape[0];
      cache.bands = img.shape[1];
      cache.frames = img.shape[2];
    }
    cache.epochs.push_back(std::move(img));
  }
  check(!cache.epochs.empty(), ErrorKind::validation,
        "preprocess_recording: recording has no epochs");
  return cache;
}

}  // namespace sleepstage
