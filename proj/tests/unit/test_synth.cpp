#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "sleepstage/synth.hpp"
#include "sleepstage/tfr.hpp"
#include "test_util.hpp"

using namespace sleepstage;

namespace {

// Empirical lag-k same-state agreement of a sampled sequence.
double mc_lag_same(const std::vector<Stage>& seq, int lag) {
  std::int64_t hits = 0;
  const std::int64_t n = static_cast<std::int64_t>(seq.size());
  for (std::int64_t i = lag; i < n; ++i)
    if (seq[static_cast<std::size_t>(i)] == seq[static_cast<std::size_t>(i - lag)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n - lag);
}

}  // namespace

TEST_CASE("stationary distribution matches a hand-solved two-block chain") {
  MarkovStageModel m;
  m.initial = {0.2, 0.2, 0.2, 0.2, 0.2};
  // Doubly-stochastic matrix: stationary distribution must be uniform.
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      m.transition[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          (i == j) ? 0.6 : 0.1;
  m.validate();
  const auto pi = m.stationary();
  for (double p : pi) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
  // lag1 = sum pi_i P_ii = 0.6; P^2 diag = 0.36 + 4*0.01 = 0.40.
  CHECK(m.lag1_same() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(m.lag2_same() == doctest::Approx(0.40).epsilon(1e-12));
}

TEST_CASE("calibration hits the default persistence targets exactly and in simulation") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  const MarkovStageModel m = calibrate_transition_matrix(0.833, 0.793, pref, 7);
  m.validate();
  CHECK(std::fabs(m.lag1_same() - 0.833) <= 0.005);
  CHECK(std::fabs(m.lag2_same() - 0.793) <= 0.01);

  // Initial distribution is the chain's own stationary distribution.
  const auto pi = m.stationary();
  for (int i = 0; i < 5; ++i)
    CHECK(m.initial[static_cast<std::size_t>(i)] ==
          doctest::Approx(pi[static_cast<std::size_t>(i)]).epsilon(1e-9));

  // Stationary-weighted mean self-transition equals the lag-1 agreement.
  double wmean = 0.0;
  for (int i = 0; i < 5; ++i)
    wmean += pi[static_cast<std::size_t>(i)] *
             m.transition[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  CHECK(wmean >= 0.828);
  CHECK(wmean <= 0.838);

  // Monte-Carlo agreement over one million steps.
  Rng rng(123);
  const auto seq = sample_stage_sequence(m, 1000000, rng);
  const double l1 = mc_lag_same(seq, 1);
  const double l2 = mc_lag_same(seq, 2);
  CHECK(l1 >= 0.828);
  CHECK(l1 <= 0.838);
  CHECK(l2 >= 0.783);
  CHECK(l2 <= 0.803);
}

TEST_CASE("calibration generalizes to a low-persistence regime") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  const MarkovStageModel m = calibrate_transition_matrix(0.5, 0.4, pref, 11);
  CHECK(std::fabs(m.lag1_same() - 0.5) <= 0.005);
  CHECK(std::fabs(m.lag2_same() - 0.4) <= 0.01);
  Rng rng(99);
  const auto seq = sample_stage_sequence(m, 1000000, rng);
  CHECK(std::fabs(mc_lag_same(seq, 1) - m.lag1_same()) <= 0.01);
  CHECK(std::fabs(mc_lag_same(seq, 2) - m.lag2_same()) <= 0.01);
}

TEST_CASE("calibration rejects impossible or out-of-range targets") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  CHECK_THROWS_AS(static_cast<void>(calibrate_transition_matrix(1.0, 1.0, pref, 1)),
                  Error);
  CHECK_THROWS_AS(static_cast<void>(calibrate_transition_matrix(0.4, 0.5, pref, 1)),
                  Error);
  CHECK_THROWS_AS(static_cast<void>(calibrate_transition_matrix(0.0, 0.0, pref, 1)),
                  Error);
  const std::array<double, 5> bad_pref{0.5, 0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(static_cast<void>(calibrate_transition_matrix(0.8, 0.7, bad_pref, 1)),
                  Error);
}

TEST_CASE("long-run stage frequencies track the stationary distribution") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  const MarkovStageModel m = calibrate_transition_matrix(0.833, 0.793, pref, 7);
  Rng rng(5);
  const auto seq = sample_stage_sequence(m, 200000, rng);
  std::array<double, 5> freq{};
  for (Stage s : seq) freq[static_cast<std::size_t>(s)] += 1.0;
  for (auto& f : freq) f /= static_cast<double>(seq.size());
  const auto pi = m.stationary();
  for (int i = 0; i < 5; ++i)
    CHECK(std::fabs(freq[static_cast<std::size_t>(i)] - pi[static_cast<std::size_t>(i)]) <=
          0.02);
}

TEST_CASE("generated recordings have the right shape and are seed-deterministic") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  const MarkovStageModel m = calibrate_transition_matrix(0.833, 0.793, pref, 7);
  SynthConfig cfg;

  const RecordingBundle one = generate_recording(m, cfg, "s1", 1, 42);
  CHECK(one.channels.size() == 3);
  CHECK(one.channels[0].name == "eeg");
  CHECK(one.channels[1].name == "eog");
  CHECK(one.channels[2].name == "emg");
  CHECK(one.labels.size() == 1);
  for (const auto& ch : one.channels) CHECK(ch.samples.size() == 3000);

  const RecordingBundle a = generate_recording(m, cfg, "s1", 8, 42);
  const RecordingBundle b = generate_recording(m, cfg, "s1", 8, 42);
  CHECK(a.labels == b.labels);
  for (std::size_t c = 0; c < a.channels.size(); ++c)
    CHECK(a.channels[c].samples == b.channels[c].samples);

  const RecordingBundle d = generate_recording(m, cfg, "s1", 8, 43);
  CHECK(a.channels[0].samples != d.channels[0].samples);

  // Finite, non-degenerate output.
  double mx = 0.0;
  for (double v : a.channels[0].samples) {
    CHECK(std::isfinite(v));
    mx = std::max(mx, std::fabs(v));
  }
  CHECK(mx > 0.1);
}

TEST_CASE("deep-sleep epochs carry far more low-frequency power than wake") {
  SynthConfig cfg;
  const int rate = cfg.sample_rate_hz;
  const int win = 2 * rate, hop = rate, nfft = 256;
  // Bins with center frequency in [0.5, 2] Hz at nfft=256, 100 Hz: k = 2..5.
  auto band_mean = [&](Stage st, std::uint64_t seed) {
    Rng rng(seed);
    double acc = 0.0;
    std::int64_t count = 0;
    for (int rep = 0; rep < 40; ++rep) {
      Rng er = rng.derive(static_cast<std::uint64_t>(rep));
      const auto sig = synthesize_stage_signal(st, 0, cfg, 3000, er);
      const Tensor spec = stft_log_power(sig, win, hop, nfft);
      const std::int64_t T = spec.shape[1];
      for (int k = 2; k <= 5; ++k)
        for (std::int64_t t = 0; t < T; ++t) {
          acc += spec.v[static_cast<std::size_t>(k * T + t)];
          ++count;
        }
    }
    return acc / static_cast<double>(count);
  };
  const double n3 = band_mean(Stage::N3, 1001);
  const double w = band_mean(Stage::W, 2002);
  CHECK(n3 - w >= 6.0);
}

TEST_CASE("a nearest-centroid reference classifier separates the five stages") {
  const std::array<double, 5> pref{0.10, 0.08, 0.45, 0.15, 0.22};
  const MarkovStageModel m = calibrate_transition_matrix(0.833, 0.793, pref, 7);
  SynthConfig cfg;
  const RecordingBundle rec = generate_recording(m, cfg, "oracle", 10000, 2024);

  const Tensor probe = stft_log_power(
      std::vector<double>(3000, 0.0), 2 * cfg.sample_rate_hz, cfg.sample_rate_hz, 256);
  const int F = static_cast<int>(probe.shape[0]);
  const FilterBank fb =
      make_triangular_filterbank(20, F, static_cast<double>(cfg.sample_rate_hz));
  const std::vector<FilterBank> banks{fb, fb, fb};
  const std::vector<std::string> sel{"eeg", "eog", "emg"};

  std::vector<Tensor> images;
  images.reserve(rec.labels.size());
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(rec.labels.size()); ++e)
    images.push_back(build_tf_image(rec, e, sel, banks));

  const std::size_t half = images.size() / 2;
  CentroidOracle oracle;
  oracle.fit(std::vector<Tensor>(images.begin(), images.begin() + static_cast<long>(half)),
             std::vector<Stage>(rec.labels.begin(),
                                rec.labels.begin() + static_cast<long>(half)));
  const double acc = oracle.accuracy(
      std::vector<Tensor>(images.begin() + static_cast<long>(half), images.end()),
      std::vector<Stage>(rec.labels.begin() + static_cast<long>(half), rec.labels.end()));
  CHECK(acc >= 0.90);
}
