#pragma once

// Synthetic recordings: a five-state first-order Markov stage sequence
// calibrated to target adjacent-label agreement statistics, plus
// stage-conditional spectral signatures rendered as band-limited noise.

#include <array>
#include <cstdint>
#include <vector>

#include "sleepstage/bundle.hpp"
#include "sleepstage/tensor.hpp"

namespace sleepstage {

struct MarkovStageModel {
  std::array<double, 5> initial{};
  std::array<std::array<double, 5>, 5> transition{};

  void validate() const;
  // Exact stationary distribution (5x5 linear solve).
  std::array<double, 5> stationary() const;
  // Exact same-label probabilities at lag 1 and 2 under the stationary law.
  double lag1_same() const;
  double lag2_same() const;
};

// Searches a parametric family (per-state self-stick with a fixed
// heterogeneity profile + flicker-return off-diagonal routing, remainder spread
// proportional to the preferred stationary weights) for a chain matching the
// targets: lag-1 within 0.005, lag-2 within 0.01. Throws on infeasible targets.
MarkovStageModel calibrate_transition_matrix(double target_lag1_same,
                                             double target_lag2_same,
                                             const std::array<double, 5>& stationary_pref,
                                             std::uint64_t seed);

struct BandComponent {
  double center_hz = 0.0;
  double half_width_hz = 0.0;
  double power = 0.0;  // total band power relative to unit variance
};

struct ChannelSignature {
  std::vector<BandComponent> bands;
  double noise_floor = 0.01;  // white-noise power
};

// [stage][channel]; channel order is eeg, eog, emg.
using StageSignatures = std::array<std::array<ChannelSignature, 3>, 5>;

StageSignatures default_signatures();

// Harder benchmark profile: every stage shares the same band layout and
// differs mainly in band power, so per-epoch amplitude jitter produces genuine
// class overlap (N1 sits between W, N2 and REM much as in real recordings).
// Use with amp_jitter_sigma around 0.8-1.0; the default profile stays
// near-perfectly separable regardless of jitter because band locations alone
// identify the stage.
StageSignatures overlapped_signatures();

struct SynthConfig {
  int n_channels = 3;                  // 1..3, taken in order eeg, eog, emg
  double boundary_blend_s = 6.0;       // total crossfade width centered on epoch boundaries
  double amp_jitter_sigma = 0.35;      // lognormal sigma on per-epoch band amplitude
  int sinusoids_per_band = 12;
  std::int64_t sample_rate_hz = 100;
  std::int64_t epoch_len_s = 30;
  double lag1_target = 0.833;
  double lag2_target = 0.793;
  std::array<double, 5> stationary_pref{0.10, 0.08, 0.45, 0.15, 0.22};
  StageSignatures signatures = default_signatures();
};

std::vector<Stage> sample_stage_sequence(const MarkovStageModel& model, std::int64_t n,
                                         Rng& rng);

// One stage's signal for one channel (no crossfade); used by separation tests.
std::vector<double> synthesize_stage_signal(Stage stage, int channel,
                                            const SynthConfig& cfg,
                                            std::int64_t n_samples, Rng& rng);

// Full recording: Markov labels, per-epoch band-noise signals, and a
// power-normalized linear crossfade across epoch boundaries so transitions
// carry directional evidence. Deterministic per (model, cfg, seed).
RecordingBundle generate_recording(const MarkovStageModel& model, const SynthConfig& cfg,
                                   const std::string& subject_id, std::int64_t n_epochs,
                                   std::uint64_t seed);

// Nearest-centroid reference classifier on time-averaged band powers; bounds
// the task's achievable difficulty independent of any network.
class CentroidOracle {
 public:
  // images: [P, M, T] tensors; labels parallel.
  void fit(const std::vector<Tensor>& images, const std::vector<Stage>& labels);
  Stage predict(const Tensor& image) const;
  double accuracy(const std::vector<Tensor>& images,
                  const std::vector<Stage>& labels) const;

 private:
  std::vector<double> centroid_feature(const Tensor& image) const;
  std::array<std::vector<double>, 5> centroids_{};
  std::array<bool, 5> has_class_{};
};

}  // namespace sleepstage
