#pragma once

// Experiment orchestration: discovers recording bundles, maintains the shared
// preprocessed-feature cache, and runs the cross-validated pipeline
// (standardize -> train -> checkpoint -> predict -> aggregate -> evaluate)
// fold by fold, writing every artifact under the configured output directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepstage/config.hpp"
#include "sleepstage/grid.hpp"
#include "sleepstage/metrics.hpp"
#include "sleepstage/splits.hpp"
#include "sleepstage/tfr.hpp"
#include "sleepstage/training.hpp"

namespace sleepstage {

// Sorted subdirectories of data_dir that contain a manifest.txt.
std::vector<std::filesystem::path> find_bundle_dirs(
    const std::filesystem::path& data_dir);

// Loads a bundle and applies the manifest-driven fixups: 20 s recordings are
// re-gridded onto 30 s epochs, then an in-bed range (when present) is cut out.
RecordingBundle load_prepared_bundle(const std::filesystem::path& dir);

// One-sided spectrum size of the fixed STFT recipe (2 s window, next
// power-of-two transform) at a given sampling rate; 129 at 100 Hz.
int stft_one_sided_bins(std::int64_t sample_rate_hz);

// One filter bank per selected channel. `triangular` builds cfg.bands
// triangles over the one-sided spectrum; `none` builds the identity bank
// (one bin per row), leaving the raw spectrum for the model's own band mixer.
std::vector<FilterBank> make_banks(const ExperimentConfig& cfg, int spectrum_bins,
                                   double sample_rate_hz);

// The fingerprint preprocess_recording stamps into cache files for this bank
// stack; recomputed here so existing caches can be verified before reuse.
std::uint64_t expected_fb_hash(const std::vector<FilterBank>& banks);

// Feature images plus labels for one recording, ready for training.
struct PreparedRecording {
  std::string subject_id;
  std::vector<Tensor> epochs;  // [P, M|F, T], unstandardized
  std::vector<Stage> labels;
};

// Fills the bundle's cache entry when missing, then reads it back and checks
// the stored channel list and bank fingerprint against this configuration.
// The returned images always come from the cache file (32-bit storage), so
// downstream numbers never depend on whether this run or an earlier one
// produced the file.
PreparedRecording prepare_recording(const RecordingBundle& bundle,
                                    const std::vector<std::string>& channels,
                                    const std::vector<FilterBank>& banks,
                                    const std::filesystem::path& cache_dir);

// Per-plane mean/stddev over every value of the given recordings, rounded to
// the 9-decimal precision checkpoints store so training and a checkpoint
// reload see identical numbers. Errors if a plane has zero variance.
std::vector<ChannelStandardizer> compute_standardizers(
    const std::vector<const PreparedRecording*>& recordings);

// (x - mean) / stddev per plane; stand may be empty (identity).
Tensor standardize_image(const Tensor& image,
                         const std::vector<ChannelStandardizer>& stand);

// Per-fold training seed derived from the experiment seed, so fold results do
// not depend on the order folds are executed in.
std::uint64_t fold_seed(std::uint64_t experiment_seed, int fold);

// Model description implied by a config and the prepared feature dimensions.
ModelSpec make_model_spec(const ExperimentConfig& cfg, int planes, int cache_bands,
                          int frames);

struct FoldOutcome {
  int fold = 0;
  std::vector<std::string> test_subjects;
  int best_pass = 0;
  double best_val_accuracy = 0.0;
  EvalReport report;
};

struct ExperimentOutcome {
  SplitPlan plan;
  std::vector<FoldOutcome> folds;
  // All test recordings across folds; the pooled confusion matrices equal the
  // sums of the per-fold ones.
  EvalReport pooled;
};

// Runs the full pipeline. Artifacts under cfg.out_dir:
//   config.txt                                   canonical config echo
//   cache/<subject>.tfc                          shared feature cache (unless
//                                                cache_dir points elsewhere)
//   folds/fold<i>/checkpoint.bin                 best-validation parameters
//   folds/fold<i>/history.csv                    per-pass training history
//   folds/fold<i>/grids/<subject>.pgrd           scattered posterior grid
//   folds/fold<i>/hypnograms/<subject>.hyp       predicted stages, text
//   folds/fold<i>/hypnograms/<subject>.svg|.txt  truth-vs-prediction renders
//   folds/fold<i>/report.txt|.csv                fold evaluation
//   report.txt|.csv                              pooled evaluation
//   timing.log                                   wall-clock per stage; the one
//                                                file that may differ between
//                                                reruns
// Prediction always goes through the written checkpoint (reloaded from disk),
// and features always go through the cache file, so rerunning with the same
// config reproduces every artifact except timing.log byte for byte.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

}  // namespace sleepstage
