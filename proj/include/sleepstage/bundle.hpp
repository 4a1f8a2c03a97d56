#pragma once

// On-disk recording bundle: a directory holding a plain-text manifest, one
// .f32le raw file per channel, and a one-byte-per-epoch label file. Loading
// maps raw label codes through the manifest's label map and harmonizes them
// to the canonical five-stage set.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sleepstage/common.hpp"

namespace sleepstage {

enum class Stage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };
inline constexpr int kNumStages = 5;
const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Raw annotation symbols prior to harmonization.
enum class RawStage { W, N1, N2, N3, N4, REM, MOVEMENT, UNKNOWN };
enum class Scheme { AASM, RK };

// N4 -> N3 under RK; MOVEMENT/UNKNOWN excluded (kept_mask false, stage
// position filled with W as a placeholder that callers must not read).
// AASM passes through and admits only the five canonical codes.
std::pair<std::vector<Stage>, std::vector<bool>> harmonize_labels(
    const std::vector<RawStage>& raw, Scheme scheme);

struct Channel {
  std::string name;
  std::vector<double> samples;
};

struct RecordingBundle {
  std::string subject_id;
  std::int64_t sample_rate_hz = 0;
  std::int64_t epoch_len_s = 0;
  std::vector<Channel> channels;
  std::vector<Stage> labels;  // one per epoch, canonical
  std::optional<std::pair<std::int64_t, std::int64_t>> in_bed_range;  // inclusive
  std::optional<std::int64_t> converted_from_epoch_len_s;

  std::int64_t epoch_count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t samples_per_epoch() const { return epoch_len_s * sample_rate_hz; }
  void validate() const;
};

RecordingBundle load_bundle(const std::filesystem::path& dir);
// Canonical writer: fixed manifest key order, AASM label map, stages.lab.
void write_bundle(const std::filesystem::path& dir, const RecordingBundle& b);

// Re-grids 20 s epochs onto 30 s epochs centered on the originals (5 s of
// context on each side, zero-padded at recording boundaries). Labels carry
// over; epoch count is preserved.
RecordingBundle convert_epoch_grid_20_to_30(const RecordingBundle& b);

// Keeps only the inclusive in_bed_range of epochs, re-based to index 0.
RecordingBundle trim_in_bed(const RecordingBundle& b);

}  // namespace sleepstage
