#pragma once

// Decision aggregation: scatter per-epoch multi-slot outputs into a grid of
// posteriors about each target epoch, fuse them by additive or multiplicative
// voting, and decide final labels. Includes the grid file format and
// hypnogram text/vector-graphics rendering.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepstage/bundle.hpp"
#include "sleepstage/tensor.hpp"

namespace sleepstage {

struct GridEntry {
  int offset = 0;              // source epoch = target epoch + offset
  std::vector<double> probs;   // posterior over classes, sums to 1
};

struct PosteriorGrid {
  std::int64_t n_epochs = 0;
  int tau = 0;
  int n_classes = 5;
  // entries[n]: decisions about epoch n, sorted by ascending offset.
  std::vector<std::vector<GridEntry>> entries;

  // Checks offset ranges/order, source-epoch existence, probability lengths,
  // and per-entry sums (within sum_tol).
  void validate(double sum_tol = 1e-9) const;
  std::int64_t total_entries() const;
};

// outputs: [epoch_count, (2*tau+1)*n_classes] per-slot posteriors, slots
// ordered left-to-right (k = -tau..tau). Slot k of input epoch i lands at
// target epoch i+k (when it exists) under offset -k.
PosteriorGrid scatter_decisions(const Tensor& outputs, int tau,
                                std::int64_t epoch_count, int n_classes);

// Arithmetic mean of the available posteriors.
std::vector<double> vote_additive(const std::vector<GridEntry>& entries);

// Element-wise product of the available posteriors scaled by 1/count,
// computed in log space with each factor floored at ln(1e-12). The result is
// generally not a probability distribution; only its argmax is meaningful.
std::vector<double> vote_multiplicative(const std::vector<GridEntry>& entries);

enum class Voting { additive, multiplicative };
std::string voting_name(Voting v);
Voting voting_from_name(const std::string& name);

std::vector<std::vector<double>> fuse_grid(const PosteriorGrid& grid, Voting voting);

// Label = argmax; exact ties break toward the lowest class index.
std::vector<Stage> decide(const std::vector<std::vector<double>>& fused);

void write_posterior_grid(const std::filesystem::path& path, const PosteriorGrid& grid);
PosteriorGrid read_posterior_grid(const std::filesystem::path& path);

// Per-slot argmax accuracy, slots ordered left-to-right (k = -tau..tau): the
// slot-k entries are those stored under offset -k. Requires every slot to
// have at least one entry (true whenever n_epochs > tau) and truth to match
// the grid length.
std::vector<double> slot_accuracies(const PosteriorGrid& grid,
                                    const std::vector<Stage>& truth);

// One stage mnemonic per line.
std::string hypnogram_text(const std::vector<Stage>& labels);
std::vector<Stage> parse_hypnogram_text(const std::string& text);

// Side-by-side text table and a stacked step-plot vector graphic
// (ground truth above prediction).
void render_hypnogram(const std::vector<Stage>& truth, const std::vector<Stage>& predicted,
                      const std::filesystem::path& svg_path,
                      const std::filesystem::path& txt_path);

}  // namespace sleepstage
