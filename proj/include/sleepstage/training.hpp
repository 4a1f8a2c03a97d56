#pragma once

// Multi-task loss, class-balanced batching, the Adam training loop with
// validation-based model selection, and batched recording inference.

#include <cstdint>
#include <string>
#include <vector>

#include "sleepstage/adam.hpp"
#include "sleepstage/bundle.hpp"
#include "sleepstage/network.hpp"
#include "sleepstage/tensor.hpp"

namespace sleepstage {

struct TrainingConfig {
  int epochs = 200;      // optimization passes over the training set
  int batch_size = 200;
  double learning_rate = 1e-4;
  double lambda_reg = 1e-3;
  double dropout = 0.2;
  bool balanced_batching = true;
  std::uint64_t seed = 1;

  void validate(int n_classes) const;
};

// Sum over slots of -sum_y target*ln(posterior); targets must be one-hot.
// A posterior of exactly 0 at a target index is an error; positive values are
// floored at 1e-12 inside the log.
double multitask_loss(const std::vector<std::vector<double>>& posteriors,
                      const std::vector<std::vector<double>>& targets);

struct TrainRecording {
  std::string subject_id;
  std::vector<Tensor> epochs;  // [P, M|F, T] images, label-aligned
  std::vector<Stage> labels;
};
using Corpus = std::vector<TrainRecording>;

struct SampleRef {
  std::int32_t recording = 0;
  std::int64_t epoch = 0;
};

std::int64_t corpus_size(const Corpus& corpus);

// batch_size/Y samples per center-epoch class, drawn with replacement within
// class. Errors when a class is absent or batch_size is not divisible by Y.
std::vector<SampleRef> make_balanced_batch(const Corpus& corpus, int batch_size,
                                           int n_classes, Rng& rng);

// Network input + per-sample label windows for a set of sample references.
// Input layout follows the spec's architecture (see forward_logits); labels
// are row-major (sample, slot) class indices.
struct AssembledBatch {
  Tensor input;
  std::vector<int> labels;
};
AssembledBatch assemble_batch(const ModelSpec& spec, const Corpus& corpus,
                              const std::vector<SampleRef>& refs);

// Per-slot posteriors for every epoch of a recording, [n_epochs, n_slots*Y],
// evaluated in inference mode in fixed-size chunks.
Tensor predict_recording(const ParamMap& params, const ModelSpec& spec,
                         const std::vector<Tensor>& epochs,
                         std::int64_t chunk_size = 256);

// Fraction of epochs whose center-slot argmax equals the label.
double center_slot_accuracy(const Tensor& posteriors, const std::vector<Stage>& labels,
                            const ModelSpec& spec);

struct HistoryRow {
  int pass = 0;
  double train_loss = 0.0;          // mean objective (data + penalty) per step
  double val_accuracy = 0.0;        // center slot, pre-aggregation
  double val_accuracy_additive = 0.0;
  double val_accuracy_multiplicative = 0.0;
};

struct TrainResult {
  ParamMap best_params;   // parameters at the best validation pass
  ParamMap final_params;  // parameters after the last pass
  int best_pass = 0;
  double best_val_accuracy = 0.0;
  std::vector<HistoryRow> history;
};

// Balanced-batch Adam training with per-pass validation; the first pass
// reaching the best center-slot validation accuracy is retained. Divergence
// (non-finite objective) aborts with a diagnostic.
TrainResult train(const ModelSpec& spec, const Corpus& train_set, const Corpus& val_set,
                  const TrainingConfig& config);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace sleepstage
