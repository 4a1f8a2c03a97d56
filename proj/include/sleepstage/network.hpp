#pragma once

// Model assembly: the multi-width 1-max CNN and the deep CNN baseline, both
// emitting one posterior per output-context slot, plus parameter
// initialization, context/label-window assembly, and checkpoint files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sleepstage/adam.hpp"
#include "sleepstage/bundle.hpp"
#include "sleepstage/ops.hpp"
#include "sleepstage/tape.hpp"
#include "sleepstage/tensor.hpp"
#include "sleepstage/tfr.hpp"

namespace sleepstage {

enum class ContextMode { one_to_many, one_to_one, many_to_one };
std::string context_mode_name(ContextMode mode);
ContextMode context_mode_from_name(const std::string& name);

struct ContextConfig {
  int tau = 0;
  ContextMode mode = ContextMode::one_to_one;

  int context_size() const { return 2 * tau + 1; }
  // Posteriors emitted per forward pass.
  int n_slots() const { return mode == ContextMode::one_to_many ? context_size() : 1; }
  // Epochs consumed per forward pass (stacked along time).
  int input_epochs() const { return mode == ContextMode::many_to_one ? context_size() : 1; }
  void validate() const;
};

enum class HeadKind { single, per_slot };
std::string head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

enum class ArchKind { onemax, deepcnn };
std::string arch_kind_name(ArchKind kind);
ArchKind arch_kind_from_name(const std::string& name);

struct OneMaxCnnSpec {
  std::vector<int> filter_widths{3, 5, 7};  // R = |filter_widths|
  int filters_per_width = 100;              // Q
  // single: one affine map to all slot logits; per_slot: one affine per slot
  // (ablation option; identical expressiveness).
  HeadKind head = HeadKind::single;
};

struct DeepCnnSpec {
  // conv1 3x3 x maps, pool 2x1, conv2 3x3 x maps, pool 2x2, two fc layers.
  int conv_maps = 96;
  int fc_units = 1024;
};

// Spatial sizes along the fixed deep pipeline (valid convs, stride = pool).
struct DeepCnnDims {
  std::int64_t c1_h = 0, c1_w = 0;  // after conv1
  std::int64_t p1_h = 0, p1_w = 0;  // after pool1 (2x1)
  std::int64_t c2_h = 0, c2_w = 0;  // after conv2
  std::int64_t p2_h = 0, p2_w = 0;  // after pool2 (2x2)
  std::int64_t flat = 0;            // flattened feature length
};

struct ModelSpec {
  ArchKind arch = ArchKind::onemax;
  int planes = 0;  // P: input image planes (selected channels)
  int bands = 0;   // M: filter-bank bands per plane
  int frames = 0;  // T: frames per epoch
  int n_classes = 5;
  ContextConfig context;
  double dropout_rate = 0.2;
  double lambda_reg = 1e-3;
  OneMaxCnnSpec onemax;
  DeepCnnSpec deepcnn;
  // When set (onemax only), the model consumes raw [P, F, T] spectra and owns
  // a learnable non-negative band-mixing matrix shared across planes.
  bool learn_filterbank = false;
  int spectrum_bins = 0;  // F; required when learn_filterbank

  void validate() const;
  int input_frames() const { return frames * context.input_epochs(); }
  int n_slots() const { return context.n_slots(); }
  int pooled_len() const {
    return onemax.filters_per_width * static_cast<int>(onemax.filter_widths.size());
  }
  int n_logits() const { return n_slots() * n_classes; }
  DeepCnnDims deep_dims() const;
};

// Uniform(+-sqrt(6/fan_in)) weights, zero biases; the learnable band mixer is
// initialized to the triangular bank. Deterministic per (spec, seed).
ParamMap init_params(const ModelSpec& spec, std::uint64_t seed);

// Records the full forward graph for a prepared input batch and returns the
// logits node [B, n_slots*Y]. Input layout: onemax [B, P, M|F, T_eff];
// deepcnn [B, M, T_eff, P] (channels last). dropout_rng required in train mode
// when dropout_rate > 0.
NodeId forward_logits(Tape& tape, const ModelSpec& spec,
                      const std::map<std::string, NodeId>& param_nodes,
                      NodeId input, bool train_mode, Rng* dropout_rng);

// Leaf-loads every parameter onto the tape (with gradients when train_mode).
std::map<std::string, NodeId> load_param_nodes(Tape& tape, const ParamMap& params,
                                               bool needs_grad);

// Batched inference: images [B, ...input layout...] -> per-slot softmax
// posteriors [B, n_slots*Y].
Tensor forward_posteriors(const ParamMap& params, const ModelSpec& spec,
                          const Tensor& batch, bool train_mode = false,
                          Rng* dropout_rng = nullptr);

// Single image ([P, M|F, T_eff] regardless of arch; transposed internally for
// the deep baseline) -> n_slots posterior vectors, slots ordered left-to-right.
std::vector<std::vector<double>> forward(const ParamMap& params, const ModelSpec& spec,
                                         const Tensor& image, bool train_mode = false,
                                         Rng* dropout_rng = nullptr);

// Stacks epochs[index-tau .. index+tau] along the time axis ([P,M,T] each ->
// [P,M,(2tau+1)T]); out-of-range neighbors replicate the edge epoch.
Tensor assemble_time_context(const std::vector<Tensor>& epochs, std::int64_t index,
                             int tau);

// Label window y_{index-tau} .. y_{index+tau} with edge replication.
std::vector<int> label_window(const std::vector<Stage>& labels, std::int64_t index,
                              int tau);

// Checkpoint: versioned container with a plain-text header (spec echo, seed,
// input channel names, optional per-plane standardization stats) followed by
// named little-endian 32-bit float tensors.
struct Checkpoint {
  ModelSpec spec;
  std::uint64_t init_seed = 0;
  std::vector<std::string> channel_names;              // may be empty
  std::vector<ChannelStandardizer> standardizers;      // empty or one per plane
  ParamMap params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace sleepstage
