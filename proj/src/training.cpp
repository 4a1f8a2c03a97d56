#include "sleepstage/training.hpp"

#include <algorithm>
#include <cmath>

#include "sleepstage/grid.hpp"
#include "sleepstage/ops.hpp"

namespace sleepstage {

void TrainingConfig::validate(int n_classes) const {
  check(epochs >= 1, ErrorKind::config, "training: epochs must be >= 1");
  check(batch_size >= 1, ErrorKind::config, "training: batch_size must be >= 1");
  check(learning_rate > 0.0, ErrorKind::config, "training: learning_rate must be positive");
  check(lambda_reg >= 0.0, ErrorKind::config, "training: lambda must be non-negative");
  check(dropout >= 0.0 && dropout < 1.0, ErrorKind::config,
        "training: dropout must lie in [0, 1)");
  if (balanced_batching)
    check(batch_size % n_classes == 0, ErrorKind::config,
          "training: balanced batching needs batch_size divisible by the class count");
}

double multitask_loss(const std::vector<std::vector<double>>& posteriors,
                      const std::vector<std::vector<double>>& targets) {
  check(!posteriors.empty(), ErrorKind::validation, "multitask loss: no slots");
  check(posteriors.size() == targets.size(), ErrorKind::validation,
        "multitask loss: slot count mismatch");
  double loss = 0.0;
  for (std::size_t s = 0; s < posteriors.size(); ++s) {
    const auto& p = posteriors[s];
    const auto& t = targets[s];
    check(!p.empty() && p.size() == t.size(), ErrorKind::validation,
          "multitask loss: class count mismatch in slot " + std::to_string(s));
    int hot = -1;
    for (std::size_t y = 0; y < t.size(); ++y) {
      if (std::fabs(t[y] - 1.0) <= 1e-9) {
        check(hot < 0, ErrorKind::validation, "multitask loss: target is not one-hot");
        hot = static_cast<int>(y);
      } else {
        check(std::fabs(t[y]) <= 1e-9, ErrorKind::validation,
              "multitask loss: target is not one-hot");
      }
    }
    check(hot >= 0, ErrorKind::validation, "multitask loss: target is not one-hot");
    const double py = p[static_cast<std::size_t>(hot)];
    check(py > 0.0, ErrorKind::numeric,
          "multitask loss: zero posterior at the target index in slot " +
              std::to_string(s));
    loss -= std::log(std::max(py, 1e-12));
  }
  return loss;
}

std::int64_t corpus_size(const Corpus& corpus) {
  std::int64_t n = 0;
  for (const TrainRecording& r : corpus) {
    check(r.epochs.size() == r.labels.size(), ErrorKind::validation,
          "corpus: image/label count mismatch in " + r.subject_id);
    n += static_cast<std::int64_t>(r.epochs.size());
  }
  return n;
}

std::vector<SampleRef> make_balanced_batch(const Corpus& corpus, int batch_size,
                                           int n_classes, Rng& rng) {
  check(batch_size >= 1, ErrorKind::validation, "balanced batch: batch_size must be >= 1");
  check(batch_size % n_classes == 0, ErrorKind::validation,
        "balanced batch: batch_size must be divisible by the class count");
  std::vector<std::vector<SampleRef>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t r = 0; r < corpus.size(); ++r)
    for (std::size_t e = 0; e < corpus[r].labels.size(); ++e) {
      const int cls = static_cast<int>(corpus[r].labels[e]);
      check(cls >= 0 && cls < n_classes, ErrorKind::validation,
            "balanced batch: label outside the class range");
      by_class[static_cast<std::size_t>(cls)].push_back(
          {static_cast<std::int32_t>(r), static_cast<std::int64_t>(e)});
    }
  for (int c = 0; c < n_classes; ++c)
    check(!by_class[static_cast<std::size_t>(c)].empty(), ErrorKind::validation,
          std::string("balanced batch: class ") +
              stage_name(static_cast<Stage>(c)) + " has no samples");
  const int per_class = batch_size / n_classes;
  std::vector<SampleRef> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int c = 0; c < n_classes; ++c) {
    const auto& pool = by_class[static_cast<std::size_t>(c)];
    for (int i = 0; i < per_class; ++i)
      batch.push_back(pool[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(pool.size())))]);
  }
  return batch;
}

namespace {

std::vector<SampleRef> make_uniform_batch(const Corpus& corpus, int batch_size,
                                          Rng& rng) {
  std::vector<SampleRef> pool;
  for (std::size_t r = 0; r < corpus.size(); ++r)
    for (std::size_t e = 0; e < corpus[r].labels.size(); ++e)
      pool.push_back({static_cast<std::int32_t>(r), static_cast<std::int64_t>(e)});
  check(!pool.empty(), ErrorKind::validation, "batch: empty corpus");
  std::vector<SampleRef> batch;
  for (int i = 0; i < batch_size; ++i)
    batch.push_back(
        pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pool.size())))]);
  return batch;
}

// Writes one sample image (already context-assembled) into the batch tensor.
void place_sample(Tensor& batch, std::int64_t b, const Tensor& img, ArchKind arch) {
  const std::int64_t P = img.shape[0], M = img.shape[1], T = img.shape[2];
  if (arch == ArchKind::onemax) {
    std::copy(img.v.begin(), img.v.end(), batch.v.begin() + b * P * M * T);
  } else {
    double* dst = batch.v.data() + b * M * T * P;  // [M, T, P] channels-last
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t t = 0; t < T; ++t)
          dst[(m * T + t) * P + p] = img.v[static_cast<std::size_t>((p * M + m) * T + t)];
  }
}

}  // namespace

AssembledBatch assemble_batch(const ModelSpec& spec, const Corpus& corpus,
                              const std::vector<SampleRef>& refs) {
  check(!refs.empty(), ErrorKind::validation, "assemble: empty batch");
  const std::int64_t B = static_cast<std::int64_t>(refs.size());
  const std::int64_t rows = spec.learn_filterbank ? spec.spectrum_bins : spec.bands;
  const std::int64_t T_eff = spec.input_frames();
  AssembledBatch out;
  out.input = spec.arch == ArchKind::onemax
                  ? Tensor::zeros({B, spec.planes, rows, T_eff})
                  : Tensor::zeros({B, rows, T_eff, spec.planes});
  const int tau = spec.context.tau;
  for (std::int64_t b = 0; b < B; ++b) {
    const SampleRef ref = refs[static_cast<std::size_t>(b)];
    check(ref.recording >= 0 &&
              ref.recording < static_cast<std::int32_t>(corpus.size()),
          ErrorKind::validation, "assemble: recording index out of range");
    const TrainRecording& rec = corpus[static_cast<std::size_t>(ref.recording)];
    check(ref.epoch >= 0 && ref.epoch < static_cast<std::int64_t>(rec.epochs.size()),
          ErrorKind::validation, "assemble: epoch index out of range");
    if (spec.context.mode == ContextMode::many_to_one) {
      place_sample(out.input, b, assemble_time_context(rec.epochs, ref.epoch, tau),
                   spec.arch);
    } else {
      place_sample(out.input, b, rec.epochs[static_cast<std::size_t>(ref.epoch)],
                   spec.arch);
    }
    if (spec.context.mode == ContextMode::one_to_many) {
      for (int y : label_window(rec.labels, ref.epoch, tau)) out.labels.push_back(y);
    } else {
      out.labels.push_back(static_cast<int>(rec.labels[static_cast<std::size_t>(ref.epoch)]));
    }
  }
  return out;
}

Tensor predict_recording(const ParamMap& params, const ModelSpec& spec,
                         const std::vector<Tensor>& epochs, std::int64_t chunk_size) {
  check(!epochs.empty(), ErrorKind::validation, "predict: recording has no epochs");
  check(chunk_size >= 1, ErrorKind::validation, "predict: chunk size must be >= 1");
  const std::int64_t N = static_cast<std::int64_t>(epochs.size());
  Corpus one(1);
  one[0].subject_id = "recording";
  one[0].epochs = epochs;
  one[0].labels.assign(epochs.size(), Stage::W);  // labels unused for assembly here
  Tensor out = Tensor::zeros({N, spec.n_logits()});
  for (std::int64_t start = 0; start < N; start += chunk_size) {
    const std::int64_t stop = std::min(N, start + chunk_size);
    std::vector<SampleRef> refs;
    for (std::int64_t e = start; e < stop; ++e) refs.push_back({0, e});
    const AssembledBatch batch = assemble_batch(spec, one, refs);
    const Tensor probs = forward_posteriors(params, spec, batch.input);
    std::copy(probs.v.begin(), probs.v.end(),
              out.v.begin() + start * spec.n_logits());
  }
  return out;
}

double center_slot_accuracy(const Tensor& posteriors, const std::vector<Stage>& labels,
                            const ModelSpec& spec) {
  check(posteriors.shape.size() == 2 &&
            posteriors.shape[0] == static_cast<std::int64_t>(labels.size()) &&
            posteriors.shape[1] == spec.n_logits(),
        ErrorKind::validation, "accuracy: posterior shape mismatch");
  const int center = spec.context.mode == ContextMode::one_to_many ? spec.context.tau : 0;
  const int Y = spec.n_classes;
  std::int64_t hits = 0;
  for (std::int64_t n = 0; n < posteriors.shape[0]; ++n) {
    const double* p = posteriors.v.data() + n * spec.n_logits() + center * Y;
    int best = 0;
    for (int y = 1; y < Y; ++y)
      if (p[y] > p[best]) best = y;
    if (best == static_cast<int>(labels[static_cast<std::size_t>(n)])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(posteriors.shape[0]);
}

namespace {

struct ValScores {
  double center = 0.0;
  double additive = 0.0;
  double multiplicative = 0.0;
};

ValScores validation_scores(const ParamMap& params, const ModelSpec& spec,
                            const Corpus& val_set) {
  std::int64_t n_total = 0, hit_center = 0, hit_add = 0, hit_mul = 0;
  const int center = spec.context.mode == ContextMode::one_to_many ? spec.context.tau : 0;
  for (const TrainRecording& rec : val_set) {
    const Tensor probs = predict_recording(params, spec, rec.epochs);
    const std::int64_t n = static_cast<std::int64_t>(rec.labels.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const double* p = probs.v.data() + i * spec.n_logits() + center * spec.n_classes;
      int best = 0;
      for (int y = 1; y < spec.n_classes; ++y)
        if (p[y] > p[best]) best = y;
      if (best == static_cast<int>(rec.labels[static_cast<std::size_t>(i)])) ++hit_center;
    }
    // The scatter window radius equals the center slot index for every mode.
    const int grid_tau = center;
    const PosteriorGrid grid = scatter_decisions(probs, grid_tau, n, spec.n_classes);
    const std::vector<Stage> add = decide(fuse_grid(grid, Voting::additive));
    const std::vector<Stage> mul = decide(fuse_grid(grid, Voting::multiplicative));
    for (std::int64_t i = 0; i < n; ++i) {
      if (add[static_cast<std::size_t>(i)] == rec.labels[static_cast<std::size_t>(i)])
        ++hit_add;
      if (mul[static_cast<std::size_t>(i)] == rec.labels[static_cast<std::size_t>(i)])
        ++hit_mul;
    }
    n_total += n;
  }
  check(n_total > 0, ErrorKind::validation, "validation set has no epochs");
  const double d = static_cast<double>(n_total);
  return {static_cast<double>(hit_center) / d, static_cast<double>(hit_add) / d,
          static_cast<double>(hit_mul) / d};
}

}  // namespace

TrainResult train(const ModelSpec& spec_in, const Corpus& train_set,
                  const Corpus& val_set, const TrainingConfig& config) {
  check(!train_set.empty(), ErrorKind::validation, "train: empty training set");
  check(!val_set.empty(), ErrorKind::validation, "train: empty validation set");
  ModelSpec spec = spec_in;
  spec.dropout_rate = config.dropout;
  spec.lambda_reg = config.lambda_reg;
  spec.validate();
  config.validate(spec.n_classes);

  const std::int64_t n_train = corpus_size(train_set);
  check(n_train >= 1, ErrorKind::validation, "train: training corpus has no epochs");
  corpus_size(val_set);
  const std::int64_t steps_per_pass =
      std::max<std::int64_t>(1, (n_train + config.batch_size - 1) / config.batch_size);

  ParamMap params = init_params(spec, config.seed);
  Adam opt(config.learning_rate);
  Rng root(config.seed);
  Rng batch_rng = root.derive(0x6261'7463'6800ULL);
  Rng dropout_rng = root.derive(0x64726f70ULL);

  TrainResult result;
  result.best_pass = 0;
  result.best_val_accuracy = -1.0;

  for (int pass = 1; pass <= config.epochs; ++pass) {
    double loss_sum = 0.0;
    for (std::int64_t step = 0; step < steps_per_pass; ++step) {
      const std::vector<SampleRef> refs =
          config.balanced_batching
              ? make_balanced_batch(train_set, config.batch_size, spec.n_classes,
                                    batch_rng)
              : make_uniform_batch(train_set, config.batch_size, batch_rng);
      const AssembledBatch batch = assemble_batch(spec, train_set, refs);

      Tape tape;
      const auto nodes = load_param_nodes(tape, params, true);
      const NodeId input = tape.leaf(batch.input, false);
      const NodeId logits = forward_logits(tape, spec, nodes, input, true, &dropout_rng);
      const NodeId data_term =
          multitask_xent(tape, logits, batch.labels, spec.n_slots(), spec.n_classes);
      NodeId objective = data_term;
      if (spec.lambda_reg > 0.0) {
        std::vector<NodeId> all_params;
        for (const auto& [name, id] : nodes) all_params.push_back(id);
        objective = add(tape, data_term, l2_penalty(tape, all_params, spec.lambda_reg));
      }
      const double loss = tape.value(objective).v[0];
      if (!std::isfinite(loss))
        throw Error::numeric("training diverged: non-finite objective at pass " +
                             std::to_string(pass) + " step " + std::to_string(step + 1));
      tape.backward(objective);

      ParamMap grads;
      for (const auto& [name, id] : nodes) grads[name] = tape.grad(id);
      opt.step(params, grads);
      if (spec.learn_filterbank) {
        // Projected step keeps the band mixer non-negative.
        for (double& v : params.at("band_mixer").v) v = std::max(v, 0.0);
      }
      loss_sum += loss;
    }

    const ValScores val = validation_scores(params, spec, val_set);
    result.history.push_back({pass, loss_sum / static_cast<double>(steps_per_pass),
                              val.center, val.additive, val.multiplicative});
    if (val.center > result.best_val_accuracy) {
      result.best_val_accuracy = val.center;
      result.best_pass = pass;
      result.best_params = params;
    }
  }
  result.final_params = std::move(params);
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out =
      "pass,train_loss,val_accuracy,val_accuracy_additive,val_accuracy_multiplicative\n";
  for (const HistoryRow& row : history) {
    out += std::to_string(row.pass);
    out += ',';
    out += format_f64(row.train_loss, 9);
    out += ',';
    out += format_f64(row.val_accuracy, 9);
    out += ',';
    out += format_f64(row.val_accuracy_additive, 9);
    out += ',';
    out += format_f64(row.val_accuracy_multiplicative, 9);
    out += '\n';
  }
  return out;
}

}  // namespace sleepstage
