// Command-line entry point wiring the pipeline end to end: synthetic corpus
// generation, feature caching, per-fold training, prediction, decision
// aggregation, evaluation, hypnogram rendering, and the one-shot cross-
// validated `run`. Errors exit nonzero and print a machine-readable category
// (error[<kind>]: ...) on stderr.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sleepstage/common.hpp"
#include "sleepstage/config.hpp"
#include "sleepstage/experiment.hpp"
#include "sleepstage/grid.hpp"
#include "sleepstage/metrics.hpp"
#include "sleepstage/synth.hpp"

using namespace sleepstage;
namespace fs = std::filesystem;

namespace {

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::internal: return "internal";
  }
  return "internal";
}

int kind_exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::io: return 3;
    case ErrorKind::validation: return 4;
    case ErrorKind::numeric: return 5;
    case ErrorKind::internal: return 6;
  }
  return 6;
}

std::vector<std::string> name_list(const std::string& csv, const std::string& what) {
  std::vector<std::string> out;
  for (const std::string& tok : split(csv, ',')) {
    const std::string t = trim(tok);
    check(!t.empty(), ErrorKind::config, what + ": empty list element");
    out.push_back(t);
  }
  check(!out.empty(), ErrorKind::config, what + ": at least one name required");
  return out;
}

std::string subject_tag(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%03d", index);
  return buf;
}

// ---- synth ----

struct SynthArgs {
  int subjects = 4;
  std::int64_t epochs = 120;
  std::uint64_t seed = 1;
  int channels = 3;
  double amp_jitter = 0.35;
  std::string profile = "separable";
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig sc;
  sc.n_channels = a.channels;
  sc.amp_jitter_sigma = a.amp_jitter;
  if (a.profile == "overlapped") sc.signatures = overlapped_signatures();
  const MarkovStageModel model = calibrate_transition_matrix(
      sc.lag1_target, sc.lag2_target, sc.stationary_pref, a.seed);
  fs::create_directories(a.out_dir);
  for (int s = 0; s < a.subjects; ++s) {
    const std::string id = subject_tag(s);
    const std::string tag = "subject:" + std::to_string(s) + ":" + std::to_string(a.seed);
    const RecordingBundle b = generate_recording(model, sc, id, a.epochs,
                                                 fnv1a64(tag.data(), tag.size()));
    write_bundle(fs::path(a.out_dir) / id, b);
  }
  std::cout << "wrote " << a.subjects << " bundles of " << a.epochs
            << " epochs under " << a.out_dir << "\n";
  return 0;
}

// ---- preprocess ----

struct PreprocessArgs {
  std::string data_dir;
  std::string channels_csv;
  int bands = 20;
  std::string filterbank = "triangular";
  std::string cache_dir;
};

int cmd_preprocess(const PreprocessArgs& a) {
  ExperimentConfig bank_cfg;  // only the fields make_banks reads
  bank_cfg.channels = name_list(a.channels_csv, "--channels");
  bank_cfg.bands = a.bands;
  bank_cfg.filterbank = filterbank_kind_from_name(a.filterbank);

  const auto dirs = find_bundle_dirs(a.data_dir);
  check(!dirs.empty(), ErrorKind::io,
        "no recording bundles (subdirectories with a manifest.txt) under " + a.data_dir);
  fs::create_directories(a.cache_dir);

  std::vector<FilterBank> banks;
  std::int64_t rate = 0;
  for (const fs::path& dir : dirs) {
    const RecordingBundle b = load_prepared_bundle(dir);
    if (banks.empty()) {
      rate = b.sample_rate_hz;
      banks = make_banks(bank_cfg, stft_one_sided_bins(rate), static_cast<double>(rate));
    } else {
      check(b.sample_rate_hz == rate, ErrorKind::validation,
            "all recordings must share one sample rate (subject " + b.subject_id + ")");
    }
    const PreparedRecording rec =
        prepare_recording(b, bank_cfg.channels, banks, a.cache_dir);
    write_file_text(fs::path(a.cache_dir) / (rec.subject_id + ".hyp"),
                    hypnogram_text(rec.labels));
  }
  std::cout << "cached " << dirs.size() << " recordings under " << a.cache_dir << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string train_csv;
  std::string validation_csv;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_experiment_config(a.config);
  const auto train_ids = name_list(a.train_csv, "--train-subjects");
  const auto val_ids = name_list(a.validation_csv, "--validation-subjects");
  std::set<std::string> wanted(train_ids.begin(), train_ids.end());
  for (const std::string& id : val_ids)
    check(wanted.insert(id).second, ErrorKind::config,
          "subject '" + id + "' appears in both --train-subjects and "
          "--validation-subjects");

  const fs::path cache_dir = cfg.effective_cache_dir();
  fs::create_directories(cache_dir);
  std::map<std::string, PreparedRecording> recs;
  std::vector<FilterBank> banks;
  std::int64_t rate = 0;
  for (const fs::path& dir : find_bundle_dirs(cfg.data_dir)) {
    const RecordingBundle b = load_prepared_bundle(dir);
    if (!wanted.count(b.subject_id)) continue;
    if (banks.empty()) {
      rate = b.sample_rate_hz;
      banks = make_banks(cfg, stft_one_sided_bins(rate), static_cast<double>(rate));
    } else {
      check(b.sample_rate_hz == rate, ErrorKind::validation,
            "all recordings must share one sample rate (subject " + b.subject_id + ")");
    }
    recs.emplace(b.subject_id, prepare_recording(b, cfg.channels, banks, cache_dir));
  }
  for (const std::string& id : wanted)
    check(recs.count(id), ErrorKind::io,
          "subject '" + id + "' not found under " + cfg.data_dir.string());

  std::vector<ChannelStandardizer> stand;
  if (cfg.standardize) {
    std::vector<const PreparedRecording*> refs;
    for (const std::string& id : train_ids) refs.push_back(&recs.at(id));
    stand = compute_standardizers(refs);
  }
  const auto to_corpus = [&](const std::vector<std::string>& ids) {
    Corpus corpus;
    for (const std::string& id : ids) {
      const PreparedRecording& r = recs.at(id);
      TrainRecording rec{r.subject_id, {}, r.labels};
      for (const Tensor& img : r.epochs)
        rec.epochs.push_back(standardize_image(img, stand));
      corpus.push_back(std::move(rec));
    }
    return corpus;
  };

  const auto& dims = recs.at(train_ids.front()).epochs.front().shape;
  const ModelSpec spec = make_model_spec(cfg, static_cast<int>(dims[0]),
                                         static_cast<int>(dims[1]),
                                         static_cast<int>(dims[2]));
  TrainingConfig tc = cfg.training;
  tc.seed = a.seed_given ? a.seed : cfg.seed;
  const TrainResult result = train(spec, to_corpus(train_ids), to_corpus(val_ids), tc);

  fs::create_directories(a.out_dir);
  Checkpoint ckpt{spec, tc.seed, cfg.channels, stand, result.best_params};
  write_checkpoint(fs::path(a.out_dir) / "checkpoint.bin", ckpt);
  write_file_text(fs::path(a.out_dir) / "history.csv", history_csv(result.history));
  std::cout << "best pass " << result.best_pass << ", validation accuracy "
            << format_f64(result.best_val_accuracy, 9) << "\n";
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string checkpoint;
  std::string bundle_dir;
  std::string out_grid;
  std::string cache_dir;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  check(!ckpt.channel_names.empty(), ErrorKind::validation,
        "checkpoint " + a.checkpoint + " lacks channel names; cannot select input "
        "channels");
  const RecordingBundle b = load_prepared_bundle(a.bundle_dir);
  const std::int64_t rate = b.sample_rate_hz;
  const int rows =
      ckpt.spec.learn_filterbank ? ckpt.spec.spectrum_bins : ckpt.spec.bands;
  const FilterBank fb = make_triangular_filterbank(rows, stft_one_sided_bins(rate),
                                                   static_cast<double>(rate));
  const std::vector<FilterBank> banks(ckpt.channel_names.size(), fb);

  std::vector<Tensor> epochs;
  if (!a.cache_dir.empty()) {
    fs::create_directories(a.cache_dir);
    epochs = prepare_recording(b, ckpt.channel_names, banks, a.cache_dir).epochs;
  } else {
    epochs = preprocess_recording(b, ckpt.channel_names, banks).epochs;
  }
  for (Tensor& img : epochs) img = standardize_image(img, ckpt.standardizers);

  const Tensor probs = predict_recording(ckpt.params, ckpt.spec, epochs);
  const int grid_tau = ckpt.spec.context.mode == ContextMode::one_to_many
                           ? ckpt.spec.context.tau
                           : 0;
  const PosteriorGrid grid =
      scatter_decisions(probs, grid_tau, static_cast<std::int64_t>(epochs.size()),
                        ckpt.spec.n_classes);
  write_posterior_grid(a.out_grid, grid);
  std::cout << "wrote " << a.out_grid << " (" << grid.n_epochs << " epochs, window "
            << 2 * grid.tau + 1 << ")\n";
  return 0;
}

// ---- aggregate ----

struct AggregateArgs {
  std::string grid;
  std::string voting = "multiplicative";
  std::string out;
};

int cmd_aggregate(const AggregateArgs& a) {
  const PosteriorGrid grid = read_posterior_grid(a.grid);
  const std::vector<Stage> labels = decide(fuse_grid(grid, voting_from_name(a.voting)));
  write_file_text(a.out, hypnogram_text(labels));
  std::cout << "wrote " << a.out << " (" << labels.size() << " epochs, " << a.voting
            << " voting)\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string truth_csv;
  std::string pred_csv;
  std::string out_text;
  std::string out_csv;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto truth_paths = name_list(a.truth_csv, "--truth");
  const auto pred_paths = name_list(a.pred_csv, "--pred");
  check(truth_paths.size() == pred_paths.size(), ErrorKind::config,
        "--truth and --pred need the same number of files");
  std::vector<std::vector<Stage>> truth, pred;
  for (std::size_t i = 0; i < truth_paths.size(); ++i) {
    truth.push_back(parse_hypnogram_text(read_file_text(truth_paths[i])));
    pred.push_back(parse_hypnogram_text(read_file_text(pred_paths[i])));
  }
  const EvalReport report = evaluate_recordings(truth, pred);
  if (!a.out_text.empty()) write_file_text(a.out_text, report_text(report));
  if (!a.out_csv.empty()) write_file_text(a.out_csv, report_csv(report));
  std::cout << report_text(report);
  return 0;
}

// ---- render-hypnogram ----

struct RenderArgs {
  std::string truth;
  std::string pred;
  std::string svg;
  std::string txt;
};

int cmd_render(const RenderArgs& a) {
  const auto truth = parse_hypnogram_text(read_file_text(a.truth));
  const auto pred = parse_hypnogram_text(read_file_text(a.pred));
  render_hypnogram(truth, pred, a.svg, a.txt);
  std::cout << "wrote " << a.svg << " and " << a.txt << "\n";
  return 0;
}

// ---- run ----

struct RunArgs {
  std::string config;
  int jobs = 1;
};

int cmd_run(const RunArgs& a) {
  check(a.jobs >= 1, ErrorKind::config, "--jobs: must be at least 1");
  // Execution is single-threaded and fold order is fixed, so results are
  // identical for every --jobs value; the flag exists for interface stability.
  const ExperimentOutcome outcome = run_experiment(load_experiment_config(a.config));
  for (const FoldOutcome& fo : outcome.folds)
    std::cout << "fold " << fo.fold << ": best pass " << fo.best_pass
              << ", validation accuracy " << format_f64(fo.best_val_accuracy, 9)
              << "\n";
  std::cout << "\n" << report_text(outcome.pooled);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sleep-stage sequence labeling: joint classification and "
               "neighborhood prediction with decision aggregation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic recording corpus");
  synth->add_option("--subjects", synth_args.subjects, "number of recordings")
      ->check(CLI::PositiveNumber);
  synth->add_option("--epochs-per-subject", synth_args.epochs, "epochs per recording")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "master seed");
  synth->add_option("--channels", synth_args.channels, "channel count (1..3)")
      ->check(CLI::Range(1, 3));
  synth->add_option("--amp-jitter", synth_args.amp_jitter,
                    "lognormal sigma of per-epoch band-amplitude jitter; larger "
                    "values blur the stage signatures and make the corpus harder")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--profile", synth_args.profile,
                    "spectral signature profile: separable (distinct band "
                    "locations per stage) or overlapped (shared layout, stages "
                    "differ by band power; confusable under jitter)")
      ->check(CLI::IsMember({"separable", "overlapped"}));
  synth->add_option("--out-dir", synth_args.out_dir, "bundle output directory")
      ->required();

  PreprocessArgs pre_args;
  CLI::App* pre = app.add_subcommand("preprocess",
                                     "fill the feature cache for every bundle");
  pre->add_option("--data-dir", pre_args.data_dir, "directory of recording bundles")
      ->required();
  pre->add_option("--channels", pre_args.channels_csv,
                  "comma-separated channel names, plane order")
      ->required();
  pre->add_option("--bands", pre_args.bands, "filter-bank bands per plane")
      ->check(CLI::PositiveNumber);
  pre->add_option("--filterbank", pre_args.filterbank, "triangular|none");
  pre->add_option("--cache-dir", pre_args.cache_dir, "cache output directory")
      ->required();

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "train one model from a config");
  tr->add_option("--config", train_args.config, "experiment config file")->required();
  tr->add_option("--train-subjects", train_args.train_csv,
                 "comma-separated training subject ids")
      ->required();
  tr->add_option("--validation-subjects", train_args.validation_csv,
                 "comma-separated validation subject ids")
      ->required();
  tr->add_option("--out-dir", train_args.out_dir,
                 "directory for checkpoint.bin and history.csv")
      ->required();
  CLI::Option* seed_opt =
      tr->add_option("--seed", train_args.seed, "weight/batch seed (default: config seed)");

  PredictArgs pred_args;
  CLI::App* pr = app.add_subcommand("predict",
                                    "emit per-epoch posterior grids from a checkpoint");
  pr->add_option("--checkpoint", pred_args.checkpoint, "trained checkpoint")->required();
  pr->add_option("--bundle-dir", pred_args.bundle_dir, "recording bundle directory")
      ->required();
  pr->add_option("--out-grid", pred_args.out_grid, "posterior grid output file")
      ->required();
  pr->add_option("--cache-dir", pred_args.cache_dir,
                 "optional feature cache to fill/reuse");

  AggregateArgs agg_args;
  CLI::App* ag = app.add_subcommand("aggregate",
                                    "fuse a posterior grid into a hypnogram");
  ag->add_option("--grid", agg_args.grid, "posterior grid file")->required();
  ag->add_option("--voting", agg_args.voting, "additive|multiplicative");
  ag->add_option("--out", agg_args.out, "hypnogram text output file")->required();

  EvaluateArgs eval_args;
  CLI::App* ev = app.add_subcommand("evaluate",
                                    "score predicted hypnograms against truth");
  ev->add_option("--truth", eval_args.truth_csv, "comma-separated truth .hyp files")
      ->required();
  ev->add_option("--pred", eval_args.pred_csv, "comma-separated predicted .hyp files")
      ->required();
  ev->add_option("--out-text", eval_args.out_text, "also write the text report here");
  ev->add_option("--out-csv", eval_args.out_csv, "also write the csv report here");

  RenderArgs render_args;
  CLI::App* re = app.add_subcommand("render-hypnogram",
                                    "render truth vs prediction step plots");
  re->add_option("--truth", render_args.truth, "truth .hyp file")->required();
  re->add_option("--pred", render_args.pred, "predicted .hyp file")->required();
  re->add_option("--svg", render_args.svg, "vector graphic output")->required();
  re->add_option("--txt", render_args.txt, "text table output")->required();

  RunArgs run_args;
  CLI::App* rn = app.add_subcommand("run", "full cross-validated experiment");
  rn->add_option("--config", run_args.config, "experiment config file")->required();
  rn->add_option("--jobs", run_args.jobs,
                 "worker cap; results are identical for every value");

  CLI::App* schema = app.add_subcommand("schema", "print the config schema table");

  CLI11_PARSE(app, argc, argv);
  train_args.seed_given = seed_opt->count() > 0;

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (pre->parsed()) return cmd_preprocess(pre_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (pr->parsed()) return cmd_predict(pred_args);
    if (ag->parsed()) return cmd_aggregate(agg_args);
    if (ev->parsed()) return cmd_evaluate(eval_args);
    if (re->parsed()) return cmd_render(render_args);
    if (rn->parsed()) return cmd_run(run_args);
    if (schema->parsed()) {
      std::cout << config_schema_text();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error[" << kind_name(e.kind()) << "]: " << e.what() << "\n";
    return kind_exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return kind_exit_code(ErrorKind::internal);
  }
  return 0;
}
