#include "sleepstage/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "sleepstage/common.hpp"

namespace sleepstage {

namespace {

namespace fs = std::filesystem;

double snap9(double x, const std::string& what) {
  return parse_f64(format_f64(x, 9), what);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  const auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration<double>(dt).count();
}

}  // namespace

std::vector<fs::path> find_bundle_dirs(const fs::path& data_dir) {
  check(fs::is_directory(data_dir), ErrorKind::io,
        "not a directory: " + data_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_directory()) continue;
    if (fs::exists(entry.path() / "manifest.txt")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  return dirs;
}

RecordingBundle load_prepared_bundle(const fs::path& dir) {
  RecordingBundle b = load_bundle(dir);
  if (b.epoch_len_s == 20) b = convert_epoch_grid_20_to_30(b);
  if (b.in_bed_range) b = trim_in_bed(b);
  return b;
}

int stft_one_sided_bins(std::int64_t sample_rate_hz) {
  const int win = static_cast<int>(2 * sample_rate_hz);
  int nfft = 1;
  while (nfft < win) nfft *= 2;
  return nfft / 2 + 1;
}

std::vector<FilterBank> make_banks(const ExperimentConfig& cfg, int spectrum_bins,
                                   double sample_rate_hz) {
  const int rows =
      cfg.filterbank == FilterBankKind::none ? spectrum_bins : cfg.bands;
  const FilterBank fb =
      make_triangular_filterbank(rows, spectrum_bins, sample_rate_hz);
  return std::vector<FilterBank>(cfg.channels.size(), fb);
}

std::uint64_t expected_fb_hash(const std::vector<FilterBank>& banks) {
  ByteWriter acc;
  for (const FilterBank& fb : banks) acc.u64(filterbank_hash(fb));
  return fnv1a64(acc.data().data(), acc.data().size());
}

PreparedRecording prepare_recording(const RecordingBundle& bundle,
                                    const std::vector<std::string>& channels,
                                    const std::vector<FilterBank>& banks,
                                    const fs::path& cache_dir) {
  const fs::path path = cache_dir / (bundle.subject_id + ".tfc");
  if (!fs::exists(path))
    write_tf_cache(path, preprocess_recording(bundle, channels, banks));
  TfCache cache = read_tf_cache(path);
  check(cache.channels == channels, ErrorKind::validation,
        "cache " + path.string() +
            ": channel layout differs from this configuration; delete the file "
            "or point cache_dir elsewhere");
  check(cache.fb_hash == expected_fb_hash(banks), ErrorKind::validation,
        "cache " + path.string() +
            ": filter bank fingerprint differs from this configuration; delete "
            "the file or point cache_dir elsewhere");
  check(static_cast<std::int64_t>(cache.epochs.size()) == bundle.epoch_count(),
        ErrorKind::validation,
        "cache " + path.string() + ": epoch count differs from the bundle");
  return {bundle.subject_id, std::move(cache.epochs), bundle.labels};
}

std::vector<ChannelStandardizer> compute_standardizers(
    const std::vector<const PreparedRecording*>& recordings) {
  check(!recordings.empty(), ErrorKind::validation,
        "standardize: no recordings to take statistics from");
  const std::vector<std::int64_t>& shape = recordings.front()->epochs.front().shape;
  const std::int64_t P = shape[0];
  const std::int64_t plane_elems = shape[1] * shape[2];
  std::vector<double> sum(static_cast<std::size_t>(P), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(P), 0.0);
  std::int64_t n_per_plane = 0;
  for (const PreparedRecording* rec : recordings) {
    for (const Tensor& img : rec->epochs) {
      check(img.shape == shape, ErrorKind::validation,
            "standardize: image shapes differ across recordings");
      for (std::int64_t p = 0; p < P; ++p) {
        const double* v = img.v.data() + p * plane_elems;
        for (std::int64_t i = 0; i < plane_elems; ++i) {
          sum[static_cast<std::size_t>(p)] += v[i];
          sumsq[static_cast<std::size_t>(p)] += v[i] * v[i];
        }
      }
      n_per_plane += plane_elems;
    }
  }
  std::vector<ChannelStandardizer> stand(static_cast<std::size_t>(P));
  for (std::int64_t p = 0; p < P; ++p) {
    const double mean = sum[static_cast<std::size_t>(p)] /
                        static_cast<double>(n_per_plane);
    const double var = std::max(
        0.0, sumsq[static_cast<std::size_t>(p)] / static_cast<double>(n_per_plane) -
                 mean * mean);
    // Round to checkpoint-header precision so the stats used for training are
    // bit-identical to the ones a reloaded checkpoint will apply.
    ChannelStandardizer st;
    st.mean = snap9(mean, "standardizer mean");
    st.stddev = snap9(std::sqrt(var), "standardizer stddev");
    check(st.stddev > 0.0, ErrorKind::validation,
          "standardize: plane " + std::to_string(p) + " has zero variance");
    stand[static_cast<std::size_t>(p)] = st;
  }
  return stand;
}

Tensor standardize_image(const Tensor& image,
                         const std::vector<ChannelStandardizer>& stand) {
  if (stand.empty()) return image;
  check(image.shape.size() == 3 &&
            image.shape[0] == static_cast<std::int64_t>(stand.size()),
        ErrorKind::validation, "standardize: one standardizer required per plane");
  const std::int64_t plane_elems = image.shape[1] * image.shape[2];
  Tensor out = image;
  for (std::size_t p = 0; p < stand.size(); ++p) {
    const double shift = stand[p].mean;
    const double scale = 1.0 / stand[p].stddev;
    double* v = out.v.data() + static_cast<std::int64_t>(p) * plane_elems;
    for (std::int64_t i = 0; i < plane_elems; ++i) v[i] = (v[i] - shift) * scale;
  }
  return out;
}

std::uint64_t fold_seed(std::uint64_t experiment_seed, int fold) {
  const std::string tag =
      "fold:" + std::to_string(fold) + ":" + std::to_string(experiment_seed);
  return fnv1a64(tag.data(), tag.size());
}

ModelSpec make_model_spec(const ExperimentConfig& cfg, int planes, int cache_bands,
                          int frames) {
  ModelSpec s;
  s.arch = cfg.arch;
  s.planes = planes;
  s.frames = frames;
  s.n_classes = kNumStages;
  s.context.tau = cfg.tau;
  s.context.mode = cfg.mode;
  s.dropout_rate = cfg.training.dropout;
  s.lambda_reg = cfg.training.lambda_reg;
  s.onemax.filter_widths = cfg.filter_widths;
  s.onemax.filters_per_width = cfg.filters_per_width;
  s.onemax.head = cfg.head;
  s.deepcnn.conv_maps = cfg.conv_maps;
  s.deepcnn.fc_units = cfg.fc_units;
  if (cfg.filterbank == FilterBankKind::none) {
    s.learn_filterbank = true;
    s.spectrum_bins = cache_bands;  // cache holds raw spectra
    s.bands = cfg.bands;            // mixer rows
  } else {
    check(cache_bands == cfg.bands, ErrorKind::internal,
          "model spec: cached band count does not match the configuration");
    s.bands = cache_bands;
  }
  s.validate();
  return s;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t_total = std::chrono::steady_clock::now();
  std::ostringstream tlog;

  fs::create_directories(cfg.out_dir);
  const fs::path cache_dir = cfg.effective_cache_dir();
  fs::create_directories(cache_dir);
  write_file_text(cfg.out_dir / "config.txt", config_text(cfg));

  // ---- discover and prepare every recording through the shared cache ----
  const auto t_prep = std::chrono::steady_clock::now();
  const std::vector<fs::path> dirs = find_bundle_dirs(cfg.data_dir);
  check(!dirs.empty(), ErrorKind::io,
        "no recording bundles (subdirectories with a manifest.txt) under " +
            cfg.data_dir.string());

  std::vector<PreparedRecording> recs;
  std::vector<FilterBank> banks;
  std::int64_t sample_rate = 0;
  std::set<std::string> seen_ids;
  for (const fs::path& dir : dirs) {
    try {
      const RecordingBundle b = load_prepared_bundle(dir);
      if (recs.empty()) {
        sample_rate = b.sample_rate_hz;
        banks = make_banks(cfg, stft_one_sided_bins(sample_rate),
                           static_cast<double>(sample_rate));
      } else {
        check(b.sample_rate_hz == sample_rate, ErrorKind::validation,
              "all recordings must share one sample rate (found " +
                  std::to_string(b.sample_rate_hz) + " Hz after " +
                  std::to_string(sample_rate) + " Hz)");
      }
      check(seen_ids.insert(b.subject_id).second, ErrorKind::validation,
            "duplicate subject id '" + b.subject_id + "'");
      recs.push_back(prepare_recording(b, cfg.channels, banks, cache_dir));
      check(recs.back().epochs.front().shape == recs.front().epochs.front().shape,
            ErrorKind::validation,
            "feature dimensions differ from the other recordings");
    } catch (const Error& e) {
      throw Error(e.kind(), "recording " + dir.filename().string() + ": " + e.what());
    }
  }
  tlog << "preprocess_seconds = " << format_f64(seconds_since(t_prep), 3) << "\n";

  std::map<std::string, const PreparedRecording*> by_id;
  for (const PreparedRecording& r : recs) by_id.emplace(r.subject_id, &r);

  const std::vector<std::int64_t>& dims = recs.front().epochs.front().shape;
  const ModelSpec spec =
      make_model_spec(cfg, static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]));

  // ---- split plan ----
  std::vector<std::string> ids;
  ids.reserve(recs.size());
  for (const PreparedRecording& r : recs) ids.push_back(r.subject_id);
  const SplitPlan plan =
      cfg.protocol == SplitProtocol::kfold
          ? make_split_plan_kfold(ids, cfg.folds, cfg.validation_subjects, cfg.seed)
          : make_split_plan_loso(ids, cfg.validation_subjects, cfg.seed);
  validate_split_plan(plan, ids.size());

  ExperimentOutcome outcome;
  outcome.plan = plan;
  std::vector<std::vector<Stage>> all_truth, all_pred;

  for (std::size_t f = 0; f < plan.size(); ++f) {
    const Fold& fold = plan[f];
    std::string stage = "setup";
    try {
      const fs::path fold_dir =
          cfg.out_dir / "folds" / ("fold" + std::to_string(f));
      fs::create_directories(fold_dir / "grids");
      fs::create_directories(fold_dir / "hypnograms");

      stage = "standardize";
      std::vector<ChannelStandardizer> stand;
      if (cfg.standardize) {
        std::vector<const PreparedRecording*> train_refs;
        for (const std::string& id : fold.train) train_refs.push_back(by_id.at(id));
        stand = compute_standardizers(train_refs);
      }
      const auto to_corpus = [&](const std::vector<std::string>& names) {
        Corpus corpus;
        for (const std::string& id : names) {
          const PreparedRecording* r = by_id.at(id);
          TrainRecording rec;
          rec.subject_id = r->subject_id;
          rec.labels = r->labels;
          rec.epochs.reserve(r->epochs.size());
          for (const Tensor& img : r->epochs)
            rec.epochs.push_back(standardize_image(img, stand));
          corpus.push_back(std::move(rec));
        }
        return corpus;
      };

      stage = "train";
      const Corpus train_set = to_corpus(fold.train);
      const Corpus val_set = to_corpus(fold.validation);
      TrainingConfig tc = cfg.training;
      tc.seed = fold_seed(cfg.seed, static_cast<int>(f));
      const auto t_train = std::chrono::steady_clock::now();
      const TrainResult result = train(spec, train_set, val_set, tc);
      tlog << "fold" << f << "_train_seconds = "
           << format_f64(seconds_since(t_train), 3) << "\n";
      write_file_text(fold_dir / "history.csv", history_csv(result.history));

      stage = "checkpoint";
      Checkpoint ckpt;
      ckpt.spec = spec;
      ckpt.init_seed = tc.seed;
      ckpt.channel_names = cfg.channels;
      ckpt.standardizers = stand;
      ckpt.params = result.best_params;
      write_checkpoint(fold_dir / "checkpoint.bin", ckpt);
      // Prediction consumes the artifact, not the in-memory parameters, so a
      // later `predict` from this file reproduces these exact outputs.
      const Checkpoint loaded = read_checkpoint(fold_dir / "checkpoint.bin");

      stage = "predict";
      const auto t_pred = std::chrono::steady_clock::now();
      const int grid_tau =
          loaded.spec.context.mode == ContextMode::one_to_many ? loaded.spec.context.tau
                                                               : 0;
      std::vector<std::vector<Stage>> truth, pred;
      for (const std::string& id : fold.test) {
        const PreparedRecording* r = by_id.at(id);
        std::vector<Tensor> epochs;
        epochs.reserve(r->epochs.size());
        for (const Tensor& img : r->epochs)
          epochs.push_back(standardize_image(img, loaded.standardizers));
        const Tensor probs = predict_recording(loaded.params, loaded.spec, epochs);
        const PosteriorGrid grid =
            scatter_decisions(probs, grid_tau,
                              static_cast<std::int64_t>(epochs.size()),
                              loaded.spec.n_classes);
        write_posterior_grid(fold_dir / "grids" / (id + ".pgrd"), grid);
        std::vector<Stage> decided = decide(fuse_grid(grid, cfg.voting));
        write_file_text(fold_dir / "hypnograms" / (id + ".hyp"),
                        hypnogram_text(decided));
        render_hypnogram(r->labels, decided, fold_dir / "hypnograms" / (id + ".svg"),
                         fold_dir / "hypnograms" / (id + ".txt"));
        truth.push_back(r->labels);
        pred.push_back(std::move(decided));
      }
      tlog << "fold" << f << "_predict_seconds = "
           << format_f64(seconds_since(t_pred), 3) << "\n";

      stage = "evaluate";
      EvalReport report = evaluate_recordings(truth, pred);
      write_file_text(fold_dir / "report.txt", report_text(report));
      write_file_text(fold_dir / "report.csv", report_csv(report));

      FoldOutcome fo;
      fo.fold = static_cast<int>(f);
      fo.test_subjects = fold.test;
      fo.best_pass = result.best_pass;
      fo.best_val_accuracy = result.best_val_accuracy;
      fo.report = std::move(report);
      outcome.folds.push_back(std::move(fo));
      for (std::size_t i = 0; i < truth.size(); ++i) {
        all_truth.push_back(std::move(truth[i]));
        all_pred.push_back(std::move(pred[i]));
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(f) + ", stage " + stage +
                                ": " + e.what());
    }
  }

  outcome.pooled = evaluate_recordings(all_truth, all_pred);
  write_file_text(cfg.out_dir / "report.txt", report_text(outcome.pooled));
  write_file_text(cfg.out_dir / "report.csv", report_csv(outcome.pooled));

  tlog << "total_seconds = " << format_f64(seconds_since(t_total), 3) << "\n";
  write_file_text(cfg.out_dir / "timing.log", tlog.str());
  return outcome;
}

}  // namespace sleepstage
