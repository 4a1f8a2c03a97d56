#pragma once

// Experiment configuration: flat `key = value` text grouped into [section]
// headers, validated against a fixed schema before any work starts. Unknown
// or malformed entries fail fast and name the offending key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sleepstage/grid.hpp"
#include "sleepstage/network.hpp"
#include "sleepstage/training.hpp"

namespace sleepstage {

// Raw parse: section -> key -> value. Lines are trimmed; blank lines and
// full-line comments (starting with '#' or ';') are skipped; duplicate
// sections or keys are rejected; keys must appear inside a section.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;
ConfigSections parse_config_sections(const std::string& text);

enum class FilterBankKind { triangular, none };
std::string filterbank_kind_name(FilterBankKind k);
FilterBankKind filterbank_kind_from_name(const std::string& name);

enum class SplitProtocol { kfold, loso };
std::string split_protocol_name(SplitProtocol p);
SplitProtocol split_protocol_from_name(const std::string& name);

struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;

  // [dataset]
  std::filesystem::path data_dir;      // directory of recording bundles
  std::vector<std::string> channels;   // plane order, 1..3 unique names

  // [features]
  int bands = 20;                      // M (mixer rows when filterbank = none)
  FilterBankKind filterbank = FilterBankKind::triangular;
  bool standardize = true;             // per-plane stats from the training split

  // [model]
  ArchKind arch = ArchKind::onemax;
  ContextMode mode = ContextMode::one_to_many;
  int tau = 1;
  std::vector<int> filter_widths{3, 5, 7};
  int filters_per_width = 100;
  HeadKind head = HeadKind::single;
  int conv_maps = 96;   // deep baseline
  int fc_units = 1024;  // deep baseline

  // [training] (training.seed is ignored here; folds derive their own seeds
  // from the experiment seed)
  TrainingConfig training;

  // [aggregate]
  Voting voting = Voting::multiplicative;

  // [split]
  SplitProtocol protocol = SplitProtocol::kfold;
  int folds = 4;                // kfold only
  int validation_subjects = 1;  // held out of every fold's training set

  // [output]
  std::filesystem::path out_dir;
  std::filesystem::path cache_dir;  // empty -> out_dir/cache

  void validate() const;
  std::filesystem::path effective_cache_dir() const {
    return cache_dir.empty() ? out_dir / "cache" : cache_dir;
  }
};

// Parses and validates; every error names the section and key it refers to.
ExperimentConfig experiment_config_from_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Canonical serialization: every key explicit, schema order. Parsing the
// result reproduces the config exactly.
std::string config_text(const ExperimentConfig& cfg);

// Human-readable schema table (section, key, type, default, meaning).
std::string config_schema_text();

}  // namespace sleepstage
