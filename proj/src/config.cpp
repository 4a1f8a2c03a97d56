#include "sleepstage/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

#include "sleepstage/common.hpp"

namespace sleepstage {

namespace {

// Full schema: one row per key. `required` keys have no usable default.
struct SchemaRow {
  const char* section;
  const char* key;
  const char* type;
  const char* fallback;  // printed default; "-" when required
  const char* meaning;
};

constexpr SchemaRow kSchema[] = {
    {"experiment", "seed", "uint", "1", "master seed for splits and weights"},
    {"dataset", "data_dir", "path", "-", "directory holding recording bundles"},
    {"dataset", "channels", "names", "-", "1..3 unique channel names, plane order"},
    {"features", "bands", "int", "20", "filter-bank bands per plane (M)"},
    {"features", "filterbank", "triangular|none", "triangular",
     "none feeds raw spectra to a learnable band mixer"},
    {"features", "standardize", "bool", "true",
     "per-plane zero-mean/unit-variance from the training split"},
    {"model", "arch", "onemax|deepcnn", "onemax", "network architecture"},
    {"model", "mode", "one_to_many|one_to_one|many_to_one", "one_to_many",
     "context handling"},
    {"model", "tau", "int", "1", "context radius (one_to_one requires 0)"},
    {"model", "filter_widths", "ints", "3,5,7", "1-max conv widths (frames)"},
    {"model", "filters_per_width", "int", "100", "filters per width (Q)"},
    {"model", "head", "single|per_slot", "single", "output layer layout"},
    {"model", "conv_maps", "int", "96", "deep baseline feature maps"},
    {"model", "fc_units", "int", "1024", "deep baseline dense width"},
    {"training", "epochs", "int", "200", "optimization passes"},
    {"training", "batch_size", "int", "200", "samples per step"},
    {"training", "learning_rate", "float", "0.0001", "Adam step size"},
    {"training", "lambda", "float", "0.001", "L2 penalty weight"},
    {"training", "dropout", "float", "0.2", "drop probability in [0, 1)"},
    {"training", "balanced", "bool", "true", "class-balanced batches"},
    {"aggregate", "voting", "additive|multiplicative", "multiplicative",
     "fusion of the overlapping decisions"},
    {"split", "protocol", "kfold|loso", "kfold", "cross-validation protocol"},
    {"split", "folds", "int", "4", "fold count (kfold only)"},
    {"split", "validation_subjects", "int", "1", "subjects held out per fold"},
    {"output", "out_dir", "path", "-", "directory for all run artifacts"},
    {"output", "cache_dir", "path", "(out_dir)/cache",
     "shared preprocessed-feature cache; reused across runs when the bank matches"},
};

std::string key_label(const std::string& section, const std::string& key) {
  return "[" + section + "] " + key;
}

bool parse_bool(const std::string& value, const std::string& label) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw Error::config("config " + label + ": expected true or false, got '" + value + "'");
}

std::uint64_t parse_u64_key(const std::string& value, const std::string& label) {
  try {
    return parse_u64(value, label);
  } catch (const Error&) {
    throw Error::config("config " + label + ": expected an unsigned integer, got '" +
                        value + "'");
  }
}

int parse_int(const std::string& value, const std::string& label) {
  try {
    const std::int64_t v = parse_i64(value, label);
    check(v >= INT32_MIN && v <= INT32_MAX, ErrorKind::config,
          "config " + label + ": integer out of range");
    return static_cast<int>(v);
  } catch (const Error& e) {
    throw Error::config("config " + label + ": expected an integer, got '" + value + "'");
  }
}

double parse_float(const std::string& value, const std::string& label) {
  try {
    return parse_f64(value, label);
  } catch (const Error&) {
    throw Error::config("config " + label + ": expected a number, got '" + value + "'");
  }
}

std::vector<int> parse_int_list(const std::string& value, const std::string& label) {
  std::vector<int> out;
  for (const std::string& tok : split(value, ',')) {
    const std::string t = trim(tok);
    check(!t.empty(), ErrorKind::config, "config " + label + ": empty list element");
    out.push_back(parse_int(t, label));
  }
  check(!out.empty(), ErrorKind::config, "config " + label + ": list must not be empty");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& value,
                                         const std::string& label) {
  std::vector<std::string> out;
  for (const std::string& tok : split(value, ',')) {
    const std::string t = trim(tok);
    check(!t.empty(), ErrorKind::config, "config " + label + ": empty list element");
    out.push_back(t);
  }
  check(!out.empty(), ErrorKind::config, "config " + label + ": list must not be empty");
  return out;
}

std::string format_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_names(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += v[i];
  }
  return out;
}

}  // namespace

ConfigSections parse_config_sections(const std::string& text) {
  ConfigSections sections;
  std::string current;
  int line_no = 0;
  for (const std::string& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      check(line.back() == ']', ErrorKind::config,
            "config line " + std::to_string(line_no) + ": unterminated section header");
      current = trim(line.substr(1, line.size() - 2));
      check(!current.empty(), ErrorKind::config,
            "config line " + std::to_string(line_no) + ": empty section name");
      check(!sections.count(current), ErrorKind::config,
            "config line " + std::to_string(line_no) + ": duplicate section [" +
                current + "]");
      sections[current];
      continue;
    }
    const std::size_t eq = line.find('=');
    check(eq != std::string::npos, ErrorKind::config,
          "config line " + std::to_string(line_no) + ": expected key = value");
    check(!current.empty(), ErrorKind::config,
          "config line " + std::to_string(line_no) + ": key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check(!key.empty(), ErrorKind::config,
          "config line " + std::to_string(line_no) + ": empty key");
    check(!value.empty(), ErrorKind::config,
          "config line " + std::to_string(line_no) + ": empty value for '" + key + "'");
    auto& sec = sections[current];
    check(!sec.count(key), ErrorKind::config,
          "config line " + std::to_string(line_no) + ": duplicate key '" + key +
              "' in section [" + current + "]");
    sec[key] = value;
  }
  return sections;
}

std::string filterbank_kind_name(FilterBankKind k) {
  return k == FilterBankKind::triangular ? "triangular" : "none";
}

FilterBankKind filterbank_kind_from_name(const std::string& name) {
  if (name == "triangular") return FilterBankKind::triangular;
  if (name == "none") return FilterBankKind::none;
  throw Error::config("unknown filter-bank kind: " + name);
}

std::string split_protocol_name(SplitProtocol p) {
  return p == SplitProtocol::kfold ? "kfold" : "loso";
}

SplitProtocol split_protocol_from_name(const std::string& name) {
  if (name == "kfold") return SplitProtocol::kfold;
  if (name == "loso") return SplitProtocol::loso;
  throw Error::config("unknown split protocol: " + name);
}

void ExperimentConfig::validate() const {
  check(!data_dir.empty(), ErrorKind::config,
        "config [dataset] data_dir: a bundle directory is required");
  check(!channels.empty() && channels.size() <= 3, ErrorKind::config,
        "config [dataset] channels: between one and three channel names required");
  std::set<std::string> seen(channels.begin(), channels.end());
  check(seen.size() == channels.size(), ErrorKind::config,
        "config [dataset] channels: names must be unique");

  check(bands >= 2, ErrorKind::config, "config [features] bands: need at least 2");
  check(tau >= 0, ErrorKind::config, "config [model] tau: must be non-negative");
  try {
    ContextConfig ctx{tau, mode};
    ctx.validate();
  } catch (const Error& e) {
    throw Error::config(std::string("config [model] tau: ") + e.what());
  }
  if (filterbank == FilterBankKind::none)
    check(arch == ArchKind::onemax, ErrorKind::config,
          "config [features] filterbank: 'none' (learnable mixer) needs arch = onemax");
  if (arch == ArchKind::onemax) {
    check(!filter_widths.empty(), ErrorKind::config,
          "config [model] filter_widths: at least one width required");
    std::set<int> uniq(filter_widths.begin(), filter_widths.end());
    check(uniq.size() == filter_widths.size(), ErrorKind::config,
          "config [model] filter_widths: widths must be unique");
    for (int w : filter_widths)
      check(w >= 1, ErrorKind::config,
            "config [model] filter_widths: widths must be positive");
    check(filters_per_width >= 1, ErrorKind::config,
          "config [model] filters_per_width: must be positive");
  } else {
    check(conv_maps >= 1, ErrorKind::config,
          "config [model] conv_maps: must be positive");
    check(fc_units >= 1, ErrorKind::config, "config [model] fc_units: must be positive");
  }
  try {
    training.validate(kNumStages);
  } catch (const Error& e) {
    throw Error::config(std::string("config [training]: ") + e.what());
  }
  if (protocol == SplitProtocol::kfold)
    check(folds >= 2, ErrorKind::config, "config [split] folds: need at least 2");
  check(validation_subjects >= 1, ErrorKind::config,
        "config [split] validation_subjects: need at least 1");
  check(!out_dir.empty(), ErrorKind::config,
        "config [output] out_dir: an output directory is required");
}

ExperimentConfig experiment_config_from_text(const std::string& text) {
  const ConfigSections sections = parse_config_sections(text);

  // Reject anything outside the schema first so typos are named precisely.
  for (const auto& [section, entries] : sections) {
    bool known_section = false;
    for (const SchemaRow& row : kSchema)
      if (section == row.section) known_section = true;
    check(known_section, ErrorKind::config, "config: unknown section [" + section + "]");
    for (const auto& [key, value] : entries) {
      bool known_key = false;
      for (const SchemaRow& row : kSchema)
        if (section == row.section && key == row.key) known_key = true;
      check(known_key, ErrorKind::config,
            "config: unknown key '" + key + "' in section [" + section + "]");
    }
  }

  auto get = [&sections](const char* section, const char* key) -> const std::string* {
    const auto sec = sections.find(section);
    if (sec == sections.end()) return nullptr;
    const auto it = sec->second.find(key);
    return it == sec->second.end() ? nullptr : &it->second;
  };
  auto require_key = [&get](const char* section, const char* key) -> const std::string& {
    const std::string* v = get(section, key);
    check(v != nullptr, ErrorKind::config,
          "config: missing required key " + key_label(section, key));
    return *v;
  };

  ExperimentConfig cfg;
  if (const auto* v = get("experiment", "seed"))
    cfg.seed = parse_u64_key(*v, key_label("experiment", "seed"));

  cfg.data_dir = require_key("dataset", "data_dir");
  cfg.channels =
      parse_name_list(require_key("dataset", "channels"), key_label("dataset", "channels"));

  if (const auto* v = get("features", "bands"))
    cfg.bands = parse_int(*v, key_label("features", "bands"));
  if (const auto* v = get("features", "filterbank")) {
    try {
      cfg.filterbank = filterbank_kind_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("features", "filterbank") + ": " +
                          e.what());
    }
  }
  if (const auto* v = get("features", "standardize"))
    cfg.standardize = parse_bool(*v, key_label("features", "standardize"));

  if (const auto* v = get("model", "arch")) {
    try {
      cfg.arch = arch_kind_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("model", "arch") + ": " + e.what());
    }
  }
  if (const auto* v = get("model", "mode")) {
    try {
      cfg.mode = context_mode_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("model", "mode") + ": " + e.what());
    }
  }
  if (const auto* v = get("model", "tau")) cfg.tau = parse_int(*v, key_label("model", "tau"));
  if (const auto* v = get("model", "filter_widths"))
    cfg.filter_widths = parse_int_list(*v, key_label("model", "filter_widths"));
  if (const auto* v = get("model", "filters_per_width"))
    cfg.filters_per_width = parse_int(*v, key_label("model", "filters_per_width"));
  if (const auto* v = get("model", "head")) {
    try {
      cfg.head = head_kind_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("model", "head") + ": " + e.what());
    }
  }
  if (const auto* v = get("model", "conv_maps"))
    cfg.conv_maps = parse_int(*v, key_label("model", "conv_maps"));
  if (const auto* v = get("model", "fc_units"))
    cfg.fc_units = parse_int(*v, key_label("model", "fc_units"));

  if (const auto* v = get("training", "epochs"))
    cfg.training.epochs = parse_int(*v, key_label("training", "epochs"));
  if (const auto* v = get("training", "batch_size"))
    cfg.training.batch_size = parse_int(*v, key_label("training", "batch_size"));
  if (const auto* v = get("training", "learning_rate"))
    cfg.training.learning_rate = parse_float(*v, key_label("training", "learning_rate"));
  if (const auto* v = get("training", "lambda"))
    cfg.training.lambda_reg = parse_float(*v, key_label("training", "lambda"));
  if (const auto* v = get("training", "dropout"))
    cfg.training.dropout = parse_float(*v, key_label("training", "dropout"));
  if (const auto* v = get("training", "balanced"))
    cfg.training.balanced_batching = parse_bool(*v, key_label("training", "balanced"));

  if (const auto* v = get("aggregate", "voting")) {
    try {
      cfg.voting = voting_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("aggregate", "voting") + ": " + e.what());
    }
  }

  if (const auto* v = get("split", "protocol")) {
    try {
      cfg.protocol = split_protocol_from_name(*v);
    } catch (const Error& e) {
      throw Error::config("config " + key_label("split", "protocol") + ": " + e.what());
    }
  }
  if (const auto* v = get("split", "folds"))
    cfg.folds = parse_int(*v, key_label("split", "folds"));
  if (const auto* v = get("split", "validation_subjects"))
    cfg.validation_subjects = parse_int(*v, key_label("split", "validation_subjects"));

  cfg.out_dir = require_key("output", "out_dir");
  if (const auto* v = get("output", "cache_dir")) cfg.cache_dir = *v;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_text(read_file_text(path));
}

std::string config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "seed = " << cfg.seed << "\n\n";
  out << "[dataset]\n";
  out << "data_dir = " << cfg.data_dir.string() << "\n";
  out << "channels = " << join_names(cfg.channels) << "\n\n";
  out << "[features]\n";
  out << "bands = " << cfg.bands << "\n";
  out << "filterbank = " << filterbank_kind_name(cfg.filterbank) << "\n";
  out << "standardize = " << (cfg.standardize ? "true" : "false") << "\n\n";
  out << "[model]\n";
  out << "arch = " << arch_kind_name(cfg.arch) << "\n";
  out << "mode = " << context_mode_name(cfg.mode) << "\n";
  out << "tau = " << cfg.tau << "\n";
  out << "filter_widths = " << join_ints(cfg.filter_widths) << "\n";
  out << "filters_per_width = " << cfg.filters_per_width << "\n";
  out << "head = " << head_kind_name(cfg.head) << "\n";
  out << "conv_maps = " << cfg.conv_maps << "\n";
  out << "fc_units = " << cfg.fc_units << "\n\n";
  out << "[training]\n";
  out << "epochs = " << cfg.training.epochs << "\n";
  out << "batch_size = " << cfg.training.batch_size << "\n";
  out << "learning_rate = " << format_g17(cfg.training.learning_rate) << "\n";
  out << "lambda = " << format_g17(cfg.training.lambda_reg) << "\n";
  out << "dropout = " << format_g17(cfg.training.dropout) << "\n";
  out << "balanced = " << (cfg.training.balanced_batching ? "true" : "false") << "\n\n";
  out << "[aggregate]\n";
  out << "voting = " << voting_name(cfg.voting) << "\n\n";
  out << "[split]\n";
  out << "protocol = " << split_protocol_name(cfg.protocol) << "\n";
  out << "folds = " << cfg.folds << "\n";
  out << "validation_subjects = " << cfg.validation_subjects << "\n\n";
  out << "[output]\n";
  out << "out_dir = " << cfg.out_dir.string() << "\n";
  if (!cfg.cache_dir.empty()) out << "cache_dir = " << cfg.cache_dir.string() << "\n";
  return out.str();
}

std::string config_schema_text() {
  std::ostringstream out;
  out << "section\tkey\ttype\tdefault\tmeaning\n";
  for (const SchemaRow& row : kSchema)
    out << "[" << row.section << "]\t" << row.key << "\t" << row.type << "\t"
        << row.fallback << "\t" << row.meaning << "\n";
  return out.str();
}

}  // namespace sleepstage
