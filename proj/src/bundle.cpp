#include "sleepstage/bundle.hpp"

#include <algorithm>
#include <map>

namespace sleepstage {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::W: return "W";
    case Stage::N1: return "N1";
    case Stage::N2: return "N2";
    case Stage::N3: return "N3";
    case Stage::REM: return "REM";
  }
  throw Error::internal("invalid stage value");
}

Stage stage_from_name(const std::string& name) {
  for (int i = 0; i < kNumStages; ++i)
    if (name == stage_name(static_cast<Stage>(i))) return static_cast<Stage>(i);
  throw Error::validation("unknown stage name: '" + name + "'");
}

namespace {

const std::map<std::string, RawStage>& raw_stage_names() {
  static const std::map<std::string, RawStage> m = {
      {"W", RawStage::W},         {"N1", RawStage::N1},
      {"N2", RawStage::N2},       {"N3", RawStage::N3},
      {"N4", RawStage::N4},       {"REM", RawStage::REM},
      {"MOVEMENT", RawStage::MOVEMENT}, {"UNKNOWN", RawStage::UNKNOWN}};
  return m;
}

bool in_scheme(RawStage s, Scheme scheme) {
  if (scheme == Scheme::RK) return true;  // full R&K set
  switch (s) {
    case RawStage::W:
    case RawStage::N1:
    case RawStage::N2:
    case RawStage::N3:
    case RawStage::REM:
      return true;
    default:
      return false;
  }
}

}  // namespace

std::pair<std::vector<Stage>, std::vector<bool>> harmonize_labels(
    const std::vector<RawStage>& raw, Scheme scheme) {
  std::vector<Stage> out(raw.size(), Stage::W);
  std::vector<bool> kept(raw.size(), true);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawStage r = raw[i];
    check(in_scheme(r, scheme), ErrorKind::validation,
          "label code outside scheme at epoch " + std::to_string(i));
    switch (r) {
      case RawStage::W: out[i] = Stage::W; break;
      case RawStage::N1: out[i] = Stage::N1; break;
      case RawStage::N2: out[i] = Stage::N2; break;
      case RawStage::N3: out[i] = Stage::N3; break;
      case RawStage::N4: out[i] = Stage::N3; break;  // merge
      case RawStage::REM: out[i] = Stage::REM; break;
      case RawStage::MOVEMENT:
      case RawStage::UNKNOWN:
        kept[i] = false;
        break;
    }
  }
  return {std::move(out), std::move(kept)};
}

void RecordingBundle::validate() const {
  check(!subject_id.empty(), ErrorKind::validation, "bundle: empty subject_id");
  check(sample_rate_hz > 0, ErrorKind::validation, "bundle: sample rate must be positive");
  check(epoch_len_s > 0, ErrorKind::validation, "bundle: epoch length must be positive");
  check(!channels.empty(), ErrorKind::validation, "bundle: no channels");
  const std::int64_t n = static_cast<std::int64_t>(channels.front().samples.size());
  for (const auto& c : channels)
    check(static_cast<std::int64_t>(c.samples.size()) == n, ErrorKind::validation,
          "channel length mismatch: " + c.name);
  const std::int64_t spe = samples_per_epoch();
  check(n % spe == 0, ErrorKind::validation,
        "bundle: duration is not a whole number of epochs");
  check(n / spe == epoch_count(), ErrorKind::validation,
        "bundle: labels length does not match epoch count");
  if (in_bed_range) {
    check(in_bed_range->first >= 0 && in_bed_range->second < epoch_count() &&
              in_bed_range->first <= in_bed_range->second,
          ErrorKind::validation, "bundle: in_bed_range out of bounds");
  }
}

namespace {

std::map<std::string, std::string> parse_manifest(const std::filesystem::path& file) {
  std::map<std::string, std::string> kv;
  const std::string text = read_file_text(file);
  std::size_t lineno = 0;
  for (const std::string& raw_line : split(text, '\n')) {
    ++lineno;
    std::string line = raw_line;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, ErrorKind::io,
          "malformed manifest line " + std::to_string(lineno) + " in " + file.string());
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    check(!key.empty(), ErrorKind::io,
          "empty key at manifest line " + std::to_string(lineno) + " in " + file.string());
    check(!kv.count(key), ErrorKind::io,
          "duplicate manifest key '" + key + "' in " + file.string());
    kv[key] = val;
  }
  return kv;
}

std::string require_key(const std::map<std::string, std::string>& kv,
                        const std::string& key, const std::filesystem::path& file) {
  auto it = kv.find(key);
  check(it != kv.end(), ErrorKind::io,
        "manifest missing key '" + key + "' in " + file.string());
  return it->second;
}

std::vector<double> read_f32le(const std::filesystem::path& file) {
  const auto bytes = read_file_bytes(file);
  check(bytes.size() % 4 == 0, ErrorKind::io,
        "raw channel file length not a multiple of 4: " + file.string());
  ByteReader r(bytes);
  std::vector<double> out(bytes.size() / 4);
  for (auto& v : out) v = static_cast<double>(r.f32());
  return out;
}

}  // namespace

RecordingBundle load_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  const auto kv = parse_manifest(manifest_path);

  RecordingBundle b;
  b.subject_id = require_key(kv, "subject_id", manifest_path);
  b.sample_rate_hz = parse_i64(require_key(kv, "sample_rate_hz", manifest_path),
                               "manifest sample_rate_hz");
  b.epoch_len_s =
      parse_i64(require_key(kv, "epoch_len_s", manifest_path), "manifest epoch_len_s");

  const std::string scheme_str = require_key(kv, "scheme", manifest_path);
  Scheme scheme;
  if (scheme_str == "AASM") scheme = Scheme::AASM;
  else if (scheme_str == "RK") scheme = Scheme::RK;
  else throw Error::io("unknown scheme '" + scheme_str + "' in " + manifest_path.string());

  // Label map: byte code -> raw stage symbol.
  std::map<int, RawStage> code_map;
  for (const std::string& entry : split(require_key(kv, "label_map", manifest_path), ',')) {
    const auto parts = split(trim(entry), ':');
    check(parts.size() == 2, ErrorKind::io,
          "malformed label_map entry '" + entry + "' in " + manifest_path.string());
    const int code = static_cast<int>(parse_i64(parts[0], "label_map code"));
    const std::string sym = trim(parts[1]);
    auto it = raw_stage_names().find(sym);
    check(it != raw_stage_names().end(), ErrorKind::io,
          "unknown stage symbol '" + sym + "' in label_map of " + manifest_path.string());
    check(!code_map.count(code), ErrorKind::io,
          "duplicate label_map code " + std::to_string(code));
    code_map[code] = it->second;
  }

  const auto labels_path = dir / require_key(kv, "labels_file", manifest_path);
  const auto label_bytes = read_file_bytes(labels_path);
  std::vector<RawStage> raw_labels;
  raw_labels.reserve(label_bytes.size());
  for (std::size_t i = 0; i < label_bytes.size(); ++i) {
    auto it = code_map.find(static_cast<int>(label_bytes[i]));
    check(it != code_map.end(), ErrorKind::validation,
          "unknown label code " + std::to_string(static_cast<int>(label_bytes[i])) +
              " at " + labels_path.string() + " offset " + std::to_string(i));
    raw_labels.push_back(it->second);
  }

  auto [harmonized, kept] = harmonize_labels(raw_labels, scheme);

  for (const std::string& name : split(require_key(kv, "channels", manifest_path), ',')) {
    Channel c;
    c.name = trim(name);
    check(!c.name.empty(), ErrorKind::io, "empty channel name in " + manifest_path.string());
    c.samples = read_f32le(dir / (c.name + ".f32le"));
    b.channels.push_back(std::move(c));
  }

  if (kv.count("in_bed_range")) {
    const auto parts = split(kv.at("in_bed_range"), ' ');
    std::vector<std::string> nums;
    for (const auto& p : parts)
      if (!trim(p).empty()) nums.push_back(trim(p));
    check(nums.size() == 2, ErrorKind::io,
          "malformed in_bed_range in " + manifest_path.string());
    b.in_bed_range = {parse_i64(nums[0], "in_bed_range start"),
                      parse_i64(nums[1], "in_bed_range end")};
  }
  if (kv.count("converted_from_epoch_len_s"))
    b.converted_from_epoch_len_s =
        parse_i64(kv.at("converted_from_epoch_len_s"), "converted_from_epoch_len_s");

  // Drop excluded epochs (with their samples) so downstream code sees a clean
  // five-class sequence.
  const std::int64_t spe = b.epoch_len_s * b.sample_rate_hz;
  const bool any_excluded =
      std::any_of(kept.begin(), kept.end(), [](bool k) { return !k; });
  if (any_excluded) {
    check(!b.in_bed_range, ErrorKind::validation,
          "bundles with excluded epochs and an in_bed_range are not supported; "
          "trim before exclusion");
    std::vector<Stage> labels;
    for (std::size_t i = 0; i < harmonized.size(); ++i)
      if (kept[i]) labels.push_back(harmonized[i]);
    for (auto& c : b.channels) {
      check(static_cast<std::int64_t>(c.samples.size()) ==
                static_cast<std::int64_t>(kept.size()) * spe,
            ErrorKind::validation, "channel length mismatch: " + c.name);
      std::vector<double> out;
      out.reserve(labels.size() * static_cast<std::size_t>(spe));
      for (std::size_t i = 0; i < kept.size(); ++i)
        if (kept[i])
          out.insert(out.end(), c.samples.begin() + static_cast<std::int64_t>(i) * spe,
                     c.samples.begin() + static_cast<std::int64_t>(i + 1) * spe);
      c.samples = std::move(out);
    }
    b.labels = std::move(labels);
  } else {
    b.labels = std::move(harmonized);
  }

  b.validate();
  return b;
}

void write_bundle(const std::filesystem::path& dir, const RecordingBundle& b) {
  b.validate();
  std::filesystem::create_directories(dir);
  std::string m;
  m += "subject_id = " + b.subject_id + "\n";
  m += "sample_rate_hz = " + std::to_string(b.sample_rate_hz) + "\n";
  m += "epoch_len_s = " + std::to_string(b.epoch_len_s) + "\n";
  m += "scheme = AASM\n";
  m += "channels = ";
  for (std::size_t i = 0; i < b.channels.size(); ++i) {
    if (i) m += ",";
    m += b.channels[i].name;
  }
  m += "\n";
  m += "label_map = 0:W,1:N1,2:N2,3:N3,4:REM\n";
  m += "labels_file = stages.lab\n";
  if (b.in_bed_range)
    m += "in_bed_range = " + std::to_string(b.in_bed_range->first) + " " +
         std::to_string(b.in_bed_range->second) + "\n";
  if (b.converted_from_epoch_len_s)
    m += "converted_from_epoch_len_s = " + std::to_string(*b.converted_from_epoch_len_s) +
         "\n";
  write_file_text(dir / "manifest.txt", m);

  std::vector<std::uint8_t> lab;
  lab.reserve(b.labels.size());
  for (Stage s : b.labels) lab.push_back(static_cast<std::uint8_t>(s));
  write_file_bytes(dir / "stages.lab", lab);

  for (const auto& c : b.channels) {
    ByteWriter w;
    for (double v : c.samples) w.f32(static_cast<float>(v));
    write_file_bytes(dir / (c.name + ".f32le"), w.data());
  }
}

RecordingBundle convert_epoch_grid_20_to_30(const RecordingBundle& b) {
  b.validate();
  check(b.epoch_len_s == 20, ErrorKind::validation,
        "epoch grid conversion expects 20 s epochs");
  const std::int64_t r = b.sample_rate_hz;
  const std::int64_t n_epochs = b.epoch_count();
  const std::int64_t pad = 5 * r;
  const std::int64_t old_spe = 20 * r;
  const std::int64_t new_spe = 30 * r;
  RecordingBundle out;
  out.subject_id = b.subject_id;
  out.sample_rate_hz = r;
  out.epoch_len_s = 30;
  out.labels = b.labels;
  out.in_bed_range = b.in_bed_range;
  out.converted_from_epoch_len_s = 20;
  for (const auto& c : b.channels) {
    Channel nc;
    nc.name = c.name;
    nc.samples.assign(static_cast<std::size_t>(n_epochs * new_spe), 0.0);
    const std::int64_t total = static_cast<std::int64_t>(c.samples.size());
    for (std::int64_t e = 0; e < n_epochs; ++e) {
      const std::int64_t src_start = e * old_spe - pad;
      for (std::int64_t i = 0; i < new_spe; ++i) {
        const std::int64_t src = src_start + i;
        if (src >= 0 && src < total)
          nc.samples[static_cast<std::size_t>(e * new_spe + i)] =
              c.samples[static_cast<std::size_t>(src)];
      }
    }
    out.channels.push_back(std::move(nc));
  }
  out.validate();
  return out;
}

RecordingBundle trim_in_bed(const RecordingBundle& b) {
  b.validate();
  check(b.in_bed_range.has_value(), ErrorKind::validation,
        "trim_in_bed: bundle has no in_bed_range");
  const auto [s, e] = *b.in_bed_range;
  const std::int64_t spe = b.samples_per_epoch();
  RecordingBundle out;
  out.subject_id = b.subject_id;
  out.sample_rate_hz = b.sample_rate_hz;
  out.epoch_len_s = b.epoch_len_s;
  out.converted_from_epoch_len_s = b.converted_from_epoch_len_s;
  out.labels.assign(b.labels.begin() + s, b.labels.begin() + e + 1);
  for (const auto& c : b.channels) {
    Channel nc;
    nc.name = c.name;
    nc.samples.assign(c.samples.begin() + s * spe, c.samples.begin() + (e + 1) * spe);
    out.channels.push_back(std::move(nc));
  }
  out.validate();
  return out;
}

}  // namespace sleepstage
