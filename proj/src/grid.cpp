#include "sleepstage/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sleepstage/common.hpp"

namespace sleepstage {

namespace {
constexpr double kLnFloor = -27.631021115928547;  // ln(1e-12)
}

void PosteriorGrid::validate(double sum_tol) const {
  check(n_epochs >= 1, ErrorKind::validation, "posterior grid: empty");
  check(tau >= 0, ErrorKind::validation, "posterior grid: negative tau");
  check(n_classes >= 2, ErrorKind::validation, "posterior grid: need >= 2 classes");
  check(static_cast<std::int64_t>(entries.size()) == n_epochs, ErrorKind::validation,
        "posterior grid: entry rows != epoch count");
  for (std::int64_t n = 0; n < n_epochs; ++n) {
    int prev = -tau - 1;
    for (const GridEntry& e : entries[static_cast<std::size_t>(n)]) {
      check(e.offset >= -tau && e.offset <= tau, ErrorKind::validation,
            "posterior grid: offset out of range");
      check(e.offset > prev, ErrorKind::validation,
            "posterior grid: offsets must be strictly ascending");
      prev = e.offset;
      const std::int64_t source = n + e.offset;
      check(source >= 0 && source < n_epochs, ErrorKind::validation,
            "posterior grid: entry from a non-existent source epoch");
      check(static_cast<int>(e.probs.size()) == n_classes, ErrorKind::validation,
            "posterior grid: wrong posterior length");
      double sum = 0.0;
      for (double p : e.probs) {
        check(p >= 0.0 && std::isfinite(p), ErrorKind::validation,
              "posterior grid: bad probability value");
        sum += p;
      }
      check(std::fabs(sum - 1.0) <= sum_tol, ErrorKind::validation,
            "posterior grid: posterior does not sum to 1");
    }
  }
}

std::int64_t PosteriorGrid::total_entries() const {
  std::int64_t total = 0;
  for (const auto& row : entries) total += static_cast<std::int64_t>(row.size());
  return total;
}

PosteriorGrid scatter_decisions(const Tensor& outputs, int tau,
                                std::int64_t epoch_count, int n_classes) {
  check(tau >= 0, ErrorKind::validation, "scatter: negative tau");
  check(n_classes >= 2, ErrorKind::validation, "scatter: need >= 2 classes");
  check(outputs.shape.size() == 2, ErrorKind::validation,
        "scatter: outputs must be [epochs, slots*classes]");
  check(outputs.shape[0] == epoch_count, ErrorKind::validation,
        "scatter: one output row per epoch required");
  const int slots = 2 * tau + 1;
  check(outputs.shape[1] == static_cast<std::int64_t>(slots) * n_classes,
        ErrorKind::validation, "scatter: slot count mismatch with tau");

  PosteriorGrid grid;
  grid.n_epochs = epoch_count;
  grid.tau = tau;
  grid.n_classes = n_classes;
  grid.entries.assign(static_cast<std::size_t>(epoch_count), {});
  for (std::int64_t i = 0; i < epoch_count; ++i)
    for (int s = 0; s < slots; ++s) {
      const int k = s - tau;
      const std::int64_t target = i + k;
      if (target < 0 || target >= epoch_count) continue;
      GridEntry e;
      e.offset = -k;  // source i relative to target
      e.probs.resize(static_cast<std::size_t>(n_classes));
      for (int y = 0; y < n_classes; ++y)
        e.probs[static_cast<std::size_t>(y)] =
            outputs.v[static_cast<std::size_t>(i * outputs.shape[1] + s * n_classes + y)];
      grid.entries[static_cast<std::size_t>(target)].push_back(std::move(e));
    }
  for (auto& row : grid.entries)
    std::sort(row.begin(), row.end(),
              [](const GridEntry& a, const GridEntry& b) { return a.offset < b.offset; });
  grid.validate();
  return grid;
}

std::vector<double> vote_additive(const std::vector<GridEntry>& entries) {
  check(!entries.empty(), ErrorKind::validation, "additive vote: no entries");
  const std::size_t y = entries[0].probs.size();
  std::vector<double> fused(y, 0.0);
  for (const GridEntry& e : entries) {
    check(e.probs.size() == y, ErrorKind::validation, "additive vote: length mismatch");
    for (std::size_t c = 0; c < y; ++c) fused[c] += e.probs[c];
  }
  for (double& v : fused) v /= static_cast<double>(entries.size());
  return fused;
}

std::vector<double> vote_multiplicative(const std::vector<GridEntry>& entries) {
  check(!entries.empty(), ErrorKind::validation, "multiplicative vote: no entries");
  const std::size_t y = entries[0].probs.size();
  std::vector<double> logsum(y, 0.0);
  for (const GridEntry& e : entries) {
    check(e.probs.size() == y, ErrorKind::validation,
          "multiplicative vote: length mismatch");
    for (std::size_t c = 0; c < y; ++c)
      logsum[c] += std::max(std::log(e.probs[c]), kLnFloor);
  }
  std::vector<double> fused(y, 0.0);
  for (std::size_t c = 0; c < y; ++c)
    fused[c] = std::exp(logsum[c]) / static_cast<double>(entries.size());
  return fused;
}

std::string voting_name(Voting v) {
  return v == Voting::additive ? "additive" : "multiplicative";
}

Voting voting_from_name(const std::string& name) {
  if (name == "additive") return Voting::additive;
  if (name == "multiplicative") return Voting::multiplicative;
  throw Error::config("unknown voting scheme: " + name);
}

std::vector<std::vector<double>> fuse_grid(const PosteriorGrid& grid, Voting voting) {
  std::vector<std::vector<double>> fused;
  fused.reserve(static_cast<std::size_t>(grid.n_epochs));
  for (const auto& row : grid.entries)
    fused.push_back(voting == Voting::additive ? vote_additive(row)
                                               : vote_multiplicative(row));
  return fused;
}

std::vector<Stage> decide(const std::vector<std::vector<double>>& fused) {
  std::vector<Stage> labels;
  labels.reserve(fused.size());
  for (const auto& v : fused) {
    check(!v.empty() && v.size() <= static_cast<std::size_t>(kNumStages),
          ErrorKind::validation, "decide: fused vector has a bad length");
    std::size_t best = 0;
    for (std::size_t c = 1; c < v.size(); ++c)
      if (v[c] > v[best]) best = c;
    labels.push_back(static_cast<Stage>(best));
  }
  return labels;
}

namespace {
constexpr char kGridMagic[4] = {'P', 'G', 'R', 'D'};
constexpr std::uint32_t kGridVersion = 1;
}  // namespace

void write_posterior_grid(const std::filesystem::path& path, const PosteriorGrid& grid) {
  grid.validate();
  check(grid.tau <= 15, ErrorKind::validation,
        "posterior grid file: tau too large for the offset bitmap");
  ByteWriter w;
  w.bytes(kGridMagic, 4);
  w.u32(kGridVersion);
  w.i64(grid.n_epochs);
  w.i64(grid.tau);
  w.i64(grid.n_classes);
  for (const auto& row : grid.entries) {
    std::uint32_t bitmap = 0;
    for (const GridEntry& e : row)
      bitmap |= 1u << static_cast<unsigned>(e.offset + grid.tau);
    w.u32(bitmap);
    for (const GridEntry& e : row)
      for (double p : e.probs) w.f32(static_cast<float>(p));
  }
  write_file_bytes(path, w.data());
}

PosteriorGrid read_posterior_grid(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path));
  char magic[4];
  r.bytes(magic, 4);
  check(std::equal(magic, magic + 4, kGridMagic), ErrorKind::io,
        "not a posterior grid file: " + path.string());
  check(r.u32() == kGridVersion, ErrorKind::io,
        "unsupported posterior grid version in " + path.string());
  PosteriorGrid grid;
  grid.n_epochs = r.i64();
  grid.tau = static_cast<int>(r.i64());
  grid.n_classes = static_cast<int>(r.i64());
  check(grid.n_epochs >= 1 && grid.tau >= 0 && grid.tau <= 15 && grid.n_classes >= 2,
        ErrorKind::io, "posterior grid file: bad header in " + path.string());
  grid.entries.assign(static_cast<std::size_t>(grid.n_epochs), {});
  const int slots = 2 * grid.tau + 1;
  for (std::int64_t n = 0; n < grid.n_epochs; ++n) {
    const std::uint32_t bitmap = r.u32();
    check((bitmap >> slots) == 0, ErrorKind::io,
          "posterior grid file: bitmap bit outside the offset range");
    for (int j = 0; j < slots; ++j) {
      if (!(bitmap & (1u << static_cast<unsigned>(j)))) continue;
      GridEntry e;
      e.offset = j - grid.tau;
      e.probs.resize(static_cast<std::size_t>(grid.n_classes));
      for (auto& p : e.probs) p = static_cast<double>(r.f32());
      grid.entries[static_cast<std::size_t>(n)].push_back(std::move(e));
    }
  }
  check(r.at_end(), ErrorKind::io, "trailing bytes in posterior grid " + path.string());
  // 32-bit storage rounds the probabilities; allow the sum to drift slightly.
  grid.validate(1e-5);
  return grid;
}

std::vector<double> slot_accuracies(const PosteriorGrid& grid,
                                    const std::vector<Stage>& truth) {
  grid.validate(1e-5);
  check(static_cast<std::int64_t>(truth.size()) == grid.n_epochs, ErrorKind::validation,
        "slot accuracy: truth length does not match the grid");
  const int slots = 2 * grid.tau + 1;
  std::vector<std::int64_t> hits(static_cast<std::size_t>(slots), 0);
  std::vector<std::int64_t> totals(static_cast<std::size_t>(slots), 0);
  for (std::int64_t n = 0; n < grid.n_epochs; ++n) {
    for (const GridEntry& e : grid.entries[static_cast<std::size_t>(n)]) {
      const std::size_t slot = static_cast<std::size_t>(grid.tau - e.offset);
      int best = 0;
      for (int y = 1; y < grid.n_classes; ++y)
        if (e.probs[static_cast<std::size_t>(y)] > e.probs[static_cast<std::size_t>(best)])
          best = y;
      ++totals[slot];
      if (best == static_cast<int>(truth[static_cast<std::size_t>(n)])) ++hits[slot];
    }
  }
  std::vector<double> acc(static_cast<std::size_t>(slots), 0.0);
  for (int s = 0; s < slots; ++s) {
    check(totals[static_cast<std::size_t>(s)] > 0, ErrorKind::validation,
          "slot accuracy: slot " + std::to_string(s - grid.tau) + " has no entries");
    acc[static_cast<std::size_t>(s)] =
        static_cast<double>(hits[static_cast<std::size_t>(s)]) /
        static_cast<double>(totals[static_cast<std::size_t>(s)]);
  }
  return acc;
}

std::string hypnogram_text(const std::vector<Stage>& labels) {
  std::string out;
  for (Stage s : labels) {
    out += stage_name(s);
    out += '\n';
  }
  return out;
}

std::vector<Stage> parse_hypnogram_text(const std::string& text) {
  std::vector<Stage> labels;
  for (const std::string& raw : split(text, '\n')) {
    const std::string line = trim(raw);
    if (line.empty()) continue;
    labels.push_back(stage_from_name(line));
  }
  return labels;
}

namespace {

// Plot rows top-to-bottom in conventional hypnogram order.
int plot_level(Stage s) {
  switch (s) {
    case Stage::W: return 0;
    case Stage::REM: return 1;
    case Stage::N1: return 2;
    case Stage::N2: return 3;
    case Stage::N3: return 4;
  }
  throw Error::internal("unknown stage");
}

std::string step_path(const std::vector<Stage>& labels, double x0, double y0,
                      double x_step, double y_step) {
  std::ostringstream p;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = y0 + y_step * plot_level(labels[i]);
    const double xa = x0 + x_step * static_cast<double>(i);
    const double xb = x0 + x_step * static_cast<double>(i + 1);
    if (i == 0)
      p << "M " << format_f64(xa, 2) << " " << format_f64(y, 2);
    else
      p << " V " << format_f64(y, 2);
    p << " H " << format_f64(xb, 2);
  }
  return p.str();
}

void append_panel(std::ostringstream& svg, const std::vector<Stage>& labels,
                  const std::string& title, double top) {
  const double left = 70.0, width = 880.0, row = 26.0;
  const double x_step = width / static_cast<double>(labels.size());
  svg << "<text x=\"" << format_f64(left, 2) << "\" y=\"" << format_f64(top - 10.0, 2)
      << "\" font-family=\"monospace\" font-size=\"14\">" << title << "</text>\n";
  static const Stage kRowOrder[5] = {Stage::W, Stage::REM, Stage::N1, Stage::N2,
                                     Stage::N3};
  for (Stage s : kRowOrder) {
    const double y = top + row * plot_level(s);
    svg << "<text x=\"10\" y=\"" << format_f64(y + 5.0, 2)
        << "\" font-family=\"monospace\" font-size=\"12\">" << stage_name(s)
        << "</text>\n";
    svg << "<line x1=\"" << format_f64(left, 2) << "\" y1=\"" << format_f64(y, 2)
        << "\" x2=\"" << format_f64(left + width, 2) << "\" y2=\"" << format_f64(y, 2)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
  }
  svg << "<path d=\"" << step_path(labels, left, top, x_step, row)
      << "\" fill=\"none\" stroke=\"#202020\" stroke-width=\"1.5\"/>\n";
}

}  // namespace

void render_hypnogram(const std::vector<Stage>& truth, const std::vector<Stage>& predicted,
                      const std::filesystem::path& svg_path,
                      const std::filesystem::path& txt_path) {
  check(!truth.empty(), ErrorKind::validation, "render: empty label sequences");
  check(truth.size() == predicted.size(), ErrorKind::validation,
        "render: truth and prediction lengths differ");

  std::string txt = "epoch\ttruth\tpredicted\n";
  for (std::size_t i = 0; i < truth.size(); ++i) {
    txt += std::to_string(i);
    txt += '\t';
    txt += stage_name(truth[i]);
    txt += '\t';
    txt += stage_name(predicted[i]);
    txt += '\n';
  }
  write_file_text(txt_path, txt);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"980\" height=\"370\" "
         "viewBox=\"0 0 980 370\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"980\" height=\"370\" fill=\"#ffffff\"/>\n";
  append_panel(svg, truth, "ground truth", 40.0);
  append_panel(svg, predicted, "prediction", 230.0);
  svg << "</svg>\n";
  write_file_text(svg_path, svg.str());
}

}  // namespace sleepstage
