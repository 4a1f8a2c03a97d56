#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "sleepstage/grid.hpp"
#include "sleepstage/ops.hpp"
#include "test_util.hpp"

using namespace sleepstage;

namespace {

// Output rows where slot s of epoch i carries the recognizable probability
// p(i, s) in class 0 (rest of the mass on class 1).
Tensor tagged_outputs(std::int64_t epochs, int tau, int n_classes) {
  const int slots = 2 * tau + 1;
  Tensor out = Tensor::zeros({epochs, static_cast<std::int64_t>(slots) * n_classes});
  for (std::int64_t i = 0; i < epochs; ++i)
    for (int s = 0; s < slots; ++s) {
      const double p = (static_cast<double>(i) * 10.0 + s + 1.0) / 100.0;
      double* row = out.v.data() + i * out.shape[1] + s * n_classes;
      row[0] = p;
      for (int y = 1; y < n_classes; ++y)
        row[y] = (1.0 - p) / static_cast<double>(n_classes - 1);
    }
  return out;
}

std::vector<GridEntry> entries_from(const std::vector<std::vector<double>>& probs) {
  std::vector<GridEntry> out;
  int offset = 0;
  for (const auto& p : probs) out.push_back({offset++, p});
  return out;
}

}  // namespace

TEST_CASE("scattering routes each slot to its target epoch") {
  const int tau = 1, Y = 2;
  const Tensor outputs = tagged_outputs(5, tau, Y);
  const PosteriorGrid grid = scatter_decisions(outputs, tau, 5, Y);
  CHECK(grid.n_epochs == 5);
  CHECK(grid.tau == 1);
  CHECK(grid.n_classes == 2);

  // Interior epochs gather all three opinions; the edges only two.
  std::vector<std::size_t> counts;
  for (const auto& row : grid.entries) counts.push_back(row.size());
  CHECK(counts == std::vector<std::size_t>{2, 3, 3, 3, 2});
  CHECK(grid.total_entries() == 13);

  // Edge offset sets: the first epoch has no left-hand source, the last no
  // right-hand source.
  CHECK(grid.entries[0][0].offset == 0);
  CHECK(grid.entries[0][1].offset == 1);
  CHECK(grid.entries[4][0].offset == -1);
  CHECK(grid.entries[4][1].offset == 0);

  // Every entry with offset o about target n must be slot tau-o of source
  // epoch n+o (the slot that was aimed at n).
  for (std::int64_t n = 0; n < grid.n_epochs; ++n)
    for (const GridEntry& e : grid.entries[static_cast<std::size_t>(n)]) {
      const std::int64_t source = n + e.offset;
      const int slot = tau - e.offset;
      const double expect = (static_cast<double>(source) * 10.0 + slot + 1.0) / 100.0;
      CHECK(e.probs[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("scattering at radius zero is the identity arrangement") {
  const Tensor outputs = tagged_outputs(4, 0, 3);
  const PosteriorGrid grid = scatter_decisions(outputs, 0, 4, 3);
  for (std::int64_t n = 0; n < 4; ++n) {
    REQUIRE(grid.entries[static_cast<std::size_t>(n)].size() == 1);
    const GridEntry& e = grid.entries[static_cast<std::size_t>(n)][0];
    CHECK(e.offset == 0);
    for (int y = 0; y < 3; ++y)
      CHECK(e.probs[static_cast<std::size_t>(y)] ==
            outputs.v[static_cast<std::size_t>(n * 3 + y)]);
  }
  // With one opinion per epoch both fusions reduce to that opinion's argmax.
  const auto add = decide(fuse_grid(grid, Voting::additive));
  const auto mul = decide(fuse_grid(grid, Voting::multiplicative));
  CHECK(add == mul);
}

TEST_CASE("wider windows shrink only at the recording edges") {
  const Tensor outputs = tagged_outputs(6, 2, 2);
  const PosteriorGrid grid = scatter_decisions(outputs, 2, 6, 2);
  std::vector<std::size_t> counts;
  for (const auto& row : grid.entries) counts.push_back(row.size());
  CHECK(counts == std::vector<std::size_t>{3, 4, 5, 5, 4, 3});
  CHECK(grid.total_entries() == 24);
  // Offsets are strictly ascending everywhere (validated on construction,
  // checked explicitly here for the widest row).
  const auto& mid = grid.entries[2];
  for (std::size_t i = 0; i < mid.size(); ++i)
    CHECK(mid[i].offset == static_cast<int>(i) - 2);
}

TEST_CASE("scatter validates the output matrix dimensions") {
  const Tensor outputs = tagged_outputs(5, 1, 2);
  CHECK_THROWS_AS(scatter_decisions(outputs, 2, 5, 2), Error);  // wrong slot count
  CHECK_THROWS_AS(scatter_decisions(outputs, 1, 4, 2), Error);  // wrong epoch count
  CHECK_THROWS_AS(scatter_decisions(outputs, 1, 5, 3), Error);  // wrong class count
}

TEST_CASE("additive fusion averages, multiplicative fusion multiplies") {
  const auto entries = entries_from({{0.9, 0.1}, {0.9, 0.1}, {0.01, 0.99}});

  const auto add = vote_additive(entries);
  CHECK(add[0] == doctest::Approx((0.9 + 0.9 + 0.01) / 3.0).epsilon(1e-12));
  CHECK(add[1] == doctest::Approx((0.1 + 0.1 + 0.99) / 3.0).epsilon(1e-12));

  const auto mul = vote_multiplicative(entries);
  CHECK(mul[0] == doctest::Approx(0.9 * 0.9 * 0.01 / 3.0).epsilon(1e-9));
  CHECK(mul[1] == doctest::Approx(0.1 * 0.1 * 0.99 / 3.0).epsilon(1e-9));

  // Two confident-but-wrong opinions drag the mean, while one near-zero
  // factor vetoes the product: the two schemes disagree on this triple.
  CHECK(decide({add})[0] == Stage::W);
  CHECK(decide({mul})[0] == Stage::N1);
}

TEST_CASE("multiplicative fusion ranks independently of per-opinion scaling") {
  const auto base = entries_from({{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.25, 0.5, 0.25}});
  const auto fused = vote_multiplicative(base);

  // Scaling any single opinion by a positive constant scales every class
  // equally, so the ranking cannot move.
  auto scaled = base;
  for (double& p : scaled[1].probs) p *= 2.5;
  const auto fused_scaled = vote_multiplicative(scaled);
  for (std::size_t y = 0; y < 3; ++y)
    CHECK(fused_scaled[y] == doctest::Approx(2.5 * fused[y]).epsilon(1e-12));
  CHECK(decide({fused_scaled}) == decide({fused}));
}

TEST_CASE("multiplicative fusion floors vanishing factors instead of dying") {
  const auto entries = entries_from({{0.0, 1.0}, {0.5, 0.5}});
  const auto fused = vote_multiplicative(entries);
  CHECK(fused[0] == doctest::Approx(1e-12 * 0.5 / 2.0).epsilon(1e-9));
  CHECK(fused[1] == doctest::Approx(1.0 * 0.5 / 2.0).epsilon(1e-12));
  CHECK(fused[0] > 0.0);
}

TEST_CASE("fusion matches a hand-built average across a scattered grid") {
  // Epoch row posteriors chosen so every slot is distinct.
  Tensor outputs = Tensor::zeros({2, 6});  // two epochs, 3 slots x 2 classes
  outputs.v = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7,
               0.4, 0.6, 0.5, 0.5, 0.6, 0.4};
  const PosteriorGrid grid = scatter_decisions(outputs, 1, 2, 2);
  // Epoch 0 hears: its own center slot (0.2) and epoch 1's left slot (0.4).
  const auto fused = fuse_grid(grid, Voting::additive);
  CHECK(fused[0][0] == doctest::Approx((0.2 + 0.4) / 2.0).epsilon(1e-12));
  // Epoch 1 hears: epoch 0's right slot (0.3) and its own center slot (0.5).
  CHECK(fused[1][0] == doctest::Approx((0.3 + 0.5) / 2.0).epsilon(1e-12));
}

TEST_CASE("decisions break exact ties toward the lowest class index") {
  CHECK(decide({{0.4, 0.4, 0.2}}) == std::vector<Stage>{Stage::W});
  CHECK(decide({{0.1, 0.45, 0.45}}) == std::vector<Stage>{Stage::N1});
  CHECK(decide({{0.2, 0.2, 0.2, 0.2, 0.2}}) == std::vector<Stage>{Stage::W});
  CHECK_THROWS_AS(decide({{}}), Error);
  CHECK_THROWS_AS(decide({std::vector<double>(6, 1.0 / 6.0)}), Error);
}

TEST_CASE("grid validation catches malformed structures") {
  const Tensor outputs = tagged_outputs(3, 1, 2);
  PosteriorGrid grid = scatter_decisions(outputs, 1, 3, 2);

  PosteriorGrid bad = grid;
  bad.entries[0][0].offset = -1;  // source epoch -1 does not exist
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = grid;
  std::swap(bad.entries[1][0], bad.entries[1][2]);  // breaks ascending order
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = grid;
  bad.entries[1][1].probs = {0.7, 0.7};  // no longer sums to one
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = grid;
  bad.entries[1][1].probs = {1.2, -0.2};  // negative mass
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = grid;
  bad.entries.pop_back();
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("grid files round-trip through 32-bit storage") {
  testutil::ScratchDir dir("grid");
  Rng rng(8);
  Tensor logits = Tensor::zeros({6, 15});  // tau=1, five classes
  for (double& x : logits.v) x = rng.normal();
  const Tensor probs = softmax_slots(logits, 3, 5);
  const PosteriorGrid grid = scatter_decisions(probs, 1, 6, 5);

  const auto path = dir.path() / "fold.grid";
  write_posterior_grid(path, grid);
  const PosteriorGrid back = read_posterior_grid(path);
  CHECK(back.n_epochs == grid.n_epochs);
  CHECK(back.tau == grid.tau);
  CHECK(back.n_classes == grid.n_classes);
  REQUIRE(back.entries.size() == grid.entries.size());
  for (std::size_t n = 0; n < grid.entries.size(); ++n) {
    REQUIRE(back.entries[n].size() == grid.entries[n].size());
    for (std::size_t j = 0; j < grid.entries[n].size(); ++j) {
      CHECK(back.entries[n][j].offset == grid.entries[n][j].offset);
      for (std::size_t y = 0; y < 5; ++y)
        CHECK(back.entries[n][j].probs[y] ==
              static_cast<double>(static_cast<float>(grid.entries[n][j].probs[y])));
    }
  }
  // Decisions survive the storage round trip bit-for-bit.
  CHECK(decide(fuse_grid(back, Voting::additive)) ==
        decide(fuse_grid(grid, Voting::additive)));
}

TEST_CASE("grid files reject corruption and oversized windows") {
  testutil::ScratchDir dir("grid_bad");
  const Tensor outputs = tagged_outputs(3, 1, 2);
  const PosteriorGrid grid = scatter_decisions(outputs, 1, 3, 2);
  const auto path = dir.path() / "ok.grid";
  write_posterior_grid(path, grid);

  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const auto bad = dir.path() / "bad.grid";
  write_file_bytes(bad, std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3));
  CHECK_THROWS_AS(read_posterior_grid(bad), Error);

  std::vector<std::uint8_t> wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write_file_bytes(bad, wrong_magic);
  CHECK_THROWS_AS(read_posterior_grid(bad), Error);

  PosteriorGrid wide = grid;
  wide.tau = 16;  // cannot fit the offset bitmap
  CHECK_THROWS_AS(write_posterior_grid(dir.path() / "wide.grid", wide), Error);
}

TEST_CASE("per-slot accuracies come from the matching grid offsets") {
  // Three epochs, tau = 1, two classes. Slot predictions, written as the
  // class given most mass: center slot always matches the truth; each outer
  // slot is right about one of its two targets.
  const std::vector<Stage> truth = {Stage::W, Stage::N1, Stage::W};
  const auto one_hot = [](int cls) {
    return cls == 0 ? std::vector<double>{0.9, 0.1} : std::vector<double>{0.1, 0.9};
  };
  // predicted[i][s]: slot s (left-to-right) of epoch i.
  const int predicted[3][3] = {{1, 0, 1},    // slot +1 about epoch 1: 1 == truth
                               {0, 1, 1},    // slot -1 about epoch 0: 0 == truth,
                                             // slot +1 about epoch 2: 1 != truth
                               {0, 0, 1}};   // slot -1 about epoch 1: 0 != truth
  Tensor outputs = Tensor::zeros({3, 6});
  for (std::int64_t i = 0; i < 3; ++i)
    for (int s = 0; s < 3; ++s) {
      const auto p = one_hot(predicted[i][s]);
      std::copy(p.begin(), p.end(), outputs.v.begin() + i * 6 + s * 2);
    }
  const PosteriorGrid grid = scatter_decisions(outputs, 1, 3, 2);

  const std::vector<double> acc = slot_accuracies(grid, truth);
  REQUIRE(acc.size() == 3);
  CHECK(acc[0] == 0.5);  // left slot: 1 of 2
  CHECK(acc[1] == 1.0);  // center slot: 3 of 3
  CHECK(acc[2] == 0.5);  // right slot: 1 of 2

  CHECK_THROWS_WITH_AS((void)slot_accuracies(grid, {Stage::W, Stage::N1}),
                       "slot accuracy: truth length does not match the grid", Error);
}

TEST_CASE("hypnogram text lists one stage mnemonic per line") {
  const std::vector<Stage> labels{Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::REM};
  CHECK(hypnogram_text(labels) == "W\nN1\nN2\nN3\nREM\n");
  CHECK(parse_hypnogram_text("W\nN1\nN2\nN3\nREM\n") == labels);
  CHECK(parse_hypnogram_text("  W \n\n N1\nN2\nN3\nREM") == labels);
  CHECK_THROWS_AS(parse_hypnogram_text("W\nN9\n"), Error);
}

TEST_CASE("hypnogram rendering writes the table and the two-panel graphic") {
  testutil::ScratchDir dir("hypno");
  const std::vector<Stage> truth{Stage::W, Stage::N1, Stage::N2, Stage::N2};
  const std::vector<Stage> pred{Stage::W, Stage::N2, Stage::N2, Stage::REM};
  const auto svg_path = dir.path() / "night.svg";
  const auto txt_path = dir.path() / "night.txt";
  render_hypnogram(truth, pred, svg_path, txt_path);

  CHECK(read_file_text(txt_path) ==
        "epoch\ttruth\tpredicted\n"
        "0\tW\tW\n"
        "1\tN1\tN2\n"
        "2\tN2\tN2\n"
        "3\tN2\tREM\n");

  const std::string svg = read_file_text(svg_path);
  CHECK(svg.find("<svg xmlns=") != std::string::npos);
  CHECK(svg.find("ground truth") != std::string::npos);
  CHECK(svg.find("prediction") != std::string::npos);
  // One step path per panel.
  std::size_t paths = 0, pos = 0;
  while ((pos = svg.find("<path d=\"M ", pos)) != std::string::npos) {
    ++paths;
    pos += 1;
  }
  CHECK(paths == 2);
  // All five stage axis labels appear in each panel.
  for (const char* name : {">W<", ">N1<", ">N2<", ">N3<", ">REM<"})
    CHECK(svg.find(name) != std::string::npos);

  CHECK_THROWS_AS(render_hypnogram({}, {}, svg_path, txt_path), Error);
  CHECK_THROWS_AS(render_hypnogram(truth, {Stage::W}, svg_path, txt_path), Error);
}
