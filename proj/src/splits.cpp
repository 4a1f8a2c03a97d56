#include "sleepstage/splits.hpp"

#include <algorithm>
#include <set>

#include "sleepstage/common.hpp"

namespace sleepstage {

namespace {

void check_unique_sorted(std::vector<std::string>& ids) {
  std::sort(ids.begin(), ids.end());
  check(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorKind::validation,
        "split plan: duplicate subject ids");
}

}  // namespace

SplitPlan make_split_plan_loso(std::vector<std::string> subject_ids, int n_validation,
                               std::uint64_t seed) {
  check(n_validation >= 1, ErrorKind::validation, "split plan: n_validation must be >= 1");
  check_unique_sorted(subject_ids);
  const std::size_t n = subject_ids.size();
  check(n >= static_cast<std::size_t>(n_validation) + 2, ErrorKind::validation,
        "split plan: too few subjects for leave-one-out with " +
            std::to_string(n_validation) + " validation subjects");
  Rng root(seed);
  SplitPlan plan;
  for (std::size_t i = 0; i < n; ++i) {
    Fold f;
    f.test = {subject_ids[i]};
    std::vector<std::string> rest;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) rest.push_back(subject_ids[j]);
    Rng fold_rng = root.derive(static_cast<std::uint64_t>(i));
    fold_rng.shuffle(rest);
    f.validation.assign(rest.begin(), rest.begin() + n_validation);
    f.train.assign(rest.begin() + n_validation, rest.end());
    std::sort(f.validation.begin(), f.validation.end());
    std::sort(f.train.begin(), f.train.end());
    plan.push_back(std::move(f));
  }
  validate_split_plan(plan, n);
  return plan;
}

SplitPlan make_split_plan_kfold(std::vector<std::string> subject_ids, int k,
                                int n_validation, std::uint64_t seed) {
  check(k >= 2, ErrorKind::validation, "split plan: k must be >= 2");
  check(n_validation >= 1, ErrorKind::validation, "split plan: n_validation must be >= 1");
  check_unique_sorted(subject_ids);
  const std::size_t n = subject_ids.size();
  check(n >= static_cast<std::size_t>(k), ErrorKind::validation,
        "split plan: fewer subjects than folds");
  Rng root(seed);
  std::vector<std::string> shuffled = subject_ids;
  Rng deal_rng = root.derive(0xF01D);
  deal_rng.shuffle(shuffled);
  // Deal into k near-equal contiguous groups.
  std::vector<std::vector<std::string>> groups(static_cast<std::size_t>(k));
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (std::size_t gi = 0; gi < static_cast<std::size_t>(k); ++gi) {
    const std::size_t len = base + (gi < extra ? 1 : 0);
    groups[gi].assign(shuffled.begin() + static_cast<std::int64_t>(pos),
                      shuffled.begin() + static_cast<std::int64_t>(pos + len));
    pos += len;
  }
  SplitPlan plan;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    Fold f;
    f.test = groups[gi];
    std::vector<std::string> rest;
    for (std::size_t gj = 0; gj < groups.size(); ++gj)
      if (gj != gi) rest.insert(rest.end(), groups[gj].begin(), groups[gj].end());
    check(rest.size() >= static_cast<std::size_t>(n_validation) + 1, ErrorKind::validation,
          "split plan: not enough non-test subjects for validation");
    std::sort(rest.begin(), rest.end());
    Rng fold_rng = root.derive(0x1000 + static_cast<std::uint64_t>(gi));
    fold_rng.shuffle(rest);
    f.validation.assign(rest.begin(), rest.begin() + n_validation);
    f.train.assign(rest.begin() + n_validation, rest.end());
    std::sort(f.validation.begin(), f.validation.end());
    std::sort(f.train.begin(), f.train.end());
    std::sort(f.test.begin(), f.test.end());
    plan.push_back(std::move(f));
  }
  validate_split_plan(plan, n);
  return plan;
}

void validate_split_plan(const SplitPlan& plan, std::size_t n_subjects) {
  std::set<std::string> tested;
  for (const Fold& f : plan) {
    std::set<std::string> all;
    for (const auto* part : {&f.train, &f.validation, &f.test})
      for (const auto& s : *part)
        check(all.insert(s).second, ErrorKind::internal,
              "split plan: subject appears twice within a fold: " + s);
    check(!f.train.empty() && !f.validation.empty() && !f.test.empty(),
          ErrorKind::internal, "split plan: fold with an empty part");
    for (const auto& s : f.test)
      check(tested.insert(s).second, ErrorKind::internal,
            "split plan: subject tested twice: " + s);
  }
  check(tested.size() == n_subjects, ErrorKind::internal,
        "split plan: not every subject is tested exactly once");
}

}  // namespace sleepstage
