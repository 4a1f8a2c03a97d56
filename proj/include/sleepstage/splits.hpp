#pragma once

// Cross-validation split plans over subject ids. Deterministic given a seed:
// ids are sorted first, then shuffled with seeded generators.

#include <cstdint>
#include <string>
#include <vector>

namespace sleepstage {

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

using SplitPlan = std::vector<Fold>;

// One fold per subject; that subject is the test set, n_validation of the
// remaining subjects (seeded shuffle, per-fold stream) go to validation.
SplitPlan make_split_plan_loso(std::vector<std::string> subject_ids, int n_validation,
                               std::uint64_t seed);

// k folds: subjects shuffled once, dealt into k near-equal test groups; each
// fold draws n_validation validation subjects from the non-test remainder.
SplitPlan make_split_plan_kfold(std::vector<std::string> subject_ids, int k,
                                int n_validation, std::uint64_t seed);

void validate_split_plan(const SplitPlan& plan, std::size_t n_subjects);

}  // namespace sleepstage
