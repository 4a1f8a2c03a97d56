#include <algorithm>
#include <set>

#include "doctest.h"
#include "sleepstage/common.hpp"
#include "sleepstage/splits.hpp"

using namespace sleepstage;

namespace {

std::vector<std::string> subjects(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    ids.emplace_back(buf);
  }
  return ids;
}

}  // namespace

TEST_CASE("loso: 20 subjects with 4 validation -> 20 folds of 15/4/1") {
  auto plan = make_split_plan_loso(subjects(20), 4, 7);
  REQUIRE(plan.size() == 20);
  std::set<std::string> tested;
  for (const auto& f : plan) {
    CHECK(f.train.size() == 15);
    CHECK(f.validation.size() == 4);
    CHECK(f.test.size() == 1);
    tested.insert(f.test.begin(), f.test.end());
    std::set<std::string> all;
    for (const auto* part : {&f.train, &f.validation, &f.test})
      for (const auto& s : *part) CHECK(all.insert(s).second);
    CHECK(all.size() == 20);
  }
  CHECK(tested.size() == 20);
}

TEST_CASE("kfold: 200 subjects, k=20, 10 validation -> folds of 180/10/10") {
  auto plan = make_split_plan_kfold(subjects(200), 20, 10, 11);
  REQUIRE(plan.size() == 20);
  std::set<std::string> tested;
  for (const auto& f : plan) {
    CHECK(f.train.size() == 180);
    CHECK(f.validation.size() == 10);
    CHECK(f.test.size() == 10);
    for (const auto& s : f.test) CHECK(tested.insert(s).second);
  }
  CHECK(tested.size() == 200);
}

TEST_CASE("splits: deterministic in seed, sensitive to seed") {
  auto a = make_split_plan_loso(subjects(8), 2, 42);
  auto b = make_split_plan_loso(subjects(8), 2, 42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train == b[i].train);
    CHECK(a[i].validation == b[i].validation);
    CHECK(a[i].test == b[i].test);
  }
  auto c = make_split_plan_loso(subjects(8), 2, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].validation != c[i].validation) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("splits: input order does not matter (ids are sorted first)") {
  auto ids = subjects(10);
  auto shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  auto a = make_split_plan_kfold(ids, 5, 2, 3);
  auto b = make_split_plan_kfold(shuffled, 5, 2, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train == b[i].train);
    CHECK(a[i].validation == b[i].validation);
    CHECK(a[i].test == b[i].test);
  }
}

TEST_CASE("splits: validation failures") {
  CHECK_THROWS_AS(make_split_plan_loso(subjects(2), 4, 1), Error);
  CHECK_THROWS_AS(make_split_plan_loso({"a", "a", "b", "c"}, 1, 1), Error);
  CHECK_THROWS_AS(make_split_plan_kfold(subjects(3), 5, 1, 1), Error);
  CHECK_THROWS_AS(make_split_plan_kfold(subjects(10), 5, 8, 1), Error);
  CHECK_THROWS_AS(make_split_plan_kfold(subjects(10), 1, 2, 1), Error);
}

TEST_CASE("kfold: uneven group sizes differ by at most one") {
  auto plan = make_split_plan_kfold(subjects(23), 4, 3, 9);
  std::vector<std::size_t> sizes;
  for (const auto& f : plan) sizes.push_back(f.test.size());
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes.front() + 1 >= sizes.back());
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  CHECK(total == 23);
}
