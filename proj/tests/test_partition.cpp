/* Copyright 2026 The CQIL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <doctest.h>

#include <numeric>

#include "cqil/errors.hpp"
#include "cqil/partition.hpp"
#include "oracles.hpp"

using namespace cqil;

namespace {

std::vector<std::vector<int>> singletons(int from, int to) {
  std::vector<std::vector<int>> g;
  for (int l = from; l <= to; ++l) g.push_back({l});
  return g;
}

}  // namespace

TEST_CASE("grouping examples") {
  const PartitionPlan a = build_plan(32, 2, 9, 30, 0);
  std::vector<std::vector<int>> expect = singletons(1, 8);
  for (int l = 9; l <= 29; l += 2) expect.push_back({l, l + 1});
  expect.push_back({31});
  expect.push_back({32});
  CHECK(a.groups == expect);

  CHECK(build_plan(5, 1, 1, 5, 0).groups == singletons(1, 5));
  CHECK(build_plan(8, 4, 3, 6, 0).groups ==
        std::vector<std::vector<int>>{{1}, {2}, {3, 4, 5, 6}, {7}, {8}});
  CHECK(format_groups(build_plan(4, 2, 3, 4, 1)) == "{1} -> {2} -> {3,4}");
  CHECK(sequential_plan(3) == build_plan(3, 1, 1, 3, 0));
}

TEST_CASE("invalid plans") {
  CHECK_THROWS_AS(build_plan(32, 2, 9, 29, 0), PlanError);
  CHECK_THROWS_AS(build_plan(32, 2, 0, 30, 0), PlanError);
  CHECK_THROWS_AS(build_plan(32, 2, 10, 9, 0), PlanError);
  CHECK_THROWS_AS(build_plan(32, 2, 9, 33, 0), PlanError);
  CHECK_THROWS_AS(build_plan(32, 0, 9, 30, 0), PlanError);
  CHECK_THROWS_AS(build_plan(32, 2, 9, 30, 2), PlanError);
  CHECK_THROWS_AS(build_plan(32, 2, 9, 30, -1), PlanError);
  CHECK_NOTHROW(build_plan(32, 2, 9, 28, 1));
}

TEST_CASE("every valid plan covers 1..L in order with the right group count") {
  for (int L = 1; L <= 14; ++L) {
    for (int p = 1; p <= 5; ++p) {
      for (int s = 1; s <= L; ++s) {
        for (int e = s; e <= L; ++e) {
          if ((e - s + 1) % p != 0) {
            CHECK_THROWS_AS(build_plan(L, p, s, e, 0), PlanError);
            continue;
          }
          const PartitionPlan plan = build_plan(L, p, s, e, p - 1);
          std::vector<int> flat;
          for (const auto& g : plan.groups) {
            const bool inside = g.front() >= s && g.back() <= e;
            CHECK(g.size() == (inside ? std::size_t(p) : 1u));
            flat.insert(flat.end(), g.begin(), g.end());
          }
          std::vector<int> expect(L);
          std::iota(expect.begin(), expect.end(), 1);
          CHECK(flat == expect);
          CHECK(plan.group_count() == std::size_t((s - 1) + (e - s + 1) / p + (L - e)));
          CHECK(plan_from_json(plan_to_json(plan)) == plan);
        }
      }
    }
  }
}

TEST_CASE("plan json") {
  const PartitionPlan plan = build_plan(6, 2, 3, 6, 1);
  const nlohmann::json j = plan_to_json(plan);
  CHECK(j.at("L") == 6);
  CHECK(j.at("p") == 2);
  CHECK(j.at("s") == 3);
  CHECK(j.at("e") == 6);
  CHECK(j.at("d") == 1);
  CHECK(j.at("groups") == nlohmann::json::parse("[[1],[2],[3,4],[5,6]]"));
  nlohmann::json bad = j;
  bad["groups"] = nlohmann::json::parse("[[1],[2],[3,4,5,6]]");
  CHECK_THROWS_AS(plan_from_json(bad), PlanError);
  bad = j;
  bad.erase("d");
  CHECK_THROWS_AS(plan_from_json(bad), PlanError);
}

TEST_CASE("bypass transmissions") {
  CHECK(bypass_transmissions(5, 0) == 0);
  CHECK(bypass_transmissions(2, 1) == 1);
  CHECK(bypass_transmissions(4, 3) == 6);
  for (int p = 1; p <= 16; ++p) {
    for (int d = 0; d < p; ++d) CHECK(bypass_transmissions(p, d) == oracle::count_pairs(p, d));
  }
  CHECK_THROWS_AS(bypass_transmissions(3, 3), PlanError);
  CHECK_THROWS_AS(bypass_transmissions(0, 0), PlanError);
}

TEST_CASE("predicted reduction") {
  CHECK(predicted_reduction(build_plan(12, 1, 1, 12, 0)) == 0.0);
  CHECK(predicted_reduction(build_plan(32, 2, 13, 30, 0)) == doctest::Approx(0.28125));
  CHECK(predicted_reduction(build_plan(60, 4, 19, 58, 0)) == doctest::Approx(0.5));

  // Non-decreasing in the parallel span and in p.
  for (int L : {12, 24}) {
    double prev = -1.0;
    for (int span = 2; span <= L; span += 2) {
      const double r = predicted_reduction(build_plan(L, 2, 1, span, 0));
      CHECK(r >= prev);
      CHECK(r < 1.0);
      prev = r;
    }
    prev = -1.0;
    for (int p : {1, 2, 3, 4, 6, 12}) {
      const double r = predicted_reduction(build_plan(L, p, 1, 12, 0));
      CHECK(r >= prev);
      prev = r;
    }
  }
}
