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

#ifndef CQIL_PARTITION_HPP_
#define CQIL_PARTITION_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace cqil {

// Layer partition: layers s..e (1-based, inclusive) are cut into consecutive
// groups of exactly p layers that share one input; every other layer is its
// own singleton group. d is the bypass distance inside a parallel group.
struct PartitionPlan {
  int n_layers = 0;
  int group_size = 1;
  int start = 1;
  int end = 0;
  int bypass = 0;
  std::vector<std::vector<int>> groups;

  // Re-derives the grouping from (L, p, s, e, d) and throws PlanError if
  // the parameters are invalid or the stored groups differ.
  void validate() const;

  std::size_t group_count() const { return groups.size(); }

  bool operator==(const PartitionPlan&) const = default;
};

// Throws PlanError unless 1 <= s <= e <= L, p >= 1, (e - s + 1) % p == 0 and
// 0 <= d <= p - 1.
PartitionPlan build_plan(int n_layers, int group_size, int start, int end,
                         int bypass);

// All-singleton plan (p = 1, s = 1, e = L, d = 0).
PartitionPlan sequential_plan(int n_layers);

// Point-to-point messages a size-p group sends when every attention output
// is forwarded to the FFN of each later layer at most d positions away:
// d(2p - d - 1) / 2. Throws PlanError unless p >= 1 and 0 <= d <= p - 1.
std::int64_t bypass_transmissions(int group_size, int bypass);

// Fraction of layers removed from the critical path assuming uniform
// per-layer cost and free communication: (e - s + 1)(1 - 1/p) / L.
double predicted_reduction(const PartitionPlan& plan);

nlohmann::json plan_to_json(const PartitionPlan& plan);
// Throws PlanError for missing keys, invalid parameters, or groups that do
// not match the parameters.
PartitionPlan plan_from_json(const nlohmann::json& doc);

// {1} -> {2} -> {3,4} -> ...
std::string format_groups(const PartitionPlan& plan);

}  // namespace cqil

#endif  // CQIL_PARTITION_HPP_
