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

#include "cqil/partition.hpp"

#include <sstream>

#include "cqil/errors.hpp"

namespace cqil {

namespace {

void check_params(int n_layers, int group_size, int start, int end,
                  int bypass) {
  if (n_layers < 1) throw PlanError("L must be >= 1");
  if (group_size < 1) throw PlanError("p must be >= 1");
  if (start < 1 || start > end || end > n_layers) {
    throw PlanError("need 1 <= s <= e <= L, got s=" + std::to_string(start) +
                    " e=" + std::to_string(end) +
                    " L=" + std::to_string(n_layers));
  }
  const int span = end - start + 1;
  if (span % group_size != 0) {
    throw PlanError("parallel range s..e holds " + std::to_string(span) +
                    " layers, not divisible by p=" +
                    std::to_string(group_size));
  }
  if (bypass < 0 || bypass > group_size - 1) {
    throw PlanError("bypass distance d=" + std::to_string(bypass) +
                    " must satisfy 0 <= d <= p-1 = " +
                    std::to_string(group_size - 1));
  }
}

std::vector<std::vector<int>> make_groups(int n_layers, int group_size,
                                          int start, int end) {
  std::vector<std::vector<int>> groups;
  for (int l = 1; l < start; ++l) groups.push_back({l});
  for (int l = start; l <= end; l += group_size) {
    std::vector<int> g;
    for (int i = 0; i < group_size; ++i) g.push_back(l + i);
    groups.push_back(std::move(g));
  }
  for (int l = end + 1; l <= n_layers; ++l) groups.push_back({l});
  return groups;
}

}  // namespace

void PartitionPlan::validate() const {
  check_params(n_layers, group_size, start, end, bypass);
  if (groups != make_groups(n_layers, group_size, start, end)) {
    throw PlanError("plan groups do not match (L, p, s, e)");
  }
}

PartitionPlan build_plan(int n_layers, int group_size, int start, int end,
                         int bypass) {
  check_params(n_layers, group_size, start, end, bypass);
  PartitionPlan plan;
  plan.n_layers = n_layers;
  plan.group_size = group_size;
  plan.start = start;
  plan.end = end;
  plan.bypass = bypass;
  plan.groups = make_groups(n_layers, group_size, start, end);
  return plan;
}

PartitionPlan sequential_plan(int n_layers) {
  return build_plan(n_layers, 1, 1, n_layers, 0);
}

std::int64_t bypass_transmissions(int group_size, int bypass) {
  if (group_size < 1 || bypass < 0 || bypass > group_size - 1) {
    throw PlanError("bypass_transmissions: need p >= 1 and 0 <= d <= p-1");
  }
  const std::int64_t p = group_size;
  const std::int64_t d = bypass;
  return d * (2 * p - d - 1) / 2;
}

double predicted_reduction(const PartitionPlan& plan) {
  const double span = plan.end - plan.start + 1;
  return span * (1.0 - 1.0 / plan.group_size) / plan.n_layers;
}

nlohmann::json plan_to_json(const PartitionPlan& plan) {
  return nlohmann::json{{"L", plan.n_layers}, {"p", plan.group_size},
                        {"s", plan.start},    {"e", plan.end},
                        {"d", plan.bypass},   {"groups", plan.groups}};
}

PartitionPlan plan_from_json(const nlohmann::json& doc) {
  PartitionPlan plan;
  try {
    plan.n_layers = doc.at("L").get<int>();
    plan.group_size = doc.at("p").get<int>();
    plan.start = doc.at("s").get<int>();
    plan.end = doc.at("e").get<int>();
    plan.bypass = doc.at("d").get<int>();
    plan.groups = doc.at("groups").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw PlanError(std::string("malformed plan document: ") + e.what());
  }
  plan.validate();
  return plan;
}

std::string format_groups(const PartitionPlan& plan) {
  std::ostringstream os;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    if (g) os << " -> ";
    os << '{';
    for (std::size_t i = 0; i < plan.groups[g].size(); ++i) {
      if (i) os << ',';
      os << plan.groups[g][i];
    }
    os << '}';
  }
  return os.str();
}

}  // namespace cqil
