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

#ifndef CQIL_CLI_HPP_
#define CQIL_CLI_HPP_

#include <ostream>

namespace cqil {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Entry point of the `cqil` tool. Subcommands: plan, run, similarity,
// sensitivity, ppl, bench, cost-table, fixture. Returns 0 on success, 1 on a
// usage error (bad flag, invalid plan) and 2 on a data error (unreadable or
// malformed files, non-finite values).
int cli_dispatch(int argc, const char* const* argv, std::ostream& out,
                 std::ostream& err);

}  // namespace cqil

#endif  // CQIL_CLI_HPP_
