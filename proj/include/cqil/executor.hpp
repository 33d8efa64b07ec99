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

#ifndef CQIL_EXECUTOR_HPP_
#define CQIL_EXECUTOR_HPP_

#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cqil/model.hpp"
#include "cqil/partition.hpp"

namespace cqil {

// Microsecond timestamps relative to the start of one forward pass.
struct LayerTiming {
  int layer = 0;
  std::size_t slot = 0;
  std::size_t worker = 0;
  std::int64_t attn_start_us = 0;
  std::int64_t attn_end_us = 0;
  std::int64_t bypass_start_us = 0;
  std::int64_t bypass_end_us = 0;
  std::int64_t ffn_start_us = 0;
  std::int64_t ffn_end_us = 0;
};

struct GroupExecutionRecord {
  int group = 0;  // 1-based
  std::vector<int> layers;
  std::vector<Tensor> attn_outputs;  // a_{l,attn}, in layer order
  std::vector<Tensor> ffn_outputs;   // a_{l,ffn}, in layer order
  std::vector<LayerTiming> timings;  // in layer order
  std::int64_t reduce_start_us = 0;
  std::int64_t reduce_end_us = 0;
  std::int64_t bypass_messages = 0;
};

// One attention output moved from the worker running `producer` to the
// worker running `consumer` (both 1-based layer ids).
struct BypassDelivery {
  int group = 0;
  int producer = 0;
  int consumer = 0;
};

// Logical devices: one thread and one FIFO task queue per worker. Slot i of
// a parallel group (its (i+1)-th layer) runs on worker_for_slot(i); singleton
// groups always run on worker 0.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t n_workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const { return workers_.size(); }

  std::future<void> submit(std::size_t worker, std::function<void()> task);

  // `mapping` must be a permutation of 0..size()-1.
  void set_slot_mapping(std::vector<std::size_t> mapping);
  std::size_t worker_for_slot(std::size_t slot) const;

  void set_transfer_delay(std::chrono::microseconds delay);
  std::chrono::microseconds transfer_delay() const;

  void record_delivery(const BypassDelivery& delivery);
  std::vector<BypassDelivery> delivery_log() const;
  void clear_delivery_log();

  // Test hook: the task computing this layer's attention throws.
  void inject_fault(std::optional<int> layer);
  std::optional<int> fault_layer() const;

 private:
  struct Worker;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<std::size_t> slot_mapping_;
  mutable std::mutex mu_;
  std::chrono::microseconds delay_{0};
  std::vector<BypassDelivery> deliveries_;
  std::optional<int> fault_layer_;
};

// Delays every bypass delivery by `delay`; a worker receives its inbound
// messages one after another, so awaiting m messages costs at least m*delay.
void inject_transfer_delay(WorkerPool& pool, std::chrono::microseconds delay);

// Single-threaded grouped evaluation. For each group with shared input x:
//   a_l   = ATTN_l(x)
//   in_l  = (x + a_l) + a_{l-d} + ... + a_{l-1}   (predecessors in the group,
//                                                  ascending)
//   f_l   = FFN_l(in_l)
//   x'    = x + a_first + ... + a_last + f_first + ... + f_last
// trace.inputs holds one entry per group boundary (K + 1 tensors).
ForwardTrace forward_grouped_reference(const TokenBatch& tokens,
                                       const Model& model,
                                       const PartitionPlan& plan);

struct CqilResult {
  ForwardTrace trace;
  std::vector<GroupExecutionRecord> records;
};

// Concurrent evaluation on `pool`; bit-identical to forward_grouped_reference.
// Throws ConfigError if the pool is smaller than p or the plan does not fit
// the model, and ExecutionError (naming group and layer) if a task fails.
CqilResult forward_cqil(const TokenBatch& tokens, const Model& model,
                        const PartitionPlan& plan, WorkerPool& pool);

// One JSON object per line: group, layer, phase, start_us, end_us. Phases are
// "attention", "bypass", "ffn" per layer and "reduction" per group (layer
// null).
std::string records_to_jsonl(const std::vector<GroupExecutionRecord>& records);

}  // namespace cqil

#endif  // CQIL_EXECUTOR_HPP_
