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

#include "cqil/executor.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "cqil/errors.hpp"

namespace cqil {

struct WorkerPool::Worker {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::packaged_task<void()>> queue;
  bool stopping = false;
  std::thread thread;

  Worker() : thread([this] { run(); }) {}

  ~Worker() {
    {
      std::lock_guard<std::mutex> lock(mu);
      stopping = true;
    }
    cv.notify_all();
    thread.join();
  }

  void run() {
    for (;;) {
      std::packaged_task<void()> task;
      {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [this] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        task = std::move(queue.front());
        queue.pop_front();
      }
      task();
    }
  }
};

WorkerPool::WorkerPool(std::size_t n_workers) {
  if (n_workers == 0) throw ConfigError("worker pool needs at least 1 worker");
  workers_.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) {
    workers_.push_back(std::make_unique<Worker>());
  }
  slot_mapping_.resize(n_workers);
  std::iota(slot_mapping_.begin(), slot_mapping_.end(), std::size_t{0});
}

WorkerPool::~WorkerPool() = default;

std::future<void> WorkerPool::submit(std::size_t worker,
                                     std::function<void()> task) {
  Worker& w = *workers_.at(worker);
  std::packaged_task<void()> pt(std::move(task));
  std::future<void> fut = pt.get_future();
  {
    std::lock_guard<std::mutex> lock(w.mu);
    w.queue.push_back(std::move(pt));
  }
  w.cv.notify_one();
  return fut;
}

void WorkerPool::set_slot_mapping(std::vector<std::size_t> mapping) {
  std::vector<std::size_t> sorted = mapping;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i || sorted.size() != workers_.size()) {
      throw ConfigError("slot mapping must be a permutation of the workers");
    }
  }
  std::lock_guard<std::mutex> lock(mu_);
  slot_mapping_ = std::move(mapping);
}

std::size_t WorkerPool::worker_for_slot(std::size_t slot) const {
  std::lock_guard<std::mutex> lock(mu_);
  return slot_mapping_.at(slot);
}

void WorkerPool::set_transfer_delay(std::chrono::microseconds delay) {
  if (delay.count() < 0) throw ConfigError("transfer delay must be >= 0");
  std::lock_guard<std::mutex> lock(mu_);
  delay_ = delay;
}

std::chrono::microseconds WorkerPool::transfer_delay() const {
  std::lock_guard<std::mutex> lock(mu_);
  return delay_;
}

void WorkerPool::record_delivery(const BypassDelivery& delivery) {
  std::lock_guard<std::mutex> lock(mu_);
  deliveries_.push_back(delivery);
}

std::vector<BypassDelivery> WorkerPool::delivery_log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return deliveries_;
}

void WorkerPool::clear_delivery_log() {
  std::lock_guard<std::mutex> lock(mu_);
  deliveries_.clear();
}

void WorkerPool::inject_fault(std::optional<int> layer) {
  std::lock_guard<std::mutex> lock(mu_);
  fault_layer_ = layer;
}

std::optional<int> WorkerPool::fault_layer() const {
  std::lock_guard<std::mutex> lock(mu_);
  return fault_layer_;
}

void inject_transfer_delay(WorkerPool& pool, std::chrono::microseconds delay) {
  pool.set_transfer_delay(delay);
}

namespace {

void check_plan_fits(const Model& model, const PartitionPlan& plan) {
  plan.validate();
  if (plan.n_layers != model.config.n_layers ||
      model.layers.size() != static_cast<std::size_t>(plan.n_layers)) {
    throw ConfigError("plan is for " + std::to_string(plan.n_layers) +
                      " layers, model has " +
                      std::to_string(model.layers.size()));
  }
}

const LayerWeights& layer_at(const Model& model, int layer) {
  return model.layers[static_cast<std::size_t>(layer - 1)];
}

int bypass_window_begin(std::size_t slot, int bypass) {
  return std::max(0, static_cast<int>(slot) - bypass);
}

}  // namespace

ForwardTrace forward_grouped_reference(const TokenBatch& tokens,
                                       const Model& model,
                                       const PartitionPlan& plan) {
  check_plan_fits(model, plan);
  const ModelConfig& cfg = model.config;
  ForwardTrace trace;
  trace.inputs.reserve(plan.groups.size() + 1);
  trace.inputs.push_back(embed(tokens, model));
  for (const std::vector<int>& group : plan.groups) {
    const Tensor& x = trace.inputs.back();
    std::vector<Tensor> attn;
    attn.reserve(group.size());
    for (int l : group) attn.push_back(attn_branch(x, layer_at(model, l), cfg));

    std::vector<Tensor> ffn;
    ffn.reserve(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      Tensor in = add(x, attn[i]);
      for (int j = bypass_window_begin(i, plan.bypass); j < static_cast<int>(i);
           ++j) {
        add_inplace(in, attn[static_cast<std::size_t>(j)]);
      }
      ffn.push_back(ffn_branch(in, layer_at(model, group[i]), cfg));
    }

    Tensor next = x;
    for (const Tensor& a : attn) add_inplace(next, a);
    for (const Tensor& f : ffn) add_inplace(next, f);
    trace.inputs.push_back(std::move(next));
  }
  trace.logits = output_logits(trace.inputs.back(), model);
  return trace;
}

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_since(Clock::time_point epoch) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() -
                                                               epoch)
      .count();
}

// State shared by the p tasks of one parallel group. Channel (j -> i) carries
// slot j's attention output to slot i.
struct GroupRun {
  const Tensor* input = nullptr;
  std::vector<Tensor> attn;
  std::vector<Tensor> ffn;
  std::vector<LayerTiming> timings;
  std::vector<std::vector<std::promise<void>>> outbound;  // [producer][k]
  std::vector<std::vector<std::shared_future<void>>> inbound;  // [consumer][k]
};

void run_slot(GroupRun& run, std::size_t slot, int group_id,
              const std::vector<int>& group, int bypass, const Model& model,
              WorkerPool& pool, Clock::time_point epoch) {
  const int layer = group[slot];
  const LayerWeights& weights = layer_at(model, layer);
  LayerTiming& timing = run.timings[slot];
  bool sent = false;
  try {
    timing.attn_start_us = micros_since(epoch);
    if (pool.fault_layer() == layer) {
      throw std::runtime_error("injected worker fault");
    }
    run.attn[slot] = attn_branch(*run.input, weights, model.config);
    timing.attn_end_us = micros_since(epoch);
    for (std::promise<void>& ch : run.outbound[slot]) ch.set_value();
    sent = true;

    timing.bypass_start_us = micros_since(epoch);
    Tensor in = add(*run.input, run.attn[slot]);
    const auto delay = pool.transfer_delay();
    const int first = bypass_window_begin(slot, bypass);
    for (int j = first; j < static_cast<int>(slot); ++j) {
      run.inbound[slot][static_cast<std::size_t>(j - first)].get();
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      pool.record_delivery({group_id, group[static_cast<std::size_t>(j)], layer});
      add_inplace(in, run.attn[static_cast<std::size_t>(j)]);
    }
    timing.bypass_end_us = micros_since(epoch);

    timing.ffn_start_us = micros_since(epoch);
    run.ffn[slot] = ffn_branch(in, weights, model.config);
    timing.ffn_end_us = micros_since(epoch);
  } catch (const ExecutionError&) {
    // An upstream producer failed; its own error is the one to report.
    if (!sent) {
      for (std::promise<void>& ch : run.outbound[slot]) {
        ch.set_exception(std::current_exception());
      }
    }
    throw;
  } catch (const std::exception& e) {
    auto err = std::make_exception_ptr(ExecutionError(group_id, layer, e.what()));
    if (!sent) {
      for (std::promise<void>& ch : run.outbound[slot]) ch.set_exception(err);
    }
    std::rethrow_exception(err);
  }
}

}  // namespace

CqilResult forward_cqil(const TokenBatch& tokens, const Model& model,
                        const PartitionPlan& plan, WorkerPool& pool) {
  check_plan_fits(model, plan);
  if (pool.size() < static_cast<std::size_t>(plan.group_size)) {
    throw ConfigError("worker pool has " + std::to_string(pool.size()) +
                      " workers, plan needs p=" +
                      std::to_string(plan.group_size));
  }
  const Clock::time_point epoch = Clock::now();

  CqilResult result;
  result.trace.inputs.reserve(plan.groups.size() + 1);
  result.trace.inputs.push_back(embed(tokens, model));
  result.records.reserve(plan.groups.size());

  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const std::vector<int>& group = plan.groups[g];
    const int group_id = static_cast<int>(g + 1);
    const std::size_t p = group.size();
    const int bypass = p > 1 ? plan.bypass : 0;

    GroupRun run;
    run.input = &result.trace.inputs.back();
    run.attn.resize(p);
    run.ffn.resize(p);
    run.timings.resize(p);
    run.outbound.resize(p);
    run.inbound.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
      const int first = bypass_window_begin(i, bypass);
      for (int j = first; j < static_cast<int>(i); ++j) {
        auto& ch = run.outbound[static_cast<std::size_t>(j)].emplace_back();
        run.inbound[i].push_back(ch.get_future().share());
      }
    }

    std::vector<std::future<void>> done;
    done.reserve(p);
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t worker = p == 1 ? 0 : pool.worker_for_slot(i);
      run.timings[i].layer = group[i];
      run.timings[i].slot = i;
      run.timings[i].worker = worker;
      done.push_back(pool.submit(worker, [&run, i, group_id, &group, bypass,
                                          &model, &pool, epoch] {
        run_slot(run, i, group_id, group, bypass, model, pool, epoch);
      }));
    }
    // Every task references `run`; wait for all before surfacing the first
    // failure in slot order.
    for (std::future<void>& f : done) f.wait();
    for (std::future<void>& f : done) f.get();

    GroupExecutionRecord rec;
    rec.group = group_id;
    rec.layers = group;
    rec.reduce_start_us = micros_since(epoch);
    Tensor next = *run.input;
    for (const Tensor& a : run.attn) add_inplace(next, a);
    for (const Tensor& f : run.ffn) add_inplace(next, f);
    rec.reduce_end_us = micros_since(epoch);
    rec.bypass_messages = bypass_transmissions(static_cast<int>(p), bypass);
    rec.attn_outputs = std::move(run.attn);
    rec.ffn_outputs = std::move(run.ffn);
    rec.timings = std::move(run.timings);
    result.records.push_back(std::move(rec));
    result.trace.inputs.push_back(std::move(next));
  }
  result.trace.logits = output_logits(result.trace.inputs.back(), model);
  return result;
}

std::string records_to_jsonl(const std::vector<GroupExecutionRecord>& records) {
  std::string out;
  auto line = [&out](int group, const nlohmann::json& layer,
                     const char* phase, std::int64_t start, std::int64_t end) {
    nlohmann::json j{{"group", group},
                     {"layer", layer},
                     {"phase", phase},
                     {"start_us", start},
                     {"end_us", end}};
    out += j.dump();
    out += '\n';
  };
  for (const GroupExecutionRecord& rec : records) {
    for (const LayerTiming& t : rec.timings) {
      line(rec.group, t.layer, "attention", t.attn_start_us, t.attn_end_us);
      line(rec.group, t.layer, "bypass", t.bypass_start_us, t.bypass_end_us);
      line(rec.group, t.layer, "ffn", t.ffn_start_us, t.ffn_end_us);
    }
    line(rec.group, nullptr, "reduction", rec.reduce_start_us,
         rec.reduce_end_us);
  }
  return out;
}

}  // namespace cqil
