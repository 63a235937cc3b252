// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "moesep/checkpoint.hpp"
#include "moesep/conformer.hpp"
#include "moesep/loss.hpp"
#include "moesep/mixsim.hpp"
#include "moesep/optimizer.hpp"

namespace moesep::train {

struct FeatureConfig {
  int frame_length = 256;
  int hop_length = 128;
  int mel_bands = 80;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;
  int sample_rate = 16000;

  dsp::MelFilterbank make_filterbank() const {
    return dsp::make_mel_filterbank(frame_length / 2 + 1, mel_bands, sample_rate, mel_fmin,
                                    mel_fmax);
  }
};

struct TrainConfig {
  double peak_lr = 1e-4;
  int64_t warmup_steps = 200;
  int64_t total_steps = 2000;
  double weight_decay = 1e-3;
  int batch_size = 4;
  double alpha = 0.01;
  double sample_seconds = 4.0;
  double grad_clip = 5.0;
  int64_t checkpoint_every = 500;
  uint64_t seed = 0;
  int queue_depth = 4;

  void validate() const {
    if (peak_lr <= 0.0 || warmup_steps <= 0 || total_steps <= 0 || batch_size < 1 ||
        sample_seconds <= 0.0) {
      throw std::invalid_argument("train config: all values must be positive");
    }
    if (warmup_steps > total_steps) {
      throw std::invalid_argument("train config: warmup_steps must be <= total_steps");
    }
  }
};

inline double lr_schedule(int64_t step, const TrainConfig& cfg) {
  return opt::lr_schedule(step, cfg.peak_lr, cfg.warmup_steps, cfg.total_steps);
}

struct StepMetrics {
  int64_t step = 0;
  double upit = 0.0;
  double aux = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double f_min = 0.0;
  double f_max = 0.0;
  double dropped_frac = 0.0;
  std::vector<moe::LoadStats> per_layer;  // batch-aggregated, MoE blocks in order
};

// One AdamW update over a class-uniform minibatch. The loss is the batch
// mean of uPIT plus the token-weighted mean of the per-MoE-block load loss.
template <class S>
StepMetrics train_step(conformer::SSModel<S>& model,
                       const std::vector<const mixsim::MixtureSample*>& batch,
                       opt::AdamW<S>& optimizer, int64_t step, const TrainConfig& cfg,
                       const FeatureConfig& feat, const Tensor<S>& mel_weights, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const bool multi_gate = model.config().moe_kind == conformer::MoeKind::kMmoe;
  BatchClass batch_class = BatchClass::kUnspecified;
  if (multi_gate) {
    const auto cls = batch.front()->overlap_class;
    for (const auto* s : batch) {
      if (s->overlap_class != cls) {
        throw std::invalid_argument("train_step: mixed-class minibatch under MMoE");
      }
    }
    batch_class = cls == mixsim::OverlapClass::kOverlap ? BatchClass::kOverlap
                                                        : BatchClass::kNonOverlap;
  }

  const int moe_blocks = std::max(1, model.config().num_moe_blocks());
  const double batch_scale = 1.0 / static_cast<double>(batch.size());
  model.store().zero_grads();

  StepMetrics metrics;
  metrics.step = step;
  std::vector<std::vector<moe::LoadStats>> stats_by_layer;

  for (const auto* sample : batch) {
    const auto spec = dsp::stft(sample->mixture, feat.frame_length, feat.hop_length);
    Tensor<S> mag = dsp::magnitude(spec).template cast<S>();
    std::vector<Tensor<S>> ref_mags;
    ref_mags.reserve(sample->references.size());
    for (const auto& ref : sample->references) {
      ref_mags.push_back(
          dsp::magnitude(dsp::stft(ref, feat.frame_length, feat.hop_length)).template cast<S>());
    }

    typename conformer::SSModel<S>::Ctx ctx;
    std::vector<moe::LoadStats> stats;
    Tensor<S> masks = model.forward(mag, Mode::kTrain, batch_class, &rng, &ctx, &stats);

    auto upit = separation::upit_loss(masks, mag, ref_mags, mel_weights, true);
    upit.dmasks *= static_cast<S>(batch_scale);
    model.backward(ctx, upit.dmasks, batch_scale / moe_blocks);

    metrics.upit += upit.loss * batch_scale;
    if (!stats.empty()) {
      if (stats_by_layer.empty()) stats_by_layer.resize(stats.size());
      double sample_aux = 0.0;
      for (size_t l = 0; l < stats.size(); ++l) {
        sample_aux += moe::aux_loss(stats[l]);
        stats_by_layer[l].push_back(std::move(stats[l]));
      }
      metrics.aux += sample_aux / static_cast<double>(stats.size()) * batch_scale;
    }
  }

  metrics.grad_norm = opt::clip_global_norm(model.store(), cfg.grad_clip);
  metrics.lr = lr_schedule(step, cfg);
  optimizer.step(metrics.lr);

  for (auto& layer_stats : stats_by_layer) {
    metrics.per_layer.push_back(moe::aggregate(layer_stats));
  }
  if (!metrics.per_layer.empty()) {
    const auto overall = moe::aggregate(metrics.per_layer);
    metrics.f_min = *std::min_element(overall.f.begin(), overall.f.end());
    metrics.f_max = *std::max_element(overall.f.begin(), overall.f.end());
    int64_t dropped = 0;
    int64_t tokens = 0;
    for (const auto& s : metrics.per_layer) {
      tokens += s.token_count;
      for (int64_t d : s.dropped) dropped += d;
    }
    metrics.dropped_frac =
        tokens > 0 ? static_cast<double>(dropped) / static_cast<double>(tokens) : 0.0;
  }
  return metrics;
}

// Newline-delimited training log records.
class TrainLogWriter {
 public:
  explicit TrainLogWriter(const std::string& path) : out_(path) {
    if (!out_) throw Error("io-error", "cannot open training log: " + path);
  }

  void write(const StepMetrics& m) {
    nlohmann::json j{{"step", m.step},         {"upit", m.upit},
                     {"aux", m.aux},           {"lr", m.lr},
                     {"f_min", m.f_min},       {"f_max", m.f_max},
                     {"dropped_frac", m.dropped_frac}};
    out_ << j.dump() << "\n";
  }

 private:
  std::ofstream out_;
};

// step,layer,expert,token_count,mean_prob,dropped_count rows.
inline void write_routing_header(std::ostream& out) {
  out << "step,layer,expert,token_count,mean_prob,dropped_count\n";
}

inline void write_routing_rows(std::ostream& out, int64_t step,
                               const std::vector<moe::LoadStats>& per_layer) {
  for (size_t layer = 0; layer < per_layer.size(); ++layer) {
    const auto& s = per_layer[layer];
    for (int64_t e = 0; e < s.num_experts(); ++e) {
      out << step << ',' << layer << ',' << e << ','
          << s.kept[static_cast<size_t>(e)] + s.dropped[static_cast<size_t>(e)] << ','
          << s.P[static_cast<size_t>(e)] << ',' << s.dropped[static_cast<size_t>(e)] << "\n";
    }
  }
}

// Single-producer single-consumer bounded queue for batch prefetch.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(std::max<size_t>(1, capacity)) {}

  // Returns false once the queue is closed; the producer should stop.
  bool push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
    if (closed_) return false;
    queue_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    T value = std::move(queue_.front());
    queue_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> queue_;
  bool closed_ = false;
};

using BatchFn = std::function<std::vector<mixsim::MixtureSample>(int64_t step)>;
using StepHook = std::function<void(const StepMetrics&)>;

// Full training loop: a producer thread prefetches seeded batches into a
// bounded queue while the consumer runs optimizer steps. Checkpoints land
// in out_dir (when set) every checkpoint_every steps and at the end.
template <class S>
void train_loop(conformer::SSModel<S>& model, const BatchFn& next_batch,
                const TrainConfig& cfg, const FeatureConfig& feat,
                const std::string& out_dir = "", const StepHook& on_step = nullptr,
                std::ostream* routing_trace = nullptr) {
  cfg.validate();
  const auto fb = feat.make_filterbank();
  const Tensor<S> mel_weights = fb.weights.template cast<S>();
  opt::AdamW<S> optimizer(model.store(), {.weight_decay = cfg.weight_decay});
  Rng rng(cfg.seed + 0x5eed);

  std::unique_ptr<TrainLogWriter> log;
  if (!out_dir.empty()) log = std::make_unique<TrainLogWriter>(out_dir + "/train_log.jsonl");
  if (routing_trace) write_routing_header(*routing_trace);

  BoundedQueue<std::pair<int64_t, std::vector<mixsim::MixtureSample>>> queue(
      static_cast<size_t>(cfg.queue_depth));
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (int64_t step = 1; step <= cfg.total_steps; ++step) {
        if (!queue.push({step, next_batch(step)})) break;
      }
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });

  try {
    while (auto item = queue.pop()) {
      const auto& [step, samples] = *item;
      std::vector<const mixsim::MixtureSample*> batch;
      batch.reserve(samples.size());
      for (const auto& s : samples) batch.push_back(&s);

      StepMetrics metrics = train_step(model, batch, optimizer, step, cfg, feat, mel_weights, rng);
      if (log) log->write(metrics);
      if (routing_trace) write_routing_rows(*routing_trace, step, metrics.per_layer);
      if (on_step) on_step(metrics);
      if (!out_dir.empty() &&
          (step % cfg.checkpoint_every == 0 || step == cfg.total_steps)) {
        checkpoint::save(model.store(), out_dir + "/model.ckpt");
      }
    }
  } catch (...) {
    queue.close();  // unblock the producer before propagating
    producer.join();
    throw;
  }
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
}

}  // namespace moesep::train
