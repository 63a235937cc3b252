// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moesep/checkpoint.hpp"
#include "moesep/config.hpp"
#include "moesep/css.hpp"
#include "moesep/mixsim.hpp"
#include "moesep/train.hpp"
#include "moesep/verify.hpp"
#include "moesep/wav.hpp"

namespace moesep::cli {

namespace fs = std::filesystem;

namespace detail {

// Fixed disjoint bands keep synthetic mixtures separable by construction.
inline constexpr double kBandALo = 300.0, kBandAHi = 1200.0;
inline constexpr double kBandBLo = 2000.0, kBandBHi = 3500.0;

inline mixsim::MixtureSample make_synthetic_sample(uint64_t seed, double seconds,
                                                   mixsim::MixPattern pattern,
                                                   double overlap_ratio, double snr_db,
                                                   int sample_rate) {
  mixsim::SourceSpec a{mixsim::SourceKind::kSinusoidBand, kBandALo, kBandAHi, ""};
  mixsim::SourceSpec b{mixsim::SourceKind::kSinusoidBand, kBandBLo, kBandBHi, ""};
  auto wa = mixsim::synth_source(a, seconds, seed * 3 + 1, sample_rate);
  auto wb = mixsim::synth_source(b, seconds, seed * 3 + 2, sample_rate);
  return mixsim::mix(wa, wb, pattern, overlap_ratio, snr_db, seed * 3 + 3);
}

inline conformer::SSModel<float> build_model(const config::RunConfig& cfg,
                                             const std::string& checkpoint_path) {
  conformer::SSModel<float> model(cfg.model, cfg.training.seed);
  if (!checkpoint_path.empty()) checkpoint::load(model.store(), checkpoint_path);
  return model;
}

inline config::RunConfig resolve_config(const std::string& config_path,
                                        const std::string& model_path) {
  if (!config_path.empty()) return config::load_file(config_path);
  if (!model_path.empty()) {
    const fs::path sibling = fs::path(model_path).parent_path() / "model.cfg";
    if (fs::exists(sibling)) return config::load_file(sibling.string());
  }
  return {};
}

inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double idx = q * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(idx);
  const size_t hi = std::min(values.size() - 1, lo + 1);
  const double frac = idx - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace detail

struct RtfReport {
  double mean_rtf = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  double seconds = 0.0;
  int repeats = 0;
};

// Real-time factor of the separation pipeline: wall-clock per run divided
// by the audio duration; single-threaded, measured over `repeats` runs
// after `warmup` unmeasured ones.
template <class S>
RtfReport bench_rtf(const conformer::SSModel<S>& model, const config::RunConfig& cfg,
                    double seconds = 2.4, int repeats = 100, int warmup = 5,
                    uint64_t seed = 0) {
  if (repeats < 1) throw std::invalid_argument("bench_rtf: repeats must be >= 1");
  mixsim::SourceSpec spec{mixsim::SourceKind::kFilteredNoise, 100.0, 7000.0, ""};
  const dsp::Waveform audio =
      mixsim::synth_source(spec, seconds, seed, cfg.features.sample_rate);

  for (int i = 0; i < warmup; ++i) {
    css::separate_utterance(model, audio, cfg.features.frame_length, cfg.features.hop_length);
  }
  std::vector<double> rtf(static_cast<size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    css::separate_utterance(model, audio, cfg.features.frame_length, cfg.features.hop_length);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rtf[static_cast<size_t>(i)] = elapsed / seconds;
  }
  RtfReport report;
  report.seconds = seconds;
  report.repeats = repeats;
  for (double v : rtf) report.mean_rtf += v;
  report.mean_rtf /= static_cast<double>(repeats);
  report.p50 = detail::percentile(rtf, 0.5);
  report.p95 = detail::percentile(rtf, 0.95);
  return report;
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout) {
  CLI::App app{"Sparsely-gated mixture-of-experts Conformer speech separation toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // shared options
  std::string config_path;
  uint64_t seed = 0;
  std::string out_dir = ".";
  std::string trace_routing;

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic two-speaker dataset");
  int synth_num = 32;
  double synth_seconds = 3.0;
  double synth_snr = 20.0;
  double synth_ratio = 0.4;
  int synth_sr = 16000;
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--num", synth_num, "number of samples (half overlap, half sequential)");
  synth->add_option("--seconds", synth_seconds, "source duration per sample");
  synth->add_option("--snr-db", synth_snr, "noise SNR in dB");
  synth->add_option("--overlap-ratio", synth_ratio, "target overlap ratio for overlap class");
  synth->add_option("--sample-rate", synth_sr, "sample rate in Hz");
  synth->add_option("--seed", seed, "base seed");
  synth->callback([&] {
    fs::create_directories(out_dir);
    std::vector<mixsim::ManifestEntry> entries;
    for (int i = 0; i < synth_num; ++i) {
      const bool overlapped = i < synth_num / 2;
      const auto pattern = overlapped ? mixsim::MixPattern::kPartial : mixsim::MixPattern::kSequential;
      auto sample = detail::make_synthetic_sample(seed * 100000 + static_cast<uint64_t>(i),
                                                  synth_seconds, pattern, synth_ratio,
                                                  synth_snr, synth_sr);
      char stem[32];
      std::snprintf(stem, sizeof(stem), "sample_%04d", i);
      mixsim::ManifestEntry e;
      e.mixture_path = (fs::path(out_dir) / (std::string(stem) + ".mix.wav")).string();
      wav::write(e.mixture_path, sample.mixture);
      for (size_t r = 0; r < sample.references.size(); ++r) {
        const std::string ref_path =
            (fs::path(out_dir) / (std::string(stem) + ".ref" + std::to_string(r) + ".wav")).string();
        wav::write(ref_path, sample.references[r]);
        e.ref_paths.push_back(ref_path);
      }
      e.overlap_class = sample.overlap_class;
      e.overlap_ratio = sample.overlap_ratio;
      e.snr_db = sample.snr_db;
      entries.push_back(std::move(e));
    }
    mixsim::write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
    out << "wrote " << entries.size() << " samples to " << out_dir << "\n";
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "train a separation model on a manifest");
  std::string data_dir;
  int64_t experts_override = -1;
  bool mmoe_flag = false;
  double capacity_override = -1.0;
  int64_t steps_override = -1;
  train_cmd->add_option("--data", data_dir, "dataset directory with manifest.jsonl")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--seed", seed, "seed override");
  train_cmd->add_option("--experts", experts_override, "expert count override");
  train_cmd->add_flag("--mmoe", mmoe_flag, "use the multi-gate MoE");
  train_cmd->add_option("--capacity-factor", capacity_override, "capacity factor override");
  train_cmd->add_option("--steps", steps_override, "total steps override");
  train_cmd->add_option("--trace-routing", trace_routing, "routing trace CSV path");
  train_cmd->callback([&] {
    config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load_file(config_path);
    if (seed != 0) cfg.training.seed = seed;
    if (experts_override > 0) {
      cfg.model.moe.experts = experts_override;
      if (cfg.model.moe_kind == conformer::MoeKind::kNone) {
        cfg.model.moe_kind = conformer::MoeKind::kMoe;
      }
    }
    if (mmoe_flag) cfg.model.moe_kind = conformer::MoeKind::kMmoe;
    if (capacity_override > 0) cfg.model.moe.capacity_factor = capacity_override;
    if (steps_override > 0) {
      cfg.training.total_steps = steps_override;
      cfg.training.warmup_steps = std::min(cfg.training.warmup_steps, steps_override / 10 + 1);
    }
    cfg.model.moe.alpha = cfg.training.alpha;
    cfg.training.validate();

    const auto entries = mixsim::read_manifest((fs::path(data_dir) / "manifest.jsonl").string());
    if (entries.empty()) throw Error("bad-manifest", "manifest has no samples");
    std::vector<mixsim::MixtureSample> samples;
    std::vector<mixsim::OverlapClass> classes;
    for (const auto& e : entries) {
      mixsim::MixtureSample s;
      s.mixture = wav::read(e.mixture_path);
      for (const auto& rp : e.ref_paths) s.references.push_back(wav::read(rp));
      s.overlap_class = e.overlap_class;
      s.overlap_ratio = e.overlap_ratio;
      s.snr_db = e.snr_db;
      samples.push_back(std::move(s));
    }

    fs::create_directories(out_dir);
    conformer::SSModel<float> model(cfg.model, cfg.training.seed);
    out << "training " << model.parameter_count() << " parameters for "
        << cfg.training.total_steps << " steps\n";

    // class-pure epochs, reshuffled per epoch
    struct EpochState {
      int64_t epoch = -1;
      std::vector<std::vector<size_t>> batches;
    };
    auto state = std::make_shared<EpochState>();
    auto next_batch = [&, state](int64_t step) {
      if (state->epoch < 0) {
        state->batches =
            mixsim::make_batches(classes, cfg.training.batch_size, true, cfg.training.seed);
        state->epoch = 0;
      }
      const int64_t per_epoch = static_cast<int64_t>(state->batches.size());
      const int64_t epoch = (step - 1) / per_epoch;
      if (epoch != state->epoch) {
        state->batches = mixsim::make_batches(classes, cfg.training.batch_size, true,
                                              cfg.training.seed + static_cast<uint64_t>(epoch));
        state->epoch = epoch;
      }
      std::vector<mixsim::MixtureSample> batch;
      for (size_t idx : state->batches[static_cast<size_t>((step - 1) % per_epoch)]) {
        batch.push_back(samples[idx]);
      }
      return batch;
    };
    for (const auto& s : samples) classes.push_back(s.overlap_class);

    std::ofstream trace;
    if (!trace_routing.empty()) {
      trace.open(trace_routing);
      if (!trace) throw Error("io-error", "cannot open routing trace: " + trace_routing);
    }
    train::train_loop<float>(model, next_batch, cfg.training, cfg.features, out_dir, nullptr,
                             trace.is_open() ? &trace : nullptr);
    config::write_file((fs::path(out_dir) / "model.cfg").string(), cfg);
    out << "checkpoint: " << (fs::path(out_dir) / "model.ckpt").string() << "\n";
  });

  // separate
  auto* separate = app.add_subcommand("separate", "separate a wav into per-speaker channels");
  std::string model_path;
  std::string input_wav;
  double window_s = -1.0;
  double hop_s = -1.0;
  separate->add_option("input", input_wav, "input wav file")->required();
  separate->add_option("--model", model_path, "model checkpoint")->required();
  separate->add_option("--config", config_path, "config file (default: model.cfg next to checkpoint)");
  separate->add_option("--out", out_dir, "output directory");
  separate->add_option("--window-s", window_s, "CSS window seconds");
  separate->add_option("--hop-s", hop_s, "CSS hop seconds");
  separate->callback([&] {
    if (config_path.empty() &&
        !fs::exists(fs::path(model_path).parent_path() / "model.cfg")) {
      throw Error("bad-config",
                  "no --config given and no model.cfg found next to the checkpoint");
    }
    config::RunConfig cfg = detail::resolve_config(config_path, model_path);
    if (window_s > 0) cfg.window_seconds = window_s;
    if (hop_s > 0) cfg.hop_seconds = hop_s;
    auto model = detail::build_model(cfg, model_path);

    dsp::Waveform audio = wav::read(input_wav);
    if (audio.sample_rate != cfg.features.sample_rate) {
      throw Error("bad-wav", "expected " + std::to_string(cfg.features.sample_rate) +
                                 " Hz input, got " + std::to_string(audio.sample_rate));
    }
    auto channels = css::separate_long(model, audio, cfg.features.frame_length,
                                       cfg.features.hop_length, cfg.window_seconds,
                                       cfg.hop_seconds);
    fs::create_directories(out_dir);
    const std::string stem = fs::path(input_wav).stem().string();
    for (size_t s = 0; s < channels.size(); ++s) {
      const std::string path =
          (fs::path(out_dir) / (stem + ".ch" + std::to_string(s) + ".wav")).string();
      wav::write(path, channels[s]);
      out << path << "\n";
    }
  });

  // bench-rtf
  auto* bench = app.add_subcommand("bench-rtf", "measure the separation real-time factor");
  double bench_seconds = 2.4;
  int bench_repeats = 100;
  int bench_warmup = 5;
  bench->add_option("--config", config_path, "config file");
  bench->add_option("--model", model_path, "model checkpoint (random init when omitted)");
  bench->add_option("--seconds", bench_seconds, "sample duration");
  bench->add_option("--repeats", bench_repeats, "measured runs");
  bench->add_option("--warmup", bench_warmup, "unmeasured warmup runs");
  bench->add_option("--seed", seed, "seed");
  bench->callback([&] {
    config::RunConfig cfg = detail::resolve_config(config_path, model_path);
    auto model = detail::build_model(cfg, model_path);
    auto report = bench_rtf(model, cfg, bench_seconds, bench_repeats, bench_warmup, seed);
    nlohmann::json j{{"mean_rtf", report.mean_rtf},
                     {"p50", report.p50},
                     {"p95", report.p95},
                     {"seconds", report.seconds},
                     {"repeats", report.repeats}};
    out << j.dump() << "\n";
  });

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  grad->add_option("--seed", seed, "seed");
  grad->callback([&] {
    auto report = verify::run_gradchecks(seed);
    for (const auto& c : report.layers) {
      out << "layer " << c.name << ": max_rel_err=" << c.result.max_rel_err << " "
          << (c.result.pass(verify::GradcheckReport::kLayerTol) ? "PASS" : "FAIL") << "\n";
    }
    out << "tiny-model: max_rel_err=" << report.model.max_rel_err << " "
        << (report.model.pass(verify::GradcheckReport::kModelTol) ? "PASS" : "FAIL") << "\n";
    out << "elapsed_s=" << report.seconds << "\n";
    if (!report.pass()) exit_code = 1;
  });

  // routing-report
  auto* routing = app.add_subcommand("routing-report", "per-layer expert load report");
  double routing_seconds = 2.4;
  std::string routing_input;
  routing->add_option("--config", config_path, "config file");
  routing->add_option("--model", model_path, "model checkpoint (random init when omitted)");
  routing->add_option("--in", routing_input, "input wav (synthetic mixture when omitted)");
  routing->add_option("--seconds", routing_seconds, "synthetic input duration");
  routing->add_option("--seed", seed, "seed");
  routing->add_option("--trace-routing", trace_routing, "write CSV here instead of stdout");
  routing->callback([&] {
    config::RunConfig cfg = detail::resolve_config(config_path, model_path);
    if (cfg.model.moe_kind == conformer::MoeKind::kNone && model_path.empty()) {
      cfg.model.moe_kind = conformer::MoeKind::kMoe;  // a dense model has no routing to report
    }
    auto model = detail::build_model(cfg, model_path);

    dsp::Waveform audio;
    if (routing_input.empty()) {
      audio = detail::make_synthetic_sample(seed, routing_seconds, mixsim::MixPattern::kFull,
                                            0.4, 20.0, cfg.features.sample_rate)
                  .mixture;
    } else {
      audio = wav::read(routing_input);
    }
    const auto spec = dsp::stft(audio, cfg.features.frame_length, cfg.features.hop_length);
    Tensor<float> mag = dsp::magnitude(spec).cast<float>();
    std::vector<moe::LoadStats> stats;
    model.forward(mag, Mode::kEval, BatchClass::kUnspecified, nullptr, nullptr, &stats);

    std::ofstream file;
    if (!trace_routing.empty()) {
      file.open(trace_routing);
      if (!file) throw Error("io-error", "cannot open routing trace: " + trace_routing);
    }
    std::ostream& dst = file.is_open() ? static_cast<std::ostream&>(file) : out;
    train::write_routing_header(dst);
    train::write_routing_rows(dst, 0, stats);
  });

  std::vector<const char*> argv;
  argv.push_back("moesep");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime-error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}

}  // namespace moesep::cli
