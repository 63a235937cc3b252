// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "moesep/common.hpp"
#include "moesep/conformer.hpp"
#include "moesep/train.hpp"

namespace moesep::config {

// Everything a run needs: model shape, feature extraction, training
// schedule, and CSS windowing.
struct RunConfig {
  conformer::ConformerConfig model;
  train::FeatureConfig features;
  train::TrainConfig training;
  double window_seconds = 2.4;
  double hop_seconds = 0.8;
};

using KeyValues = std::map<std::string, std::string>;

// Flat `key = value` text; blank lines and #-comments ignored.
inline KeyValues parse_keyvalues(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("bad-config", "config line " + std::to_string(line_no) + " has no '='");
    }
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty()) {
      throw Error("bad-config", "config line " + std::to_string(line_no) + " has an empty key");
    }
    kv[key] = value;
  }
  return kv;
}

namespace detail {

inline int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("bad-config", "config key '" + key + "' is not an integer: " + v);
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("bad-config", "config key '" + key + "' is not a number: " + v);
  }
}

}  // namespace detail

inline RunConfig from_keyvalues(const KeyValues& kv) {
  RunConfig cfg;
  bool input_dim_set = false;
  for (const auto& [key, value] : kv) {
    if (key == "num_blocks") cfg.model.num_blocks = static_cast<int>(detail::to_int(key, value));
    else if (key == "model_dim") cfg.model.model_dim = detail::to_int(key, value);
    else if (key == "heads") cfg.model.heads = static_cast<int>(detail::to_int(key, value));
    else if (key == "ffn_hidden") cfg.model.ffn_hidden = detail::to_int(key, value);
    else if (key == "conv_kernel") cfg.model.conv_kernel = static_cast<int>(detail::to_int(key, value));
    else if (key == "input_dim") {
      cfg.model.input_dim = detail::to_int(key, value);
      input_dim_set = true;
    } else if (key == "num_speakers") cfg.model.num_speakers = static_cast<int>(detail::to_int(key, value));
    else if (key == "moe_block_stride") cfg.model.moe_block_stride = static_cast<int>(detail::to_int(key, value));
    else if (key == "max_rel_distance") cfg.model.max_rel_distance = static_cast<int>(detail::to_int(key, value));
    else if (key == "moe") {
      if (value == "none") cfg.model.moe_kind = conformer::MoeKind::kNone;
      else if (value == "moe") cfg.model.moe_kind = conformer::MoeKind::kMoe;
      else if (value == "mmoe") cfg.model.moe_kind = conformer::MoeKind::kMmoe;
      else throw Error("bad-config", "config key 'moe' must be none|moe|mmoe, got " + value);
    } else if (key == "experts") cfg.model.moe.experts = detail::to_int(key, value);
    else if (key == "capacity_factor") cfg.model.moe.capacity_factor = detail::to_double(key, value);
    else if (key == "jitter") cfg.model.moe.jitter = detail::to_double(key, value);
    else if (key == "expert_dropout") cfg.model.moe.expert_dropout = detail::to_double(key, value);
    else if (key == "frame_length") cfg.features.frame_length = static_cast<int>(detail::to_int(key, value));
    else if (key == "hop_length") cfg.features.hop_length = static_cast<int>(detail::to_int(key, value));
    else if (key == "mel_bands") cfg.features.mel_bands = static_cast<int>(detail::to_int(key, value));
    else if (key == "mel_fmin") cfg.features.mel_fmin = detail::to_double(key, value);
    else if (key == "mel_fmax") cfg.features.mel_fmax = detail::to_double(key, value);
    else if (key == "sample_rate") cfg.features.sample_rate = static_cast<int>(detail::to_int(key, value));
    else if (key == "peak_lr") cfg.training.peak_lr = detail::to_double(key, value);
    else if (key == "warmup_steps") cfg.training.warmup_steps = detail::to_int(key, value);
    else if (key == "total_steps") cfg.training.total_steps = detail::to_int(key, value);
    else if (key == "weight_decay") cfg.training.weight_decay = detail::to_double(key, value);
    else if (key == "batch_size") cfg.training.batch_size = static_cast<int>(detail::to_int(key, value));
    else if (key == "alpha") cfg.training.alpha = detail::to_double(key, value);
    else if (key == "sample_seconds") cfg.training.sample_seconds = detail::to_double(key, value);
    else if (key == "grad_clip") cfg.training.grad_clip = detail::to_double(key, value);
    else if (key == "checkpoint_every") cfg.training.checkpoint_every = detail::to_int(key, value);
    else if (key == "seed") cfg.training.seed = static_cast<uint64_t>(detail::to_int(key, value));
    else if (key == "queue_depth") cfg.training.queue_depth = static_cast<int>(detail::to_int(key, value));
    else if (key == "window_seconds") cfg.window_seconds = detail::to_double(key, value);
    else if (key == "hop_seconds") cfg.hop_seconds = detail::to_double(key, value);
    else throw Error("bad-config", "unknown config key: " + key);
  }
  if (!input_dim_set) cfg.model.input_dim = cfg.features.frame_length / 2 + 1;
  cfg.model.moe.alpha = cfg.training.alpha;
  return cfg;
}

inline std::string to_text(const RunConfig& cfg) {
  std::ostringstream out;
  const char* moe_name = cfg.model.moe_kind == conformer::MoeKind::kNone
                             ? "none"
                             : (cfg.model.moe_kind == conformer::MoeKind::kMoe ? "moe" : "mmoe");
  out << "# model\n"
      << "num_blocks = " << cfg.model.num_blocks << "\n"
      << "model_dim = " << cfg.model.model_dim << "\n"
      << "heads = " << cfg.model.heads << "\n"
      << "ffn_hidden = " << cfg.model.ffn_hidden << "\n"
      << "conv_kernel = " << cfg.model.conv_kernel << "\n"
      << "input_dim = " << cfg.model.input_dim << "\n"
      << "num_speakers = " << cfg.model.num_speakers << "\n"
      << "moe_block_stride = " << cfg.model.moe_block_stride << "\n"
      << "max_rel_distance = " << cfg.model.max_rel_distance << "\n"
      << "moe = " << moe_name << "\n"
      << "experts = " << cfg.model.moe.experts << "\n"
      << "capacity_factor = " << cfg.model.moe.capacity_factor << "\n"
      << "jitter = " << cfg.model.moe.jitter << "\n"
      << "expert_dropout = " << cfg.model.moe.expert_dropout << "\n"
      << "# features\n"
      << "frame_length = " << cfg.features.frame_length << "\n"
      << "hop_length = " << cfg.features.hop_length << "\n"
      << "mel_bands = " << cfg.features.mel_bands << "\n"
      << "mel_fmin = " << cfg.features.mel_fmin << "\n"
      << "mel_fmax = " << cfg.features.mel_fmax << "\n"
      << "sample_rate = " << cfg.features.sample_rate << "\n"
      << "# training\n"
      << "peak_lr = " << cfg.training.peak_lr << "\n"
      << "warmup_steps = " << cfg.training.warmup_steps << "\n"
      << "total_steps = " << cfg.training.total_steps << "\n"
      << "weight_decay = " << cfg.training.weight_decay << "\n"
      << "batch_size = " << cfg.training.batch_size << "\n"
      << "alpha = " << cfg.training.alpha << "\n"
      << "sample_seconds = " << cfg.training.sample_seconds << "\n"
      << "grad_clip = " << cfg.training.grad_clip << "\n"
      << "checkpoint_every = " << cfg.training.checkpoint_every << "\n"
      << "seed = " << cfg.training.seed << "\n"
      << "queue_depth = " << cfg.training.queue_depth << "\n"
      << "# continuous separation\n"
      << "window_seconds = " << cfg.window_seconds << "\n"
      << "hop_seconds = " << cfg.hop_seconds << "\n";
  return out.str();
}

inline RunConfig load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("bad-config", "cannot open config file: " + path);
  auto kv = parse_keyvalues(in);
  return from_keyvalues(kv);
}

inline void write_file(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write config file: " + path);
  out << to_text(cfg);
}

}  // namespace moesep::config
