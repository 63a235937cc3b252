// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesep/common.hpp"
#include "moesep/dsp.hpp"
#include "moesep/wav.hpp"

namespace moesep::mixsim {

enum class SourceKind { kSinusoidBand, kFilteredNoise, kWavFile };

struct SourceSpec {
  SourceKind kind = SourceKind::kSinusoidBand;
  double band_lo_hz = 500.0;
  double band_hi_hz = 1500.0;
  std::string path;  // kWavFile only
};

namespace detail {

// RBJ constant-skirt bandpass biquad, applied twice for steeper skirts.
inline void bandpass(std::vector<double>& x, double lo_hz, double hi_hz, int sample_rate) {
  const double f0 = std::sqrt(lo_hz * hi_hz);
  const double q = f0 / std::max(hi_hz - lo_hz, 1.0);
  const double omega = 2.0 * std::numbers::pi * f0 / sample_rate;
  const double alpha = std::sin(omega) / (2.0 * q);
  const double b0 = alpha, b1 = 0.0, b2 = -alpha;
  const double a0 = 1.0 + alpha, a1 = -2.0 * std::cos(omega), a2 = 1.0 - alpha;
  for (int pass = 0; pass < 2; ++pass) {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& v : x) {
      const double in = v;
      const double out = (b0 * in + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
      x2 = x1;
      x1 = in;
      y2 = y1;
      y1 = out;
      v = out;
    }
  }
}

inline void normalize_rms(std::vector<double>& x, double target_rms) {
  double e = 0.0;
  for (double v : x) e += v * v;
  const double rms = std::sqrt(e / static_cast<double>(x.size()));
  if (rms > 0.0) {
    const double g = target_rms / rms;
    for (double& v : x) v *= g;
  }
}

inline std::vector<double> gaussian_noise(size_t n, uint64_t seed) {
  std::vector<double> x(n);
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : x) v = dist(rng);
  return x;
}

}  // namespace detail

// Deterministic test-signal synthesis. Sinusoid-band sources confine their
// energy to the requested band, which keeps separability oracles exact.
inline dsp::Waveform synth_source(const SourceSpec& spec, double seconds, uint64_t seed,
                                  int sample_rate = 16000) {
  if (seconds <= 0.0) throw std::invalid_argument("synth_source: seconds must be positive");
  const size_t n = static_cast<size_t>(std::llround(seconds * sample_rate));
  dsp::Waveform w;
  w.sample_rate = sample_rate;

  switch (spec.kind) {
    case SourceKind::kSinusoidBand: {
      if (!(spec.band_lo_hz > 0.0) || spec.band_hi_hz <= spec.band_lo_hz ||
          spec.band_hi_hz >= sample_rate / 2.0) {
        throw std::invalid_argument("synth_source: bad frequency band");
      }
      w.samples.assign(n, 0.0);
      Rng rng(seed);
      const double margin = 0.02 * (spec.band_hi_hz - spec.band_lo_hz);
      std::uniform_real_distribution<double> freq(spec.band_lo_hz + margin,
                                                  spec.band_hi_hz - margin);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      std::uniform_real_distribution<double> amp(0.5, 1.0);
      const int num_tones = 8;
      for (int k = 0; k < num_tones; ++k) {
        const double f = freq(rng);
        const double ph = phase(rng);
        const double a = amp(rng);
        for (size_t i = 0; i < n; ++i) {
          w.samples[i] += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) /
                                           sample_rate +
                                       ph);
        }
      }
      // short edge fades against clicks
      const size_t fade = std::min<size_t>(n / 4, static_cast<size_t>(sample_rate) / 50);
      for (size_t i = 0; i < fade; ++i) {
        const double g = static_cast<double>(i + 1) / static_cast<double>(fade + 1);
        w.samples[i] *= g;
        w.samples[n - 1 - i] *= g;
      }
      detail::normalize_rms(w.samples, 0.1);
      break;
    }
    case SourceKind::kFilteredNoise: {
      w.samples = detail::gaussian_noise(n, seed);
      detail::bandpass(w.samples, spec.band_lo_hz, spec.band_hi_hz, sample_rate);
      detail::normalize_rms(w.samples, 0.1);
      break;
    }
    case SourceKind::kWavFile: {
      dsp::Waveform file = wav::read(spec.path);
      if (file.samples.size() < n) {
        throw Error("bad-wav", "wav file shorter than requested duration: " + spec.path);
      }
      w.sample_rate = file.sample_rate;
      w.samples.assign(file.samples.begin(), file.samples.begin() + static_cast<long>(n));
      break;
    }
  }
  return w;
}

struct VadConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double threshold_db = 40.0;  // below the peak frame RMS
};

// Energy VAD: a frame is active iff its RMS is within threshold_db of the
// loudest frame.
inline std::vector<uint8_t> vad(const dsp::Waveform& w, const VadConfig& cfg = {}) {
  const int64_t frame = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.frame_ms * w.sample_rate / 1000.0)));
  const int64_t hop = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.hop_ms * w.sample_rate / 1000.0)));
  const int64_t len = static_cast<int64_t>(w.samples.size());
  const int64_t frames = len >= frame ? 1 + (len - frame) / hop : 1;

  std::vector<double> rms(static_cast<size_t>(frames), 0.0);
  double peak = 0.0;
  for (int64_t t = 0; t < frames; ++t) {
    double e = 0.0;
    int64_t count = 0;
    for (int64_t i = t * hop; i < std::min(len, t * hop + frame); ++i) {
      e += w.samples[static_cast<size_t>(i)] * w.samples[static_cast<size_t>(i)];
      ++count;
    }
    rms[static_cast<size_t>(t)] = count > 0 ? std::sqrt(e / static_cast<double>(count)) : 0.0;
    peak = std::max(peak, rms[static_cast<size_t>(t)]);
  }

  std::vector<uint8_t> active(static_cast<size_t>(frames), 0);
  if (peak <= 0.0) return active;
  const double limit = peak * std::pow(10.0, -cfg.threshold_db / 20.0);
  for (int64_t t = 0; t < frames; ++t) {
    active[static_cast<size_t>(t)] = rms[static_cast<size_t>(t)] > limit ? 1 : 0;
  }
  return active;
}

enum class OverlapClass { kOverlap, kNonOverlap };

inline const char* to_string(OverlapClass c) {
  return c == OverlapClass::kOverlap ? "overlap" : "nonoverlap";
}

// Fraction of voiced frames (>= 1 active speaker) in which two or more
// speakers are active, measured on the pre-mix references.
inline double overlap_ratio_from_refs(const std::vector<dsp::Waveform>& refs,
                                      const VadConfig& cfg = {}) {
  if (refs.empty()) return 0.0;
  std::vector<std::vector<uint8_t>> labels;
  size_t frames = 0;
  for (const auto& r : refs) {
    labels.push_back(vad(r, cfg));
    frames = std::max(frames, labels.back().size());
  }
  int64_t voiced = 0;
  int64_t overlapped = 0;
  for (size_t t = 0; t < frames; ++t) {
    int count = 0;
    for (const auto& l : labels) {
      if (t < l.size() && l[t]) ++count;
    }
    if (count >= 1) ++voiced;
    if (count >= 2) ++overlapped;
  }
  return voiced > 0 ? static_cast<double>(overlapped) / static_cast<double>(voiced) : 0.0;
}

enum class MixPattern { kFull, kPartial, kSequential };

// Mixture, pre-mix references (zero-padded to the mixture length), and the
// retained noise component; mixture - sum(references) equals noise sample
// for sample.
struct MixtureSample {
  dsp::Waveform mixture;
  std::vector<dsp::Waveform> references;
  dsp::Waveform noise;
  OverlapClass overlap_class = OverlapClass::kOverlap;
  double overlap_ratio = 0.0;
  double snr_db = 0.0;
};

namespace detail {

inline std::vector<dsp::Waveform> place_pair(const dsp::Waveform& a, const dsp::Waveform& b,
                                             int64_t delay) {
  const int64_t len = std::max<int64_t>(static_cast<int64_t>(a.samples.size()),
                                        delay + static_cast<int64_t>(b.samples.size()));
  std::vector<dsp::Waveform> refs(2);
  refs[0].sample_rate = a.sample_rate;
  refs[0].samples.assign(static_cast<size_t>(len), 0.0);
  std::copy(a.samples.begin(), a.samples.end(), refs[0].samples.begin());
  refs[1].sample_rate = a.sample_rate;
  refs[1].samples.assign(static_cast<size_t>(len), 0.0);
  std::copy(b.samples.begin(), b.samples.end(), refs[1].samples.begin() + delay);
  return refs;
}

}  // namespace detail

// Mixes two sources under an overlap pattern and adds filtered noise at the
// requested SNR against the summed speech power. kPartial searches the
// delay of b so the measured voiced-overlap fraction lands within +/-0.02
// of partial_ratio.
inline MixtureSample mix(const dsp::Waveform& a, const dsp::Waveform& b, MixPattern pattern,
                         double partial_ratio, double snr_db, uint64_t noise_seed,
                         const VadConfig& vad_cfg = {}) {
  if (a.sample_rate != b.sample_rate) {
    throw std::invalid_argument("mix: sample rate mismatch");
  }
  const int64_t la = static_cast<int64_t>(a.samples.size());
  const int64_t vad_frame = static_cast<int64_t>(
      std::llround(vad_cfg.frame_ms * a.sample_rate / 1000.0));

  int64_t delay = 0;
  switch (pattern) {
    case MixPattern::kFull:
      delay = 0;
      break;
    case MixPattern::kSequential:
      delay = la + 2 * vad_frame;  // frame of guard keeps boundary frames clean
      break;
    case MixPattern::kPartial: {
      if (partial_ratio <= 0.0 || partial_ratio >= 1.0) {
        throw std::invalid_argument("mix: partial ratio must be in (0,1)");
      }
      const double tol = 0.02;
      auto measured = [&](int64_t d) {
        return overlap_ratio_from_refs(detail::place_pair(a, b, d), vad_cfg);
      };
      int64_t lo = 0;
      int64_t hi = la + 2 * vad_frame;
      if (measured(lo) < partial_ratio - tol) {
        throw std::invalid_argument("mix: requested overlap ratio unreachable for these lengths");
      }
      while (hi - lo > 1) {
        const int64_t mid = lo + (hi - lo) / 2;
        if (measured(mid) > partial_ratio) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      const double rl = measured(lo);
      const double rh = measured(hi);
      delay = std::abs(rl - partial_ratio) <= std::abs(rh - partial_ratio) ? lo : hi;
      if (std::abs(measured(delay) - partial_ratio) > tol) {
        throw std::invalid_argument("mix: could not hit the requested overlap ratio");
      }
      break;
    }
  }

  MixtureSample sample;
  sample.references = detail::place_pair(a, b, delay);
  const int64_t len = static_cast<int64_t>(sample.references[0].samples.size());

  // noise at the requested SNR against summed speech power
  std::vector<double> noise = detail::gaussian_noise(static_cast<size_t>(len), noise_seed);
  detail::bandpass(noise, 80.0, 7600.0, a.sample_rate);
  double speech_power = 0.0;
  for (int64_t i = 0; i < len; ++i) {
    const double s = sample.references[0].samples[static_cast<size_t>(i)] +
                     sample.references[1].samples[static_cast<size_t>(i)];
    speech_power += s * s;
  }
  speech_power /= static_cast<double>(len);
  double noise_power = 0.0;
  for (double v : noise) noise_power += v * v;
  noise_power /= static_cast<double>(len);
  if (noise_power > 0.0 && speech_power > 0.0) {
    const double gain = std::sqrt(speech_power / noise_power * std::pow(10.0, -snr_db / 10.0));
    for (double& v : noise) v *= gain;
  }

  sample.mixture.sample_rate = a.sample_rate;
  sample.mixture.samples.resize(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) {
    sample.mixture.samples[static_cast<size_t>(i)] =
        sample.references[0].samples[static_cast<size_t>(i)] +
        sample.references[1].samples[static_cast<size_t>(i)] + noise[static_cast<size_t>(i)];
  }
  // retain the noise as the exact residual so additivity holds bit for bit
  sample.noise.sample_rate = a.sample_rate;
  sample.noise.samples.resize(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) {
    sample.noise.samples[static_cast<size_t>(i)] =
        sample.mixture.samples[static_cast<size_t>(i)] -
        sample.references[0].samples[static_cast<size_t>(i)] -
        sample.references[1].samples[static_cast<size_t>(i)];
  }

  sample.overlap_ratio = overlap_ratio_from_refs(sample.references, vad_cfg);
  sample.overlap_class =
      sample.overlap_ratio > 0.0 ? OverlapClass::kOverlap : OverlapClass::kNonOverlap;
  sample.snr_db = snr_db;
  return sample;
}

// Newline-delimited dataset manifest records.
struct ManifestEntry {
  std::string mixture_path;
  std::vector<std::string> ref_paths;
  OverlapClass overlap_class = OverlapClass::kOverlap;
  double overlap_ratio = 0.0;
  double snr_db = 0.0;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write manifest: " + path);
  for (const auto& e : entries) {
    nlohmann::json j{{"mixture", e.mixture_path},
                     {"refs", e.ref_paths},
                     {"class", to_string(e.overlap_class)},
                     {"ratio", e.overlap_ratio},
                     {"snr", e.snr_db}};
    out << j.dump() << "\n";
  }
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("bad-manifest", "cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error("bad-manifest", "manifest line is not valid json");
    ManifestEntry e;
    e.mixture_path = j.at("mixture").get<std::string>();
    e.ref_paths = j.at("refs").get<std::vector<std::string>>();
    e.overlap_class = j.at("class").get<std::string>() == "overlap" ? OverlapClass::kOverlap
                                                                    : OverlapClass::kNonOverlap;
    e.overlap_ratio = j.at("ratio").get<double>();
    e.snr_db = j.at("snr").get<double>();
    entries.push_back(std::move(e));
  }
  return entries;
}

// Seeded batch assembly; with class_pure every batch holds a single overlap
// class. Classes with fewer samples than one batch produce a short final
// batch (with a warning).
inline std::vector<std::vector<size_t>> make_batches(const std::vector<OverlapClass>& classes,
                                                     int batch_size, bool class_pure,
                                                     uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<size_t>> batches;

  auto chunk = [&](std::vector<size_t>& idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(idx.size(), i + static_cast<size_t>(batch_size));
      batches.emplace_back(idx.begin() + static_cast<long>(i), idx.begin() + static_cast<long>(end));
    }
  };

  if (class_pure) {
    std::vector<size_t> overlap_idx;
    std::vector<size_t> nonoverlap_idx;
    for (size_t i = 0; i < classes.size(); ++i) {
      (classes[i] == OverlapClass::kOverlap ? overlap_idx : nonoverlap_idx).push_back(i);
    }
    for (auto* idx : {&overlap_idx, &nonoverlap_idx}) {
      if (!idx->empty() && idx->size() < static_cast<size_t>(batch_size)) {
        std::fprintf(stderr, "make_batches: class with %zu samples is smaller than one batch\n",
                     idx->size());
      }
      chunk(*idx);
    }
  } else {
    std::vector<size_t> all(classes.size());
    std::iota(all.begin(), all.end(), 0);
    chunk(all);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace moesep::mixsim
