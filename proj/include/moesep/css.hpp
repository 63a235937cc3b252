// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moesep/conformer.hpp"
#include "moesep/dsp.hpp"
#include "moesep/tensor.hpp"

namespace moesep::css {

struct WindowPlan {
  int64_t window_samples = 0;
  int64_t hop_samples = 0;
  int64_t total_samples = 0;
  std::vector<int64_t> offsets;  // strictly increasing by hop
};

// Windows start every hop; one zero-padded tail window is appended when the
// last full-start window leaves samples uncovered.
inline WindowPlan plan_windows(int64_t total_samples, int64_t window_samples,
                               int64_t hop_samples) {
  if (total_samples < 1) throw std::invalid_argument("plan_windows: empty input");
  if (window_samples < 1 || hop_samples < 1 || hop_samples > window_samples) {
    throw std::invalid_argument("plan_windows: need 0 < hop <= window");
  }
  WindowPlan plan;
  plan.window_samples = window_samples;
  plan.hop_samples = hop_samples;
  plan.total_samples = total_samples;
  plan.offsets.push_back(0);
  int64_t k = 1;
  while (k * hop_samples + window_samples < total_samples) {
    plan.offsets.push_back(k * hop_samples);
    ++k;
  }
  if (plan.offsets.back() + window_samples < total_samples) {
    plan.offsets.push_back(k * hop_samples);
  }
  return plan;
}

// Channel permutation of the current window that minimizes the summed L2
// distance to the previous window over the shared overlap region; exhaustive
// over all S! candidates.
inline std::vector<int> align_permutation(const Tensor<double>& prev_overlap,
                                          const Tensor<double>& cur_overlap) {
  if (prev_overlap.rank() != 3 || !prev_overlap.same_shape(cur_overlap)) {
    throw std::invalid_argument("align_permutation: shape mismatch");
  }
  const int64_t channels = prev_overlap.dim(0);
  const int64_t plane = prev_overlap.dim(1) * prev_overlap.dim(2);

  std::vector<std::vector<double>> cost(static_cast<size_t>(channels),
                                        std::vector<double>(static_cast<size_t>(channels)));
  for (int64_t i = 0; i < channels; ++i) {
    for (int64_t j = 0; j < channels; ++j) {
      double acc = 0.0;
      const double* p = prev_overlap.data() + i * plane;
      const double* c = cur_overlap.data() + j * plane;
      for (int64_t k = 0; k < plane; ++k) {
        const double d = p[k] - c[k];
        acc += d * d;
      }
      cost[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc;
    }
  }

  std::vector<int> perm(static_cast<size_t>(channels));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best_perm = perm;
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int64_t i = 0; i < channels; ++i) {
      total += cost[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    if (total < best) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_perm;
}

// Overlap-add with linear crossfade ramps spanning the full inter-window
// overlap, normalized by the window-weight sum. Each windows[k] holds S
// channels of exactly window_samples samples.
inline std::vector<dsp::Waveform> stitch(const std::vector<std::vector<dsp::Waveform>>& windows,
                                         const WindowPlan& plan) {
  if (windows.size() != plan.offsets.size()) {
    throw std::invalid_argument("stitch: window count does not match plan");
  }
  const size_t channels = windows.front().size();
  const int64_t ramp = plan.window_samples - plan.hop_samples;

  std::vector<std::vector<double>> num(channels,
                                       std::vector<double>(static_cast<size_t>(plan.total_samples), 0.0));
  std::vector<double> den(static_cast<size_t>(plan.total_samples), 0.0);

  for (size_t k = 0; k < windows.size(); ++k) {
    if (windows[k].size() != channels) throw std::invalid_argument("stitch: channel mismatch");
    const bool first = k == 0;
    const bool last = k + 1 == windows.size();
    const int64_t offset = plan.offsets[k];
    for (int64_t i = 0; i < plan.window_samples; ++i) {
      const int64_t n = offset + i;
      if (n >= plan.total_samples) break;
      double weight = 1.0;
      if (!first && ramp > 0 && i < ramp) {
        weight = static_cast<double>(i + 1) / static_cast<double>(ramp + 1);
      }
      if (!last && ramp > 0 && i >= plan.window_samples - ramp) {
        weight = std::min(weight, static_cast<double>(plan.window_samples - i) /
                                      static_cast<double>(ramp + 1));
      }
      den[static_cast<size_t>(n)] += weight;
      for (size_t s = 0; s < channels; ++s) {
        if (static_cast<int64_t>(windows[k][s].samples.size()) != plan.window_samples) {
          throw std::invalid_argument("stitch: window length mismatch");
        }
        num[s][static_cast<size_t>(n)] += weight * windows[k][s].samples[static_cast<size_t>(i)];
      }
    }
  }

  std::vector<dsp::Waveform> out(channels);
  for (size_t s = 0; s < channels; ++s) {
    out[s].sample_rate = windows.front().front().sample_rate;
    out[s].samples.resize(static_cast<size_t>(plan.total_samples));
    for (int64_t n = 0; n < plan.total_samples; ++n) {
      const double d = den[static_cast<size_t>(n)];
      out[s].samples[static_cast<size_t>(n)] =
          d > 0.0 ? num[s][static_cast<size_t>(n)] / d : 0.0;
    }
  }
  return out;
}

// One window (or whole utterance) of mask-based separation with mixture
// phase reuse. Returns the separated waveforms trimmed to the input length
// and the masked magnitudes used for cross-window alignment.
struct SeparatedChunk {
  std::vector<dsp::Waveform> waves;
  Tensor<double> masked_mags;  // S x T x F
};

template <class S>
SeparatedChunk separate_chunk(const conformer::SSModel<S>& model, const dsp::Waveform& audio,
                              int frame_length, int hop_length) {
  const auto spec = dsp::stft(audio, frame_length, hop_length);
  const Tensor<double> mag = dsp::magnitude(spec);
  Tensor<S> mag_s = mag.template cast<S>();
  Tensor<S> masks =
      model.forward(mag_s, Mode::kEval, BatchClass::kUnspecified, nullptr, nullptr, nullptr);

  dsp::MaskSet mask_set;
  mask_set.masks = masks.template cast<double>();
  const auto parts = dsp::apply_mask(spec, mask_set);

  SeparatedChunk chunk;
  const int64_t num_src = mask_set.num_channels();
  chunk.masked_mags = Tensor<double>({num_src, spec.num_frames, spec.num_bins});
  for (int64_t s = 0; s < num_src; ++s) {
    for (int64_t t = 0; t < spec.num_frames; ++t) {
      for (int64_t f = 0; f < spec.num_bins; ++f) {
        chunk.masked_mags(s, t, f) = std::abs(parts[static_cast<size_t>(s)].at(t, f));
      }
    }
  }
  chunk.waves.resize(static_cast<size_t>(num_src));
  for (int64_t s = 0; s < num_src; ++s) {
    dsp::Waveform w = dsp::istft(parts[static_cast<size_t>(s)]);
    w.samples.resize(audio.samples.size(), 0.0);
    chunk.waves[static_cast<size_t>(s)] = std::move(w);
  }
  return chunk;
}

// Whole-utterance separation without windowing.
template <class S>
std::vector<dsp::Waveform> separate_utterance(const conformer::SSModel<S>& model,
                                              const dsp::Waveform& audio, int frame_length,
                                              int hop_length) {
  return separate_chunk(model, audio, frame_length, hop_length).waves;
}

// Continuous separation of long audio: sliding-window inference, sequential
// left-to-right speaker alignment on the overlap regions, crossfade
// stitching. Output length equals the input length exactly.
template <class S>
std::vector<dsp::Waveform> separate_long(const conformer::SSModel<S>& model,
                                         const dsp::Waveform& audio, int frame_length,
                                         int hop_length, double window_seconds = 2.4,
                                         double hop_seconds = 0.8) {
  const int64_t window_samples =
      static_cast<int64_t>(std::llround(window_seconds * audio.sample_rate));
  const int64_t hop_samples =
      static_cast<int64_t>(std::llround(hop_seconds * audio.sample_rate));
  const int64_t total = static_cast<int64_t>(audio.samples.size());
  const WindowPlan plan = plan_windows(total, window_samples, hop_samples);
  const int num_src = model.config().num_speakers;

  // frames of the STFT overlapping between consecutive windows
  const int64_t frame_t0 = (hop_samples + hop_length - 1) / hop_length;

  std::vector<std::vector<dsp::Waveform>> aligned(plan.offsets.size());
  Tensor<double> prev_mags;

  for (size_t k = 0; k < plan.offsets.size(); ++k) {
    const int64_t offset = plan.offsets[k];
    dsp::Waveform window;
    window.sample_rate = audio.sample_rate;
    window.samples.assign(static_cast<size_t>(window_samples), 0.0);
    for (int64_t i = 0; i < window_samples && offset + i < total; ++i) {
      window.samples[static_cast<size_t>(i)] = audio.samples[static_cast<size_t>(offset + i)];
    }

    SeparatedChunk chunk = separate_chunk(model, window, frame_length, hop_length);
    const int64_t t_frames = chunk.masked_mags.dim(1);
    const int64_t f_bins = chunk.masked_mags.dim(2);
    const int64_t t_overlap = t_frames - frame_t0;

    std::vector<int> perm(static_cast<size_t>(num_src));
    std::iota(perm.begin(), perm.end(), 0);
    if (k > 0 && t_overlap > 0) {
      Tensor<double> prev_ov({num_src, t_overlap, f_bins});
      Tensor<double> cur_ov({num_src, t_overlap, f_bins});
      for (int64_t s = 0; s < num_src; ++s) {
        for (int64_t t = 0; t < t_overlap; ++t) {
          for (int64_t f = 0; f < f_bins; ++f) {
            prev_ov(s, t, f) = prev_mags(s, frame_t0 + t, f);
            cur_ov(s, t, f) = chunk.masked_mags(s, t, f);
          }
        }
      }
      perm = align_permutation(prev_ov, cur_ov);
    }

    aligned[k].resize(static_cast<size_t>(num_src));
    Tensor<double> out_mags({num_src, t_frames, f_bins});
    for (int64_t s = 0; s < num_src; ++s) {
      const int src = perm[static_cast<size_t>(s)];
      aligned[k][static_cast<size_t>(s)] = std::move(chunk.waves[static_cast<size_t>(src)]);
      for (int64_t t = 0; t < t_frames; ++t) {
        for (int64_t f = 0; f < f_bins; ++f) {
          out_mags(s, t, f) = chunk.masked_mags(src, t, f);
        }
      }
    }
    prev_mags = std::move(out_mags);
  }

  return stitch(aligned, plan);
}

}  // namespace moesep::css
