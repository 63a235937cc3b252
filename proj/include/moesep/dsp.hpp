// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "moesep/tensor.hpp"

namespace moesep::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

inline bool is_finite(const Waveform& w) {
  for (double s : w.samples) {
    if (!std::isfinite(s)) return false;
  }
  return true;
}

enum class WindowKind { kHann };

// Complex STFT, T frames by F = frame_length/2 + 1 bins, row-major.
struct Spectrogram {
  std::vector<std::complex<double>> frames;
  int64_t num_frames = 0;
  int64_t num_bins = 0;
  int frame_length = 0;
  int hop_length = 0;
  WindowKind window = WindowKind::kHann;
  int sample_rate = 16000;

  std::complex<double>& at(int64_t t, int64_t f) {
    return frames[static_cast<size_t>(t * num_bins + f)];
  }
  const std::complex<double>& at(int64_t t, int64_t f) const {
    return frames[static_cast<size_t>(t * num_bins + f)];
  }
};

namespace detail {

// Periodic Hann; satisfies constant overlap-add at hop = N/2 and N/4.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
  }
  return w;
}

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey; `inverse` also divides by N.
inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) *
                       (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

inline void dft_naive(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * std::numbers::pi *
                         static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  a = std::move(out);
}

inline void fft(std::vector<std::complex<double>>& a, bool inverse) {
  if (is_power_of_two(static_cast<int>(a.size()))) {
    fft_radix2(a, inverse);
  } else {
    dft_naive(a, inverse);
  }
}

}  // namespace detail

// Frames start at t*hop for t = 0..T-1 with T = 1 + floor((len - frame)/hop);
// inputs shorter than one frame produce a single zero-padded frame. Any
// residual shorter than one hop past the last frame is not analyzed (the
// roundtrip contract covers analyzed samples).
inline Spectrogram stft(const Waveform& w, int frame_length, int hop_length) {
  if (w.samples.empty()) throw std::invalid_argument("stft: empty input");
  if (!is_finite(w)) throw std::invalid_argument("stft: non-finite input");
  if (frame_length <= 0 || hop_length <= 0) {
    throw std::invalid_argument("stft: frame and hop must be positive");
  }
  if (hop_length * 2 != frame_length && hop_length * 4 != frame_length) {
    throw std::invalid_argument(
        "stft: hop must be frame/2 or frame/4 for constant overlap-add");
  }

  const int64_t len = static_cast<int64_t>(w.samples.size());
  const int64_t num_frames =
      len >= frame_length ? 1 + (len - frame_length) / hop_length : 1;

  Spectrogram spec;
  spec.frame_length = frame_length;
  spec.hop_length = hop_length;
  spec.sample_rate = w.sample_rate;
  spec.num_frames = num_frames;
  spec.num_bins = frame_length / 2 + 1;
  spec.frames.assign(static_cast<size_t>(num_frames * spec.num_bins), {0.0, 0.0});

  const std::vector<double> win = detail::hann_window(frame_length);
  std::vector<std::complex<double>> buf(static_cast<size_t>(frame_length));
  for (int64_t t = 0; t < num_frames; ++t) {
    const int64_t start = t * hop_length;
    for (int i = 0; i < frame_length; ++i) {
      const int64_t idx = start + i;
      const double s = idx < len ? w.samples[static_cast<size_t>(idx)] : 0.0;
      buf[static_cast<size_t>(i)] = {s * win[static_cast<size_t>(i)], 0.0};
    }
    detail::fft(buf, false);
    for (int64_t f = 0; f < spec.num_bins; ++f) {
      spec.at(t, f) = buf[static_cast<size_t>(f)];
    }
  }
  return spec;
}

// Weighted overlap-add with window-square normalization. Output length is
// T*hop + (frame - hop); callers trim to the original length. The very
// first sample sits at the analysis window's zero and tapers to zero.
inline Waveform istft(const Spectrogram& spec) {
  if (spec.num_frames < 1 || spec.num_bins != spec.frame_length / 2 + 1) {
    throw std::invalid_argument("istft: malformed spectrogram");
  }
  const int n = spec.frame_length;
  const int64_t out_len = (spec.num_frames - 1) * spec.hop_length + n;

  std::vector<double> num(static_cast<size_t>(out_len), 0.0);
  std::vector<double> den(static_cast<size_t>(out_len), 0.0);
  const std::vector<double> win = detail::hann_window(n);

  std::vector<std::complex<double>> buf(static_cast<size_t>(n));
  for (int64_t t = 0; t < spec.num_frames; ++t) {
    for (int64_t f = 0; f < spec.num_bins; ++f) {
      buf[static_cast<size_t>(f)] = spec.at(t, f);
    }
    for (int64_t f = spec.num_bins; f < n; ++f) {
      buf[static_cast<size_t>(f)] = std::conj(spec.at(t, n - f));
    }
    detail::fft(buf, true);
    const int64_t start = t * spec.hop_length;
    for (int i = 0; i < n; ++i) {
      const double wv = win[static_cast<size_t>(i)];
      num[static_cast<size_t>(start + i)] += wv * buf[static_cast<size_t>(i)].real();
      den[static_cast<size_t>(start + i)] += wv * wv;
    }
  }

  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t i = 0; i < out_len; ++i) {
    const double d = den[static_cast<size_t>(i)];
    out.samples[static_cast<size_t>(i)] =
        d > 1e-12 ? num[static_cast<size_t>(i)] / d : 0.0;
  }
  return out;
}

inline Tensor<double> magnitude(const Spectrogram& spec) {
  Tensor<double> mag({spec.num_frames, spec.num_bins});
  for (int64_t t = 0; t < spec.num_frames; ++t) {
    for (int64_t f = 0; f < spec.num_bins; ++f) {
      mag(t, f) = std::abs(spec.at(t, f));
    }
  }
  return mag;
}

// S real-valued masks in [0,1], shape S x T x F.
struct MaskSet {
  Tensor<double> masks;

  int64_t num_channels() const { return masks.dim(0); }
  int64_t num_frames() const { return masks.dim(1); }
  int64_t num_bins() const { return masks.dim(2); }
};

inline std::vector<Spectrogram> apply_mask(const Spectrogram& spec, const MaskSet& m) {
  if (m.masks.rank() != 3 || m.num_frames() != spec.num_frames ||
      m.num_bins() != spec.num_bins) {
    throw std::invalid_argument("apply_mask: mask shape does not match spectrogram");
  }
  std::vector<Spectrogram> out(static_cast<size_t>(m.num_channels()), spec);
  for (int64_t s = 0; s < m.num_channels(); ++s) {
    Spectrogram& ch = out[static_cast<size_t>(s)];
    for (int64_t t = 0; t < spec.num_frames; ++t) {
      for (int64_t f = 0; f < spec.num_bins; ++f) {
        ch.at(t, f) = spec.at(t, f) * m.masks(s, t, f);
      }
    }
  }
  return out;
}

struct MelFilterbank {
  Tensor<double> weights;  // F x B, triangular filters on the mel scale
  double f_min = 0.0;
  double f_max = 8000.0;
  int sample_rate = 16000;

  int64_t num_bins() const { return weights.dim(0); }
  int64_t num_bands() const { return weights.dim(1); }
};

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

inline MelFilterbank make_mel_filterbank(int64_t num_bins, int num_bands,
                                         int sample_rate, double f_min,
                                         double f_max) {
  if (num_bins < 2 || num_bands < 1) {
    throw std::invalid_argument("make_mel_filterbank: bad shape");
  }
  if (f_max <= f_min || f_max > sample_rate / 2.0 + 1e-9) {
    throw std::invalid_argument("make_mel_filterbank: bad frequency range");
  }

  MelFilterbank fb;
  fb.f_min = f_min;
  fb.f_max = f_max;
  fb.sample_rate = sample_rate;
  fb.weights = Tensor<double>({num_bins, static_cast<int64_t>(num_bands)});

  const double mel_lo = detail::hz_to_mel(f_min);
  const double mel_hi = detail::hz_to_mel(f_max);
  std::vector<double> edges(static_cast<size_t>(num_bands) + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(num_bands + 1);
    edges[i] = detail::mel_to_hz(mel);
  }

  const double bin_hz = sample_rate / 2.0 / static_cast<double>(num_bins - 1);
  for (int64_t k = 0; k < num_bins; ++k) {
    const double f = k * bin_hz;
    for (int b = 0; b < num_bands; ++b) {
      const double lo = edges[static_cast<size_t>(b)];
      const double mid = edges[static_cast<size_t>(b) + 1];
      const double hi = edges[static_cast<size_t>(b) + 2];
      double w = 0.0;
      if (f > lo && f < hi) {
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
      fb.weights(k, b) = std::max(0.0, w);
    }
  }
  return fb;
}

// T x F magnitudes -> T x B mel energies.
inline Tensor<double> mel_transform(const Tensor<double>& mag,
                                    const MelFilterbank& fb) {
  if (mag.rank() != 2 || mag.dim(1) != fb.num_bins()) {
    throw std::invalid_argument("mel_transform: bin count mismatch");
  }
  return matmul(mag, fb.weights);
}

}  // namespace moesep::dsp
