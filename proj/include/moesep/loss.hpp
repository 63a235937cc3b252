// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moesep/dsp.hpp"
#include "moesep/moe.hpp"
#include "moesep/tensor.hpp"

namespace moesep::separation {

struct PermutationAssignment {
  std::vector<int> perm;               // output channel i estimates reference perm[i]
  std::vector<double> loss_per_perm;   // every candidate, lexicographic perm order
};

template <class S>
struct UpitResult {
  double loss = 0.0;
  PermutationAssignment assignment;
  Tensor<S> dmasks;  // populated when want_grad
};

namespace detail {

// Ascending-index products keep the loss bit-reproducible against
// straight-loop oracles.
template <class S>
Tensor<S> mel_apply(const Tensor<S>& mag, const Tensor<S>& weights) {
  Tensor<S> out({mag.dim(0), weights.dim(1)});
  for (int64_t t = 0; t < mag.dim(0); ++t) {
    for (int64_t b = 0; b < weights.dim(1); ++b) {
      S acc = S(0);
      for (int64_t f = 0; f < mag.dim(1); ++f) acc += mag(t, f) * weights(f, b);
      out(t, b) = acc;
    }
  }
  return out;
}

template <class S>
Tensor<S> mel_apply_transposed(const Tensor<S>& dmel, const Tensor<S>& weights) {
  Tensor<S> out({dmel.dim(0), weights.dim(0)});
  for (int64_t t = 0; t < dmel.dim(0); ++t) {
    for (int64_t f = 0; f < weights.dim(0); ++f) {
      S acc = S(0);
      for (int64_t b = 0; b < weights.dim(1); ++b) acc += dmel(t, b) * weights(f, b);
      out(t, f) = acc;
    }
  }
  return out;
}

}  // namespace detail

// Utterance-level permutation-invariant loss in the mel domain:
// min over permutations p of sum_i || Mel(M_i * |Y|) - Mel(|X_{p_i}|) ||_2^2.
// Gradient flows through the winning permutation only.
template <class S>
UpitResult<S> upit_loss(const Tensor<S>& masks, const Tensor<S>& mixture_mag,
                        const std::vector<Tensor<S>>& ref_mags,
                        const Tensor<S>& mel_weights, bool want_grad = false) {
  if (masks.rank() != 3) throw std::invalid_argument("upit_loss: masks must be S x T x F");
  const int64_t num_src = masks.dim(0);
  const int64_t t_len = masks.dim(1);
  const int64_t f_len = masks.dim(2);
  if (num_src > 6) {
    throw std::invalid_argument("upit_loss: more than 6 sources (factorial blow-up)");
  }
  if (static_cast<int64_t>(ref_mags.size()) != num_src) {
    throw std::invalid_argument("upit_loss: reference count mismatch");
  }
  if (mixture_mag.dim(0) != t_len || mixture_mag.dim(1) != f_len ||
      mel_weights.dim(0) != f_len) {
    throw std::invalid_argument("upit_loss: shape mismatch");
  }

  // masked mixture mel per output channel, reference mel per source
  std::vector<Tensor<S>> est_mel(static_cast<size_t>(num_src));
  std::vector<Tensor<S>> ref_mel(static_cast<size_t>(num_src));
  for (int64_t i = 0; i < num_src; ++i) {
    Tensor<S> m({t_len, f_len});
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t f = 0; f < f_len; ++f) m(t, f) = masks(i, t, f) * mixture_mag(t, f);
    }
    est_mel[static_cast<size_t>(i)] = detail::mel_apply(m, mel_weights);
    ref_mel[static_cast<size_t>(i)] =
        detail::mel_apply(ref_mags[static_cast<size_t>(i)], mel_weights);
  }

  // pairwise squared errors, then exhaustive search over permutations
  std::vector<std::vector<double>> cost(static_cast<size_t>(num_src),
                                        std::vector<double>(static_cast<size_t>(num_src)));
  for (int64_t i = 0; i < num_src; ++i) {
    for (int64_t j = 0; j < num_src; ++j) {
      double acc = 0.0;
      const Tensor<S>& e = est_mel[static_cast<size_t>(i)];
      const Tensor<S>& r = ref_mel[static_cast<size_t>(j)];
      for (int64_t k = 0; k < e.numel(); ++k) {
        const double d = static_cast<double>(e[k]) - static_cast<double>(r[k]);
        acc += d * d;
      }
      cost[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc;
    }
  }

  UpitResult<S> result;
  std::vector<int> perm(static_cast<size_t>(num_src));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_perm = perm;
  do {
    double total = 0.0;
    for (int64_t i = 0; i < num_src; ++i) {
      total += cost[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    result.assignment.loss_per_perm.push_back(total);
    if (total < best) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  result.loss = best;
  result.assignment.perm = best_perm;

  if (want_grad) {
    result.dmasks = Tensor<S>(masks.shape());
    for (int64_t i = 0; i < num_src; ++i) {
      const Tensor<S>& e = est_mel[static_cast<size_t>(i)];
      const Tensor<S>& r = ref_mel[static_cast<size_t>(best_perm[static_cast<size_t>(i)])];
      Tensor<S> dmel(e.shape());
      for (int64_t k = 0; k < e.numel(); ++k) dmel[k] = S(2) * (e[k] - r[k]);
      Tensor<S> dmag = detail::mel_apply_transposed(dmel, mel_weights);
      for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t f = 0; f < f_len; ++f) {
          result.dmasks(i, t, f) = dmag(t, f) * mixture_mag(t, f);
        }
      }
    }
  }
  return result;
}

// L = L_uPIT + L_MoE; the auxiliary term already carries alpha.
inline double combined_loss(double upit, const moe::LoadStats& stats) {
  return upit + moe::aux_loss(stats);
}

// Scale-invariant signal-to-noise ratio in dB, zero-mean convention.
inline double si_snr(const std::vector<double>& est, const std::vector<double>& ref) {
  if (est.size() != ref.size() || est.empty()) {
    throw std::invalid_argument("si_snr: length mismatch");
  }
  const double n = static_cast<double>(est.size());
  double mean_e = 0.0;
  double mean_r = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    mean_e += est[i];
    mean_r += ref[i];
  }
  mean_e /= n;
  mean_r /= n;

  double dot = 0.0;
  double ref_energy = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    const double e = est[i] - mean_e;
    const double r = ref[i] - mean_r;
    dot += e * r;
    ref_energy += r * r;
  }
  if (ref_energy <= 0.0) throw std::invalid_argument("si_snr: silent reference");
  const double scale = dot / ref_energy;

  double target_energy = 0.0;
  double error_energy = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    const double target = scale * (ref[i] - mean_r);
    const double err = (est[i] - mean_e) - target;
    target_energy += target * target;
    error_energy += err * err;
  }
  error_energy = std::max(error_energy, 1e-30);
  return 10.0 * std::log10(std::max(target_energy, 1e-30) / error_energy);
}

struct SeparationEval {
  double si_snr_improvement = 0.0;  // mean over channels under the best permutation
  std::vector<int> perm;
};

// Best-permutation SI-SNR improvement of separated channels over the raw
// mixture.
inline SeparationEval eval_separation(const std::vector<dsp::Waveform>& est,
                                      const std::vector<dsp::Waveform>& refs,
                                      const dsp::Waveform& mixture) {
  const size_t s = est.size();
  if (refs.size() != s || s == 0) throw std::invalid_argument("eval_separation: channel mismatch");
  std::vector<int> perm(s);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> best_perm = perm;
  do {
    double total = 0.0;
    for (size_t i = 0; i < s; ++i) {
      total += si_snr(est[i].samples, refs[static_cast<size_t>(perm[i])].samples);
    }
    if (total > best) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  SeparationEval out;
  out.perm = best_perm;
  double improvement = 0.0;
  for (size_t i = 0; i < s; ++i) {
    const auto& ref = refs[static_cast<size_t>(best_perm[i])].samples;
    improvement += si_snr(est[i].samples, ref) - si_snr(mixture.samples, ref);
  }
  out.si_snr_improvement = improvement / static_cast<double>(s);
  return out;
}

}  // namespace moesep::separation
