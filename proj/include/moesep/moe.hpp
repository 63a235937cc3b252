// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "moesep/common.hpp"
#include "moesep/nn.hpp"
#include "moesep/tensor.hpp"

namespace moesep::moe {

// Per-expert dispatch fraction f and mean router probability P for one
// routed token set. f counts argmax decisions before capacity truncation.
struct LoadStats {
  std::vector<double> f;
  std::vector<double> P;
  std::vector<int64_t> kept;     // tokens processed per expert
  std::vector<int64_t> dropped;  // tokens lost to the capacity limit per expert
  double alpha = 0.01;
  int64_t token_count = 0;

  int64_t num_experts() const { return static_cast<int64_t>(f.size()); }
};

// L_MoE = alpha * N * sum_i f_i P_i
inline double aux_loss(const LoadStats& stats) {
  double dot = 0.0;
  for (size_t i = 0; i < stats.f.size(); ++i) dot += stats.f[i] * stats.P[i];
  return stats.alpha * static_cast<double>(stats.f.size()) * dot;
}

// Token-count-weighted mean of per-layer stats, for reporting.
inline LoadStats aggregate(const std::vector<LoadStats>& all) {
  if (all.empty()) return {};
  LoadStats out;
  const size_t n = all.front().f.size();
  out.f.assign(n, 0.0);
  out.P.assign(n, 0.0);
  out.kept.assign(n, 0);
  out.dropped.assign(n, 0);
  out.alpha = all.front().alpha;
  for (const auto& s : all) {
    out.token_count += s.token_count;
    for (size_t i = 0; i < n; ++i) {
      out.f[i] += s.f[i] * static_cast<double>(s.token_count);
      out.P[i] += s.P[i] * static_cast<double>(s.token_count);
      out.kept[i] += s.kept[i];
      out.dropped[i] += s.dropped[i];
    }
  }
  if (out.token_count > 0) {
    for (size_t i = 0; i < n; ++i) {
      out.f[i] /= static_cast<double>(out.token_count);
      out.P[i] /= static_cast<double>(out.token_count);
    }
  }
  return out;
}

// Per-token routing outcome of a gate.
template <class S>
struct RoutingDecision {
  std::vector<int> expert_index;  // argmax of each probability row
  std::vector<S> gate_prob;       // probability of the chosen expert
  std::vector<uint8_t> dropped;   // set by the capacity limit
  Tensor<S> probs;                // tokens x N, rows sum to 1
};

// Softmax routing over a D x N router matrix; argmax ties break toward the
// lowest expert index. Jitter, when requested, multiplies the gate input
// elementwise by (1 + u), u ~ Uniform(-jitter, +jitter); the jittered input
// is written back to `gate_input`.
template <class S>
RoutingDecision<S> gate(Tensor<S>& gate_input, const Tensor<S>& router,
                        double jitter, Mode mode, Rng* rng) {
  if (gate_input.dim(1) != router.dim(0)) {
    throw std::invalid_argument("gate: input dim does not match router");
  }
  if (mode == Mode::kTrain && jitter > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("gate: jitter needs an rng");
    std::uniform_real_distribution<double> u(-jitter, jitter);
    for (int64_t i = 0; i < gate_input.numel(); ++i) {
      gate_input[i] *= static_cast<S>(1.0 + u(*rng));
    }
  }

  RoutingDecision<S> decision;
  decision.probs = nn::softmax_rows(matmul(gate_input, router));
  const int64_t tokens = decision.probs.dim(0);
  const int64_t n = decision.probs.dim(1);
  decision.expert_index.resize(static_cast<size_t>(tokens));
  decision.gate_prob.resize(static_cast<size_t>(tokens));
  decision.dropped.assign(static_cast<size_t>(tokens), 0);
  for (int64_t t = 0; t < tokens; ++t) {
    const S* row = decision.probs.row(t);
    int best = 0;
    for (int64_t j = 1; j < n; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    decision.expert_index[static_cast<size_t>(t)] = best;
    decision.gate_prob[static_cast<size_t>(t)] = row[best];
  }
  return decision;
}

inline int64_t expert_capacity(double capacity_factor, int64_t tokens, int64_t experts) {
  if (capacity_factor <= 0.0) {
    throw std::invalid_argument("expert_capacity: capacity_factor must be positive");
  }
  return static_cast<int64_t>(
      std::ceil(capacity_factor * static_cast<double>(tokens) / static_cast<double>(experts)));
}

// Marks tokens beyond each expert's capacity as dropped, in token order.
template <class S>
void apply_capacity(RoutingDecision<S>& decision, double capacity_factor, int64_t experts) {
  const int64_t tokens = static_cast<int64_t>(decision.expert_index.size());
  const int64_t capacity = expert_capacity(capacity_factor, tokens, experts);
  std::vector<int64_t> counts(static_cast<size_t>(experts), 0);
  for (int64_t t = 0; t < tokens; ++t) {
    const int e = decision.expert_index[static_cast<size_t>(t)];
    if (counts[static_cast<size_t>(e)] >= capacity) {
      decision.dropped[static_cast<size_t>(t)] = 1;
    } else {
      ++counts[static_cast<size_t>(e)];
    }
  }
}

// ---------------------------------------------------------------------------
// Expert FFN: linear -> ReLU -> dropout -> linear
// ---------------------------------------------------------------------------
template <class S>
class FfnExpert {
 public:
  struct Ctx {
    typename nn::Linear<S>::Ctx lin1;
    typename nn::Activation<S>::Ctx act;
    typename nn::Dropout<S>::Ctx drop;
    typename nn::Linear<S>::Ctx lin2;
  };

  FfnExpert() = default;
  FfnExpert(nn::ParameterStore<S>& store, const std::string& prefix, int64_t dim,
            int64_t hidden, double dropout_p, Rng& rng)
      : lin1(store, prefix + ".lin1", dim, hidden, rng),
        act(nn::ActKind::kRelu),
        drop(dropout_p),
        lin2(store, prefix + ".lin2", hidden, dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng* rng, Ctx* ctx) const {
    Tensor<S> h = lin1.forward(x, ctx ? &ctx->lin1 : nullptr);
    h = act.forward(h, ctx ? &ctx->act : nullptr);
    h = drop.forward(h, mode, rng, ctx ? &ctx->drop : nullptr);
    return lin2.forward(h, ctx ? &ctx->lin2 : nullptr);
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    Tensor<S> g = lin2.backward(ctx.lin2, gout);
    g = drop.backward(ctx.drop, g);
    g = act.backward(ctx.act, g);
    return lin1.backward(ctx.lin1, g);
  }

  // Multiply-accumulate count per token (matmul cost only).
  int64_t macs_per_token() const { return 2 * lin1.in_dim * lin1.out_dim; }

  nn::Linear<S> lin1;
  nn::Activation<S> act;
  nn::Dropout<S> drop;
  nn::Linear<S> lin2;
};

enum class GateId { kSingle, kA, kB };

struct MoeOptions {
  int64_t experts = 4;
  double capacity_factor = 1.5;
  double jitter = 0.01;
  double expert_dropout = 0.1;
  double alpha = 0.01;
  bool multi_gate = false;
};

// ---------------------------------------------------------------------------
// Sparsely-gated expert layer with top-1 switch routing. With multi_gate,
// gate A routes overlapped-speech minibatches and gate B non-overlapped
// ones during training; inference always routes through gate B.
// ---------------------------------------------------------------------------
template <class S>
class MoeLayer {
 public:
  struct Ctx {
    Tensor<S> gate_input;          // after jitter
    Tensor<S> jitter_mult;         // empty when no jitter was applied
    RoutingDecision<S> decision;
    Tensor<S> expert_out;          // tokens x D, before gate_prob scaling
    std::vector<std::vector<int64_t>> rows_per_expert;
    std::vector<typename FfnExpert<S>::Ctx> expert_ctx;
    std::vector<double> f;
    GateId used_gate = GateId::kSingle;
  };

  MoeLayer() = default;
  MoeLayer(nn::ParameterStore<S>& store, const std::string& prefix, int64_t dim,
           int64_t hidden, const MoeOptions& opts, Rng& rng)
      : opts_(opts), dim_(dim) {
    if (opts.experts < 1) throw std::invalid_argument("MoeLayer: experts must be >= 1");
    experts_.reserve(static_cast<size_t>(opts.experts));
    for (int64_t e = 0; e < opts.experts; ++e) {
      experts_.emplace_back(store, prefix + ".expert" + std::to_string(e), dim, hidden,
                            opts.expert_dropout, rng);
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(dim));
    if (opts.multi_gate) {
      router_a_ = &store.add(prefix + ".gate_a.router",
                             Tensor<S>::uniform({dim, opts.experts}, rng, -bound, bound));
      router_b_ = &store.add(prefix + ".gate_b.router",
                             Tensor<S>::uniform({dim, opts.experts}, rng, -bound, bound));
    } else {
      router_a_ = &store.add(prefix + ".gate.router",
                             Tensor<S>::uniform({dim, opts.experts}, rng, -bound, bound));
    }
  }

  int64_t num_experts() const { return opts_.experts; }
  bool multi_gate() const { return opts_.multi_gate; }
  nn::Param<S>* router(GateId id) const {
    return id == GateId::kB ? router_b_ : router_a_;
  }

  GateId select_gate(Mode mode, BatchClass batch_class) const {
    if (!opts_.multi_gate) return GateId::kSingle;
    if (mode == Mode::kEval) return GateId::kB;  // non-overlap gate at inference
    switch (batch_class) {
      case BatchClass::kOverlap: return GateId::kA;
      case BatchClass::kNonOverlap: return GateId::kB;
      case BatchClass::kUnspecified:
        throw std::invalid_argument(
            "MoeLayer: multi-gate training requires the minibatch overlap class");
    }
    throw std::logic_error("MoeLayer: bad batch class");
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode, BatchClass batch_class, Rng* rng,
                    Ctx* ctx, LoadStats* stats) const {
    const int64_t tokens = x.dim(0);
    const int64_t n = opts_.experts;
    const GateId gate_id = select_gate(mode, batch_class);
    const nn::Param<S>* route_param = router(gate_id);

    Tensor<S> gate_in = x;
    Tensor<S> jitter_mult;
    if (mode == Mode::kTrain && opts_.jitter > 0.0) {
      if (rng == nullptr) throw std::invalid_argument("MoeLayer: train mode needs an rng");
      jitter_mult = Tensor<S>(x.shape());
      std::uniform_real_distribution<double> u(-opts_.jitter, opts_.jitter);
      for (int64_t i = 0; i < gate_in.numel(); ++i) {
        jitter_mult[i] = static_cast<S>(1.0 + u(*rng));
        gate_in[i] *= jitter_mult[i];
      }
    }

    RoutingDecision<S> decision = gate(gate_in, route_param->value, 0.0, Mode::kEval, nullptr);
    apply_capacity(decision, opts_.capacity_factor, n);

    // dispatch fractions over pre-capacity argmax decisions
    std::vector<double> f(static_cast<size_t>(n), 0.0);
    for (int e : decision.expert_index) f[static_cast<size_t>(e)] += 1.0;
    for (auto& v : f) v /= static_cast<double>(tokens);

    std::vector<std::vector<int64_t>> rows(static_cast<size_t>(n));
    for (int64_t t = 0; t < tokens; ++t) {
      if (!decision.dropped[static_cast<size_t>(t)]) {
        rows[static_cast<size_t>(decision.expert_index[static_cast<size_t>(t)])].push_back(t);
      }
    }

    Tensor<S> unscaled({tokens, dim_});
    std::vector<typename FfnExpert<S>::Ctx> expert_ctx;
    if (ctx) expert_ctx.resize(static_cast<size_t>(n));
    for (int64_t e = 0; e < n; ++e) {
      const auto& r = rows[static_cast<size_t>(e)];
      if (r.empty()) continue;
      Tensor<S> xe({static_cast<int64_t>(r.size()), dim_});
      for (size_t i = 0; i < r.size(); ++i) {
        std::copy(x.row(r[i]), x.row(r[i]) + dim_, xe.row(static_cast<int64_t>(i)));
      }
      Tensor<S> ye = experts_[static_cast<size_t>(e)].forward(
          xe, mode, rng, ctx ? &expert_ctx[static_cast<size_t>(e)] : nullptr);
      for (size_t i = 0; i < r.size(); ++i) {
        std::copy(ye.row(static_cast<int64_t>(i)), ye.row(static_cast<int64_t>(i)) + dim_,
                  unscaled.row(r[i]));
      }
    }

    Tensor<S> y({tokens, dim_});
    for (int64_t t = 0; t < tokens; ++t) {
      if (decision.dropped[static_cast<size_t>(t)]) continue;  // residual carries the token
      const S p = decision.gate_prob[static_cast<size_t>(t)];
      const S* u = unscaled.row(t);
      S* yr = y.row(t);
      for (int64_t j = 0; j < dim_; ++j) yr[j] = p * u[j];
    }

    if (stats) {
      stats->f = f;
      stats->P.assign(static_cast<size_t>(n), 0.0);
      for (int64_t t = 0; t < tokens; ++t) {
        const S* row = decision.probs.row(t);
        for (int64_t j = 0; j < n; ++j) {
          stats->P[static_cast<size_t>(j)] += static_cast<double>(row[j]);
        }
      }
      for (auto& v : stats->P) v /= static_cast<double>(tokens);
      stats->kept.assign(static_cast<size_t>(n), 0);
      stats->dropped.assign(static_cast<size_t>(n), 0);
      for (int64_t t = 0; t < tokens; ++t) {
        const size_t e = static_cast<size_t>(decision.expert_index[static_cast<size_t>(t)]);
        if (decision.dropped[static_cast<size_t>(t)]) {
          ++stats->dropped[e];
        } else {
          ++stats->kept[e];
        }
      }
      stats->alpha = opts_.alpha;
      stats->token_count = tokens;
    }

    if (ctx) {
      ctx->gate_input = std::move(gate_in);
      ctx->jitter_mult = std::move(jitter_mult);
      ctx->decision = std::move(decision);
      ctx->expert_out = std::move(unscaled);
      ctx->rows_per_expert = std::move(rows);
      ctx->expert_ctx = std::move(expert_ctx);
      ctx->f = std::move(f);
      ctx->used_gate = gate_id;
    }
    return y;
  }

  // Main-path gradient plus, when aux_grad_scale is nonzero, the gradient of
  // aux_grad_scale * aux_loss through the router probabilities (f is treated
  // as a constant). The router learns through the gate_prob scaling and the
  // auxiliary term only.
  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout, double aux_grad_scale) const {
    const int64_t tokens = gout.dim(0);
    const int64_t n = opts_.experts;
    nn::Param<S>* route_param = router(ctx.used_gate);

    Tensor<S> gin({tokens, dim_});
    Tensor<S> dprobs({tokens, n});

    // through the gate_prob scaling: y_t = p_t * E(x_t)
    Tensor<S> dunscaled({tokens, dim_});
    for (int64_t t = 0; t < tokens; ++t) {
      if (ctx.decision.dropped[static_cast<size_t>(t)]) continue;
      const S p = ctx.decision.gate_prob[static_cast<size_t>(t)];
      const S* g = gout.row(t);
      const S* u = ctx.expert_out.row(t);
      S* du = dunscaled.row(t);
      S dp = S(0);
      for (int64_t j = 0; j < dim_; ++j) {
        du[j] = g[j] * p;
        dp += g[j] * u[j];
      }
      dprobs(t, ctx.decision.expert_index[static_cast<size_t>(t)]) = dp;
    }

    // expert parameter and input gradients
    for (int64_t e = 0; e < n; ++e) {
      const auto& r = ctx.rows_per_expert[static_cast<size_t>(e)];
      if (r.empty()) continue;
      Tensor<S> ge({static_cast<int64_t>(r.size()), dim_});
      for (size_t i = 0; i < r.size(); ++i) {
        std::copy(dunscaled.row(r[i]), dunscaled.row(r[i]) + dim_,
                  ge.row(static_cast<int64_t>(i)));
      }
      Tensor<S> gxe =
          experts_[static_cast<size_t>(e)].backward(ctx.expert_ctx[static_cast<size_t>(e)], ge);
      for (size_t i = 0; i < r.size(); ++i) {
        S* dst = gin.row(r[i]);
        const S* src = gxe.row(static_cast<int64_t>(i));
        for (int64_t j = 0; j < dim_; ++j) dst[j] += src[j];
      }
    }

    // auxiliary load loss: dL/dP_i = alpha * N * f_i, P_i = mean_t probs[t,i]
    if (aux_grad_scale != 0.0) {
      for (int64_t j = 0; j < n; ++j) {
        const S d = static_cast<S>(aux_grad_scale * opts_.alpha * static_cast<double>(n) *
                                   ctx.f[static_cast<size_t>(j)] /
                                   static_cast<double>(tokens));
        for (int64_t t = 0; t < tokens; ++t) dprobs(t, j) += d;
      }
    }

    Tensor<S> dlogits = nn::softmax_rows_backward(ctx.decision.probs, dprobs);
    add_matmul_tn(route_param->grad, ctx.gate_input, dlogits);
    Tensor<S> dgate_in = matmul_nt(dlogits, route_param->value);
    if (ctx.jitter_mult.numel() > 0) {
      for (int64_t i = 0; i < dgate_in.numel(); ++i) dgate_in[i] *= ctx.jitter_mult[i];
    }
    gin += dgate_in;
    return gin;
  }

  // Per-token matmul cost: one expert FFN plus the router product.
  int64_t macs_per_token() const {
    return experts_.front().macs_per_token() + dim_ * opts_.experts;
  }

  const MoeOptions& options() const { return opts_; }
  const std::vector<FfnExpert<S>>& experts() const { return experts_; }

 private:
  MoeOptions opts_;
  int64_t dim_ = 0;
  std::vector<FfnExpert<S>> experts_;
  nn::Param<S>* router_a_ = nullptr;
  nn::Param<S>* router_b_ = nullptr;
};

}  // namespace moesep::moe
