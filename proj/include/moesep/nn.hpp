// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "moesep/common.hpp"
#include "moesep/tensor.hpp"

namespace moesep::nn {

template <class S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;
};

// Named parameters with per-parameter gradient accumulators. Layers hold
// stable pointers into the store; one training step owns the store
// exclusively, eval-mode forwards only read `value`.
template <class S>
class ParameterStore {
 public:
  Param<S>& add(const std::string& name, Tensor<S> init) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
    it->second.value = std::move(init);
    it->second.grad = Tensor<S>(it->second.value.shape());
    return it->second;
  }

  Param<S>* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  const Param<S>* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }

  void zero_grads() {
    for (auto& [name, p] : params_) p.grad.fill(S(0));
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.numel();
    return n;
  }

  size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param<S>> params_;
};

// Copies values for every parameter of `dst` whose (mapped) name exists in
// `src`. `map_name` translates dst names to src names.
template <class S, class NameMap>
void copy_parameters(ParameterStore<S>& dst, const ParameterStore<S>& src,
                     NameMap map_name) {
  for (auto& [name, p] : dst) {
    const Param<S>* sp = src.find(map_name(name));
    if (sp == nullptr) continue;
    if (!sp->value.same_shape(p.value)) {
      throw std::invalid_argument("copy_parameters: shape mismatch for " + name);
    }
    p.value = sp->value;
  }
}

namespace detail {

template <class S>
Tensor<S> init_linear_weight(int64_t in, int64_t out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  return Tensor<S>::uniform({in, out}, rng, -bound, bound);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear: y = x W + b
// ---------------------------------------------------------------------------
template <class S>
class Linear {
 public:
  struct Ctx {
    Tensor<S> input;
  };

  Linear() = default;
  Linear(ParameterStore<S>& store, const std::string& prefix, int64_t in,
         int64_t out, Rng& rng)
      : in_dim(in), out_dim(out) {
    weight = &store.add(prefix + ".weight", detail::init_linear_weight<S>(in, out, rng));
    bias = &store.add(prefix + ".bias", Tensor<S>({out}));
  }

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    if (x.dim(1) != in_dim) throw std::invalid_argument("Linear: input dim mismatch");
    Tensor<S> y = matmul(x, weight->value);
    for (int64_t t = 0; t < y.dim(0); ++t) {
      S* r = y.row(t);
      for (int64_t j = 0; j < out_dim; ++j) r[j] += bias->value[j];
    }
    if (ctx) ctx->input = x;
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    add_matmul_tn(weight->grad, ctx.input, gout);
    for (int64_t t = 0; t < gout.dim(0); ++t) {
      const S* r = gout.row(t);
      for (int64_t j = 0; j < out_dim; ++j) bias->grad[j] += r[j];
    }
    return matmul_nt(gout, weight->value);
  }

  int64_t in_dim = 0;
  int64_t out_dim = 0;
  Param<S>* weight = nullptr;
  Param<S>* bias = nullptr;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last dimension, with affine transform.
// ---------------------------------------------------------------------------
template <class S>
class LayerNorm {
 public:
  struct Ctx {
    Tensor<S> xhat;
    std::vector<S> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParameterStore<S>& store, const std::string& prefix, int64_t dim,
            double eps = 1e-5)
      : dim_(dim), eps_(eps) {
    gamma = &store.add(prefix + ".gamma", Tensor<S>::full({dim}, S(1)));
    beta = &store.add(prefix + ".beta", Tensor<S>({dim}));
  }

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    if (x.dim(1) != dim_) throw std::invalid_argument("LayerNorm: dim mismatch");
    const int64_t rows = x.dim(0);
    Tensor<S> y(x.shape());
    Tensor<S> xhat(x.shape());
    std::vector<S> inv(static_cast<size_t>(rows));
    for (int64_t t = 0; t < rows; ++t) {
      const S* r = x.row(t);
      S mean = S(0);
      for (int64_t j = 0; j < dim_; ++j) mean += r[j];
      mean /= static_cast<S>(dim_);
      S var = S(0);
      for (int64_t j = 0; j < dim_; ++j) {
        const S d = r[j] - mean;
        var += d * d;
      }
      var /= static_cast<S>(dim_);
      const S istd = S(1) / std::sqrt(var + static_cast<S>(eps_));
      inv[static_cast<size_t>(t)] = istd;
      S* xh = xhat.row(t);
      S* yr = y.row(t);
      for (int64_t j = 0; j < dim_; ++j) {
        xh[j] = (r[j] - mean) * istd;
        yr[j] = xh[j] * gamma->value[j] + beta->value[j];
      }
    }
    if (ctx) {
      ctx->xhat = std::move(xhat);
      ctx->inv_std = std::move(inv);
    }
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    const int64_t rows = gout.dim(0);
    Tensor<S> gin(gout.shape());
    for (int64_t t = 0; t < rows; ++t) {
      const S* g = gout.row(t);
      const S* xh = ctx.xhat.row(t);
      S mean_dxhat = S(0);
      S mean_dxhat_xhat = S(0);
      for (int64_t j = 0; j < dim_; ++j) {
        const S dxh = g[j] * gamma->value[j];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xh[j];
        gamma->grad[j] += g[j] * xh[j];
        beta->grad[j] += g[j];
      }
      mean_dxhat /= static_cast<S>(dim_);
      mean_dxhat_xhat /= static_cast<S>(dim_);
      const S istd = ctx.inv_std[static_cast<size_t>(t)];
      S* gi = gin.row(t);
      for (int64_t j = 0; j < dim_; ++j) {
        const S dxh = g[j] * gamma->value[j];
        gi[j] = istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
      }
    }
    return gin;
  }

  int64_t dim_ = 0;
  double eps_ = 1e-5;
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;
};

// ---------------------------------------------------------------------------
// Pointwise activations plus row-wise softmax.
// ---------------------------------------------------------------------------
enum class ActKind { kRelu, kSwish, kSigmoid, kSoftmax };

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  const int64_t rows = x.dim(0);
  const int64_t cols = x.dim(1);
  for (int64_t t = 0; t < rows; ++t) {
    const S* r = x.row(t);
    S* yr = y.row(t);
    S m = r[0];
    for (int64_t j = 1; j < cols; ++j) m = std::max(m, r[j]);
    S sum = S(0);
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(r[j] - m);
      sum += yr[j];
    }
    for (int64_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  return y;
}

// gin = y * (g - <g, y>) applied row-wise.
template <class S>
Tensor<S> softmax_rows_backward(const Tensor<S>& y, const Tensor<S>& gout) {
  Tensor<S> gin(y.shape());
  const int64_t rows = y.dim(0);
  const int64_t cols = y.dim(1);
  for (int64_t t = 0; t < rows; ++t) {
    const S* yr = y.row(t);
    const S* g = gout.row(t);
    S dot = S(0);
    for (int64_t j = 0; j < cols; ++j) dot += g[j] * yr[j];
    S* gi = gin.row(t);
    for (int64_t j = 0; j < cols; ++j) gi[j] = yr[j] * (g[j] - dot);
  }
  return gin;
}

template <class S>
class Activation {
 public:
  struct Ctx {
    Tensor<S> input;
    Tensor<S> output;
  };

  Activation() = default;
  explicit Activation(ActKind kind) : kind_(kind) {}

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    Tensor<S> y;
    switch (kind_) {
      case ActKind::kRelu: {
        y = x;
        for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(S(0), y[i]);
        break;
      }
      case ActKind::kSwish: {
        y = Tensor<S>(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
          const S sig = S(1) / (S(1) + std::exp(-x[i]));
          y[i] = x[i] * sig;
        }
        break;
      }
      case ActKind::kSigmoid: {
        y = Tensor<S>(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
          y[i] = S(1) / (S(1) + std::exp(-x[i]));
        }
        break;
      }
      case ActKind::kSoftmax: {
        y = softmax_rows(x);
        break;
      }
    }
    if (ctx) {
      ctx->input = x;
      ctx->output = y;
    }
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    switch (kind_) {
      case ActKind::kRelu: {
        Tensor<S> gin(gout.shape());
        for (int64_t i = 0; i < gout.numel(); ++i) {
          gin[i] = ctx.input[i] > S(0) ? gout[i] : S(0);
        }
        return gin;
      }
      case ActKind::kSwish: {
        Tensor<S> gin(gout.shape());
        for (int64_t i = 0; i < gout.numel(); ++i) {
          const S sig = S(1) / (S(1) + std::exp(-ctx.input[i]));
          gin[i] = gout[i] * (sig + ctx.input[i] * sig * (S(1) - sig));
        }
        return gin;
      }
      case ActKind::kSigmoid: {
        Tensor<S> gin(gout.shape());
        for (int64_t i = 0; i < gout.numel(); ++i) {
          const S y = ctx.output[i];
          gin[i] = gout[i] * y * (S(1) - y);
        }
        return gin;
      }
      case ActKind::kSoftmax:
        return softmax_rows_backward(ctx.output, gout);
    }
    throw std::logic_error("Activation: unknown kind");
  }

  ActKind kind_ = ActKind::kRelu;
};

// ---------------------------------------------------------------------------
// Dropout with inverted scaling; exact identity in eval mode or at p = 0.
// ---------------------------------------------------------------------------
template <class S>
class Dropout {
 public:
  struct Ctx {
    Tensor<S> mask;
    bool active = false;
  };

  Dropout() = default;
  explicit Dropout(double p) : p_(p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("Dropout: p must be in [0,1)");
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng* rng, Ctx* ctx) const {
    if (mode == Mode::kEval || p_ == 0.0) {
      if (ctx) ctx->active = false;
      return x;
    }
    if (rng == nullptr) throw std::invalid_argument("Dropout: train mode needs an rng");
    Tensor<S> mask(x.shape());
    std::bernoulli_distribution keep(1.0 - p_);
    const S scale = static_cast<S>(1.0 / (1.0 - p_));
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = keep(*rng) ? scale : S(0);
    Tensor<S> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask[i];
    if (ctx) {
      ctx->mask = std::move(mask);
      ctx->active = true;
      return y;
    }
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    if (!ctx.active) return gout;
    Tensor<S> gin(gout.shape());
    for (int64_t i = 0; i < gout.numel(); ++i) gin[i] = gout[i] * ctx.mask[i];
    return gin;
  }

  double p_ = 0.0;
};

// ---------------------------------------------------------------------------
// GLU over the last dimension: [a, b] -> a * sigmoid(b)
// ---------------------------------------------------------------------------
template <class S>
class Glu {
 public:
  struct Ctx {
    Tensor<S> a;
    Tensor<S> sig_b;
  };

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    if (x.dim(1) % 2 != 0) throw std::invalid_argument("Glu: odd input dim");
    const int64_t rows = x.dim(0);
    const int64_t half = x.dim(1) / 2;
    Tensor<S> a({rows, half});
    Tensor<S> sb({rows, half});
    Tensor<S> y({rows, half});
    for (int64_t t = 0; t < rows; ++t) {
      const S* r = x.row(t);
      for (int64_t j = 0; j < half; ++j) {
        a(t, j) = r[j];
        sb(t, j) = S(1) / (S(1) + std::exp(-r[half + j]));
        y(t, j) = a(t, j) * sb(t, j);
      }
    }
    if (ctx) {
      ctx->a = std::move(a);
      ctx->sig_b = std::move(sb);
    }
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    const int64_t rows = gout.dim(0);
    const int64_t half = gout.dim(1);
    Tensor<S> gin({rows, half * 2});
    for (int64_t t = 0; t < rows; ++t) {
      S* gi = gin.row(t);
      for (int64_t j = 0; j < half; ++j) {
        const S sb = ctx.sig_b(t, j);
        gi[j] = gout(t, j) * sb;
        gi[half + j] = gout(t, j) * ctx.a(t, j) * sb * (S(1) - sb);
      }
    }
    return gin;
  }
};

// ---------------------------------------------------------------------------
// Depthwise 1-D convolution along time, "same" zero padding, odd kernel.
// ---------------------------------------------------------------------------
template <class S>
class DepthwiseConv1d {
 public:
  struct Ctx {
    Tensor<S> input;
  };

  DepthwiseConv1d() = default;
  DepthwiseConv1d(ParameterStore<S>& store, const std::string& prefix,
                  int64_t channels, int kernel, Rng& rng)
      : channels_(channels), kernel_(kernel) {
    if (kernel % 2 == 0) throw std::invalid_argument("DepthwiseConv1d: kernel must be odd");
    const double bound = std::sqrt(1.0 / kernel);
    weight = &store.add(prefix + ".weight",
                        Tensor<S>::uniform({channels, kernel}, rng, -bound, bound));
    bias = &store.add(prefix + ".bias", Tensor<S>({channels}));
  }

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    if (x.dim(1) != channels_) throw std::invalid_argument("DepthwiseConv1d: dim mismatch");
    const int64_t rows = x.dim(0);
    const int pad = kernel_ / 2;
    Tensor<S> y(x.shape());
    for (int64_t t = 0; t < rows; ++t) {
      S* yr = y.row(t);
      for (int64_t d = 0; d < channels_; ++d) {
        S acc = bias->value[d];
        for (int k = 0; k < kernel_; ++k) {
          const int64_t src = t + k - pad;
          if (src < 0 || src >= rows) continue;
          acc += weight->value(d, k) * x(src, d);
        }
        yr[d] = acc;
      }
    }
    if (ctx) ctx->input = x;
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    const int64_t rows = gout.dim(0);
    const int pad = kernel_ / 2;
    Tensor<S> gin(gout.shape());
    for (int64_t t = 0; t < rows; ++t) {
      for (int64_t d = 0; d < channels_; ++d) {
        const S g = gout(t, d);
        bias->grad[d] += g;
        for (int k = 0; k < kernel_; ++k) {
          const int64_t src = t + k - pad;
          if (src < 0 || src >= rows) continue;
          weight->grad(d, k) += g * ctx.input(src, d);
          gin(src, d) += g * weight->value(d, k);
        }
      }
    }
    return gin;
  }

  int64_t channels_ = 0;
  int kernel_ = 0;
  Param<S>* weight = nullptr;
  Param<S>* bias = nullptr;
};

// ---------------------------------------------------------------------------
// Multi-head self-attention with a learned per-head relative position bias
// on the logits, clipped to +/- max_rel_distance. Full (non-causal)
// attention over the sequence.
// ---------------------------------------------------------------------------
template <class S>
class MhsaRelPos {
 public:
  struct Ctx {
    Tensor<S> input;
    Tensor<S> q, k, v;   // T x D each
    Tensor<S> attn;      // H x T x T
    Tensor<S> concat;    // T x D, heads concatenated before output proj
  };

  MhsaRelPos() = default;
  MhsaRelPos(ParameterStore<S>& store, const std::string& prefix, int64_t dim,
             int heads, int max_rel_distance, Rng& rng)
      : dim_(dim), heads_(heads), max_rel_(max_rel_distance) {
    if (dim % heads != 0) {
      throw std::invalid_argument("MhsaRelPos: dim must be divisible by heads");
    }
    head_dim_ = dim / heads;
    wq = &store.add(prefix + ".wq", detail::init_linear_weight<S>(dim, dim, rng));
    bq = &store.add(prefix + ".bq", Tensor<S>({dim}));
    wk = &store.add(prefix + ".wk", detail::init_linear_weight<S>(dim, dim, rng));
    bk = &store.add(prefix + ".bk", Tensor<S>({dim}));
    wv = &store.add(prefix + ".wv", detail::init_linear_weight<S>(dim, dim, rng));
    bv = &store.add(prefix + ".bv", Tensor<S>({dim}));
    wo = &store.add(prefix + ".wo", detail::init_linear_weight<S>(dim, dim, rng));
    bo = &store.add(prefix + ".bo", Tensor<S>({dim}));
    rel_bias = &store.add(
        prefix + ".rel_bias",
        Tensor<S>::uniform({heads, 2 * static_cast<int64_t>(max_rel_distance) + 1},
                           rng, -0.1, 0.1));
  }

  int rel_bucket(int64_t i, int64_t j) const {
    const int64_t d = std::clamp<int64_t>(j - i, -max_rel_, max_rel_);
    return static_cast<int>(d + max_rel_);
  }

  Tensor<S> forward(const Tensor<S>& x, Ctx* ctx) const {
    if (x.dim(1) != dim_) throw std::invalid_argument("MhsaRelPos: dim mismatch");
    const int64_t t_len = x.dim(0);
    Tensor<S> q = project(x, wq, bq);
    Tensor<S> k = project(x, wk, bk);
    Tensor<S> v = project(x, wv, bv);

    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim_)));
    Tensor<S> attn({heads_, t_len, t_len});
    Tensor<S> concat({t_len, dim_});

    Tensor<S> qh({t_len, head_dim_});
    Tensor<S> kh({t_len, head_dim_});
    Tensor<S> vh({t_len, head_dim_});
    for (int h = 0; h < heads_; ++h) {
      take_head(q, h, qh);
      take_head(k, h, kh);
      take_head(v, h, vh);
      Tensor<S> logits = matmul_nt(qh, kh);
      for (int64_t i = 0; i < t_len; ++i) {
        S* row = logits.row(i);
        for (int64_t j = 0; j < t_len; ++j) {
          row[j] = row[j] * scale + rel_bias->value(h, rel_bucket(i, j));
        }
      }
      Tensor<S> a = softmax_rows(logits);
      Tensor<S> ch = matmul(a, vh);
      put_head(ch, h, concat);
      std::copy(a.data(), a.data() + a.numel(), attn.row(h));
    }

    Tensor<S> y = matmul(concat, wo->value);
    for (int64_t i = 0; i < t_len; ++i) {
      S* r = y.row(i);
      for (int64_t j = 0; j < dim_; ++j) r[j] += bo->value[j];
    }
    if (ctx) {
      ctx->input = x;
      ctx->q = std::move(q);
      ctx->k = std::move(k);
      ctx->v = std::move(v);
      ctx->attn = std::move(attn);
      ctx->concat = std::move(concat);
    }
    return y;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout) const {
    const int64_t t_len = gout.dim(0);
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim_)));

    add_matmul_tn(wo->grad, ctx.concat, gout);
    for (int64_t i = 0; i < t_len; ++i) {
      const S* r = gout.row(i);
      for (int64_t j = 0; j < dim_; ++j) bo->grad[j] += r[j];
    }
    Tensor<S> dconcat = matmul_nt(gout, wo->value);

    Tensor<S> dq({t_len, dim_});
    Tensor<S> dk({t_len, dim_});
    Tensor<S> dv({t_len, dim_});

    Tensor<S> qh({t_len, head_dim_});
    Tensor<S> kh({t_len, head_dim_});
    Tensor<S> vh({t_len, head_dim_});
    Tensor<S> dch({t_len, head_dim_});
    Tensor<S> a({t_len, t_len});
    for (int h = 0; h < heads_; ++h) {
      take_head(ctx.q, h, qh);
      take_head(ctx.k, h, kh);
      take_head(ctx.v, h, vh);
      take_head(dconcat, h, dch);
      std::copy(ctx.attn.row(h), ctx.attn.row(h) + t_len * t_len, a.data());

      Tensor<S> da = matmul_nt(dch, vh);
      Tensor<S> dvh = matmul_tn(a, dch);
      Tensor<S> dlogits = softmax_rows_backward(a, da);

      for (int64_t i = 0; i < t_len; ++i) {
        const S* row = dlogits.row(i);
        for (int64_t j = 0; j < t_len; ++j) {
          rel_bias->grad(h, rel_bucket(i, j)) += row[j];
        }
      }
      Tensor<S> dqh = matmul(dlogits, kh);
      dqh *= scale;
      Tensor<S> dkh = matmul_tn(dlogits, qh);
      dkh *= scale;

      add_head(dqh, h, dq);
      add_head(dkh, h, dk);
      add_head(dvh, h, dv);
    }

    Tensor<S> gin = project_backward(ctx.input, dq, wq, bq);
    gin += project_backward(ctx.input, dk, wk, bk);
    gin += project_backward(ctx.input, dv, wv, bv);
    return gin;
  }

  int64_t dim_ = 0;
  int heads_ = 0;
  int64_t head_dim_ = 0;
  int max_rel_ = 0;
  Param<S>*wq = nullptr, *bq = nullptr;
  Param<S>*wk = nullptr, *bk = nullptr;
  Param<S>*wv = nullptr, *bv = nullptr;
  Param<S>*wo = nullptr, *bo = nullptr;
  Param<S>* rel_bias = nullptr;

 private:
  Tensor<S> project(const Tensor<S>& x, const Param<S>* w, const Param<S>* b) const {
    Tensor<S> y = matmul(x, w->value);
    for (int64_t i = 0; i < y.dim(0); ++i) {
      S* r = y.row(i);
      for (int64_t j = 0; j < dim_; ++j) r[j] += b->value[j];
    }
    return y;
  }

  Tensor<S> project_backward(const Tensor<S>& x, const Tensor<S>& dy, Param<S>* w,
                             Param<S>* b) const {
    add_matmul_tn(w->grad, x, dy);
    for (int64_t i = 0; i < dy.dim(0); ++i) {
      const S* r = dy.row(i);
      for (int64_t j = 0; j < dim_; ++j) b->grad[j] += r[j];
    }
    return matmul_nt(dy, w->value);
  }

  void take_head(const Tensor<S>& full, int h, Tensor<S>& out) const {
    const int64_t off = static_cast<int64_t>(h) * head_dim_;
    for (int64_t t = 0; t < full.dim(0); ++t) {
      const S* src = full.row(t) + off;
      std::copy(src, src + head_dim_, out.row(t));
    }
  }

  void put_head(const Tensor<S>& head, int h, Tensor<S>& full) const {
    const int64_t off = static_cast<int64_t>(h) * head_dim_;
    for (int64_t t = 0; t < full.dim(0); ++t) {
      std::copy(head.row(t), head.row(t) + head_dim_, full.row(t) + off);
    }
  }

  void add_head(const Tensor<S>& head, int h, Tensor<S>& full) const {
    const int64_t off = static_cast<int64_t>(h) * head_dim_;
    for (int64_t t = 0; t < full.dim(0); ++t) {
      S* dst = full.row(t) + off;
      const S* src = head.row(t);
      for (int64_t j = 0; j < head_dim_; ++j) dst[j] += src[j];
    }
  }
};

// Layer vocabulary, used by the gradient-check suite and config plumbing.
enum class LayerKind {
  kLinear,
  kLayerNorm,
  kMhsaRelPos,
  kDepthwiseConv,
  kActivation,
  kDropout,
  kGlu,
};

}  // namespace moesep::nn
