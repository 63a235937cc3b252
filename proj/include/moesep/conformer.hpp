// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "moesep/common.hpp"
#include "moesep/moe.hpp"
#include "moesep/nn.hpp"
#include "moesep/tensor.hpp"

namespace moesep::conformer {

enum class MoeKind { kNone, kMoe, kMmoe };

struct ConformerConfig {
  int num_blocks = 4;
  int64_t model_dim = 64;
  int heads = 4;
  int64_t ffn_hidden = 128;
  int conv_kernel = 15;
  int64_t input_dim = 129;
  int num_speakers = 2;
  int moe_block_stride = 2;
  int max_rel_distance = 64;
  MoeKind moe_kind = MoeKind::kNone;
  moe::MoeOptions moe;

  void validate() const {
    if (num_blocks < 1) throw std::invalid_argument("config: num_blocks must be >= 1");
    if (model_dim % heads != 0) {
      throw std::invalid_argument("config: model_dim must be divisible by heads");
    }
    if (conv_kernel % 2 == 0) throw std::invalid_argument("config: conv_kernel must be odd");
    if (num_speakers < 1) throw std::invalid_argument("config: num_speakers must be >= 1");
    if (moe_block_stride < 1) {
      throw std::invalid_argument("config: moe_block_stride must be >= 1");
    }
    if (moe_kind != MoeKind::kNone && moe.experts < 1) {
      throw std::invalid_argument("config: experts must be >= 1");
    }
  }

  // MoE modules sit on blocks 0, stride, 2*stride, ... from the first block.
  bool block_has_moe(int index) const {
    return moe_kind != MoeKind::kNone && index % moe_block_stride == 0;
  }

  int num_moe_blocks() const {
    int n = 0;
    for (int i = 0; i < num_blocks; ++i) {
      if (block_has_moe(i)) ++n;
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// Conformer block: MHSA, convolution module, and FFN-or-MoE module, each
// with a pre-layer-norm and a residual connection. No dropout inside the
// block; expert dropout lives in the MoE experts.
// ---------------------------------------------------------------------------
template <class S>
class ConformerBlock {
 public:
  struct Ctx {
    typename nn::LayerNorm<S>::Ctx ln_mhsa;
    typename nn::MhsaRelPos<S>::Ctx mhsa;
    typename nn::LayerNorm<S>::Ctx ln_conv;
    typename nn::Linear<S>::Ctx conv_pw1;
    typename nn::Glu<S>::Ctx conv_glu;
    typename nn::DepthwiseConv1d<S>::Ctx conv_dw;
    typename nn::LayerNorm<S>::Ctx conv_ln;
    typename nn::Activation<S>::Ctx conv_swish;
    typename nn::Linear<S>::Ctx conv_pw2;
    typename nn::LayerNorm<S>::Ctx ln_ffn;
    typename moe::FfnExpert<S>::Ctx ffn;
    typename moe::MoeLayer<S>::Ctx moe;
  };

  ConformerBlock() = default;
  ConformerBlock(nn::ParameterStore<S>& store, const std::string& prefix,
                 const ConformerConfig& cfg, bool with_moe, Rng& rng)
      : has_moe_(with_moe),
        ln_mhsa_(store, prefix + ".ln_mhsa", cfg.model_dim),
        mhsa_(store, prefix + ".mhsa", cfg.model_dim, cfg.heads, cfg.max_rel_distance, rng),
        ln_conv_(store, prefix + ".ln_conv", cfg.model_dim),
        conv_pw1_(store, prefix + ".conv.pw1", cfg.model_dim, 2 * cfg.model_dim, rng),
        conv_dw_(store, prefix + ".conv.dw", cfg.model_dim, cfg.conv_kernel, rng),
        conv_ln_(store, prefix + ".conv.ln", cfg.model_dim),
        conv_swish_(nn::ActKind::kSwish),
        conv_pw2_(store, prefix + ".conv.pw2", cfg.model_dim, cfg.model_dim, rng),
        ln_ffn_(store, prefix + ".ln_ffn", cfg.model_dim) {
    if (with_moe) {
      moe::MoeOptions opts = cfg.moe;
      opts.multi_gate = cfg.moe_kind == MoeKind::kMmoe;
      moe_ = std::make_unique<moe::MoeLayer<S>>(store, prefix + ".moe", cfg.model_dim,
                                                cfg.ffn_hidden, opts, rng);
    } else {
      ffn_ = std::make_unique<moe::FfnExpert<S>>(store, prefix + ".ffn", cfg.model_dim,
                                                 cfg.ffn_hidden, 0.0, rng);
    }
  }

  bool has_moe() const { return has_moe_; }
  const moe::MoeLayer<S>* moe_layer() const { return moe_.get(); }

  Tensor<S> forward(const Tensor<S>& x, Mode mode, BatchClass batch_class, Rng* rng,
                    Ctx* ctx, moe::LoadStats* stats) const {
    // x + MHSA(LN(x))
    Tensor<S> h = ln_mhsa_.forward(x, ctx ? &ctx->ln_mhsa : nullptr);
    h = mhsa_.forward(h, ctx ? &ctx->mhsa : nullptr);
    h += x;

    // h + Conv(LN(h))
    Tensor<S> c = ln_conv_.forward(h, ctx ? &ctx->ln_conv : nullptr);
    c = conv_pw1_.forward(c, ctx ? &ctx->conv_pw1 : nullptr);
    c = conv_glu_.forward(c, ctx ? &ctx->conv_glu : nullptr);
    c = conv_dw_.forward(c, ctx ? &ctx->conv_dw : nullptr);
    c = conv_ln_.forward(c, ctx ? &ctx->conv_ln : nullptr);
    c = conv_swish_.forward(c, ctx ? &ctx->conv_swish : nullptr);
    c = conv_pw2_.forward(c, ctx ? &ctx->conv_pw2 : nullptr);
    c += h;

    // c + FFNorMoE(LN(c))
    Tensor<S> f = ln_ffn_.forward(c, ctx ? &ctx->ln_ffn : nullptr);
    if (has_moe_) {
      f = moe_->forward(f, mode, batch_class, rng, ctx ? &ctx->moe : nullptr, stats);
    } else {
      f = ffn_->forward(f, mode, rng, ctx ? &ctx->ffn : nullptr);
    }
    f += c;
    return f;
  }

  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& gout, double aux_grad_scale) const {
    // third module
    Tensor<S> gf = has_moe_ ? moe_->backward(ctx.moe, gout, aux_grad_scale)
                            : ffn_->backward(ctx.ffn, gout);
    Tensor<S> gc = ln_ffn_.backward(ctx.ln_ffn, gf);
    gc += gout;

    // convolution module
    Tensor<S> g = conv_pw2_.backward(ctx.conv_pw2, gc);
    g = conv_swish_.backward(ctx.conv_swish, g);
    g = conv_ln_.backward(ctx.conv_ln, g);
    g = conv_dw_.backward(ctx.conv_dw, g);
    g = conv_glu_.backward(ctx.conv_glu, g);
    g = conv_pw1_.backward(ctx.conv_pw1, g);
    Tensor<S> gh = ln_conv_.backward(ctx.ln_conv, g);
    gh += gc;

    // attention module
    Tensor<S> gm = mhsa_.backward(ctx.mhsa, gh);
    Tensor<S> gx = ln_mhsa_.backward(ctx.ln_mhsa, gm);
    gx += gh;
    return gx;
  }

  // Matmul/MAC cost per token for a sequence of length t_len.
  int64_t macs_per_token(int64_t t_len) const {
    const int64_t d = mhsa_.dim_;
    int64_t macs = 4 * d * d + 2 * t_len * d;            // projections + attention
    macs += d * (2 * d) + static_cast<int64_t>(conv_dw_.kernel_) * d + d * d;  // conv module
    macs += has_moe_ ? moe_->macs_per_token() : ffn_->macs_per_token();
    return macs;
  }

 private:
  bool has_moe_ = false;
  nn::LayerNorm<S> ln_mhsa_;
  nn::MhsaRelPos<S> mhsa_;
  nn::LayerNorm<S> ln_conv_;
  nn::Linear<S> conv_pw1_;
  nn::Glu<S> conv_glu_;
  nn::DepthwiseConv1d<S> conv_dw_;
  nn::LayerNorm<S> conv_ln_;
  nn::Activation<S> conv_swish_;
  nn::Linear<S> conv_pw2_;
  nn::LayerNorm<S> ln_ffn_;
  std::unique_ptr<moe::FfnExpert<S>> ffn_;
  std::unique_ptr<moe::MoeLayer<S>> moe_;
};

// ---------------------------------------------------------------------------
// Mask-estimation model: input projection, Conformer block stack, and a
// sigmoid output head producing S masks per frame.
// ---------------------------------------------------------------------------
template <class S>
class SSModel {
 public:
  struct Ctx {
    typename nn::Linear<S>::Ctx input_proj;
    std::vector<typename ConformerBlock<S>::Ctx> blocks;
    typename nn::Linear<S>::Ctx head;
    typename nn::Activation<S>::Ctx sigmoid;
  };

  explicit SSModel(const ConformerConfig& cfg, uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    input_proj_ = nn::Linear<S>(store_, "input_proj", cfg.input_dim, cfg.model_dim, rng);
    blocks_.reserve(static_cast<size_t>(cfg.num_blocks));
    for (int b = 0; b < cfg.num_blocks; ++b) {
      blocks_.emplace_back(store_, "block" + std::to_string(b), cfg_, cfg_.block_has_moe(b), rng);
    }
    head_ = nn::Linear<S>(store_, "head", cfg.model_dim,
                          static_cast<int64_t>(cfg.num_speakers) * cfg.input_dim, rng);
    sigmoid_ = nn::Activation<S>(nn::ActKind::kSigmoid);
  }

  const ConformerConfig& config() const { return cfg_; }
  nn::ParameterStore<S>& store() { return store_; }
  const nn::ParameterStore<S>& store() const { return store_; }
  int64_t parameter_count() const { return store_.parameter_count(); }
  const std::vector<ConformerBlock<S>>& blocks() const { return blocks_; }

  // Masks in [0,1], shape S x T x F; per-MoE-block load stats appended to
  // `stats` in block order.
  Tensor<S> forward(const Tensor<S>& magnitude, Mode mode, BatchClass batch_class,
                    Rng* rng, Ctx* ctx, std::vector<moe::LoadStats>* stats) const {
    if (magnitude.rank() != 2 || magnitude.dim(1) != cfg_.input_dim) {
      throw std::invalid_argument("SSModel: input dim mismatch");
    }
    if (!magnitude.all_finite()) {
      throw std::invalid_argument("SSModel: non-finite input");
    }
    const int64_t t_len = magnitude.dim(0);
    if (ctx) ctx->blocks.resize(blocks_.size());

    Tensor<S> h = input_proj_.forward(magnitude, ctx ? &ctx->input_proj : nullptr);
    for (size_t b = 0; b < blocks_.size(); ++b) {
      moe::LoadStats block_stats;
      moe::LoadStats* sp = (stats && blocks_[b].has_moe()) ? &block_stats : nullptr;
      h = blocks_[b].forward(h, mode, batch_class, rng, ctx ? &ctx->blocks[b] : nullptr, sp);
      if (sp) stats->push_back(std::move(block_stats));
    }
    Tensor<S> logits = head_.forward(h, ctx ? &ctx->head : nullptr);
    Tensor<S> sig = sigmoid_.forward(logits, ctx ? &ctx->sigmoid : nullptr);

    Tensor<S> masks({static_cast<int64_t>(cfg_.num_speakers), t_len, cfg_.input_dim});
    for (int64_t t = 0; t < t_len; ++t) {
      const S* row = sig.row(t);
      for (int s = 0; s < cfg_.num_speakers; ++s) {
        for (int64_t f = 0; f < cfg_.input_dim; ++f) {
          masks(s, t, f) = row[s * cfg_.input_dim + f];
        }
      }
    }
    return masks;
  }

  // Accumulates parameter gradients for dL/dmasks (S x T x F) plus
  // aux_grad_scale times each MoE block's load loss; returns dL/dinput.
  Tensor<S> backward(const Ctx& ctx, const Tensor<S>& dmasks, double aux_grad_scale) const {
    const int64_t t_len = dmasks.dim(1);
    Tensor<S> dsig({t_len, static_cast<int64_t>(cfg_.num_speakers) * cfg_.input_dim});
    for (int64_t t = 0; t < t_len; ++t) {
      S* row = dsig.row(t);
      for (int s = 0; s < cfg_.num_speakers; ++s) {
        for (int64_t f = 0; f < cfg_.input_dim; ++f) {
          row[s * cfg_.input_dim + f] = dmasks(s, t, f);
        }
      }
    }
    Tensor<S> g = sigmoid_.backward(ctx.sigmoid, dsig);
    g = head_.backward(ctx.head, g);
    for (size_t b = blocks_.size(); b-- > 0;) {
      g = blocks_[b].backward(ctx.blocks[b], g, aux_grad_scale);
    }
    return input_proj_.backward(ctx.input_proj, g);
  }

  int64_t macs_per_token(int64_t t_len) const {
    int64_t macs = cfg_.input_dim * cfg_.model_dim;
    for (const auto& b : blocks_) macs += b.macs_per_token(t_len);
    macs += cfg_.model_dim * static_cast<int64_t>(cfg_.num_speakers) * cfg_.input_dim;
    return macs;
  }

 private:
  ConformerConfig cfg_;
  nn::ParameterStore<S> store_;
  nn::Linear<S> input_proj_;
  std::vector<ConformerBlock<S>> blocks_;
  nn::Linear<S> head_;
  nn::Activation<S> sigmoid_;
};

}  // namespace moesep::conformer
