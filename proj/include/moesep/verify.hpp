// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <chrono>
#include <vector>

#include "moesep/conformer.hpp"
#include "moesep/gradcheck.hpp"
#include "moesep/loss.hpp"

namespace moesep::verify {

struct GradcheckReport {
  std::vector<gradcheck::LayerCheck> layers;
  gradcheck::CheckResult model;
  double seconds = 0.0;

  static constexpr double kLayerTol = 1e-4;
  static constexpr double kModelTol = 1e-3;

  bool pass() const {
    for (const auto& c : layers) {
      if (!c.result.pass(kLayerTol)) return false;
    }
    return model.pass(kModelTol);
  }
};

// Full finite-difference suite at 64-bit: every layer kind, then a 2-block
// tiny model (D=8, F=9, T=4, S=2, 2 experts) trained end to end through the
// uPIT-plus-load loss.
inline GradcheckReport run_gradchecks(uint64_t seed = 0) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.layers = gradcheck::run_layer_suite(seed);

  using S = double;
  conformer::ConformerConfig cfg;
  cfg.num_blocks = 2;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  cfg.conv_kernel = 3;
  cfg.input_dim = 9;
  cfg.num_speakers = 2;
  cfg.max_rel_distance = 4;
  cfg.moe_kind = conformer::MoeKind::kMoe;
  cfg.moe.experts = 2;
  cfg.moe.jitter = 0.01;
  cfg.moe.expert_dropout = 0.1;

  conformer::SSModel<S> model(cfg, seed + 1);
  Rng data_rng(seed + 2);
  Tensor<S> mag = Tensor<S>::uniform({4, 9}, data_rng, 0.2, 1.2);
  std::vector<Tensor<S>> refs;
  refs.push_back(Tensor<S>::uniform({4, 9}, data_rng, 0.0, 1.0));
  refs.push_back(Tensor<S>::uniform({4, 9}, data_rng, 0.0, 1.0));
  const auto fb = dsp::make_mel_filterbank(9, 4, 16000, 0.0, 8000.0);
  const Tensor<S> mel_w = fb.weights;
  const int moe_blocks = cfg.num_moe_blocks();

  auto loss_fn = [&]() {
    model.store().zero_grads();
    Rng fwd_rng(seed + 1234);
    typename conformer::SSModel<S>::Ctx ctx;
    std::vector<moe::LoadStats> stats;
    Tensor<S> masks =
        model.forward(mag, Mode::kTrain, BatchClass::kUnspecified, &fwd_rng, &ctx, &stats);
    auto upit = separation::upit_loss(masks, mag, refs, mel_w, true);
    model.backward(ctx, upit.dmasks, 1.0 / moe_blocks);
    double loss = upit.loss;
    for (const auto& s : stats) loss += moe::aux_loss(s) / moe_blocks;
    return loss;
  };
  report.model = gradcheck::check_store_grads(model.store(), loss_fn);

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace moesep::verify
