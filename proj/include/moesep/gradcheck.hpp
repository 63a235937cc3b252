// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "moesep/nn.hpp"
#include "moesep/tensor.hpp"

namespace moesep::gradcheck {

// Relative error with a unit floor: relative for O(1) gradients, absolute
// below it.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

struct CheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t checked = 0;

  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central finite differences over every element of every parameter in the
// store. `loss_fn` must zero the gradients, run forward + backward with the
// store's current values, and return the scalar loss; it must be
// deterministic across calls (fixed seeds).
template <class S>
CheckResult check_store_grads(nn::ParameterStore<S>& store,
                              const std::function<double()>& loss_fn,
                              double h = 1e-5) {
  loss_fn();
  std::vector<std::pair<std::string, Tensor<S>>> analytic;
  for (auto& [name, p] : store) analytic.emplace_back(name, p.grad);

  CheckResult result;
  for (auto& [name, p] : store) {
    const Tensor<S>* saved = nullptr;
    for (const auto& [n, g] : analytic) {
      if (n == name) {
        saved = &g;
        break;
      }
    }
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const S orig = p.value[i];
      p.value[i] = orig + static_cast<S>(h);
      const double lp = loss_fn();
      p.value[i] = orig - static_cast<S>(h);
      const double lm = loss_fn();
      p.value[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double err = rel_err(static_cast<double>((*saved)[i]), fd);
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  loss_fn();  // leave grads consistent with unperturbed values
  return result;
}

namespace detail {

// Scalar readout of a tensor through a fixed random projection; makes every
// output element contribute to the checked loss.
template <class S>
double weighted_sum(const Tensor<S>& y, const Tensor<S>& coeffs) {
  double acc = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    acc += static_cast<double>(y[i]) * static_cast<double>(coeffs[i]);
  }
  return acc;
}

}  // namespace detail

struct LayerCheck {
  std::string name;
  CheckResult result;
};

// Finite-difference check of one layer kind at 64-bit, including the input
// gradient (the input is registered in the store as "test.input"). Shapes
// are drawn from the seed so repeated runs cover different sizes.
inline LayerCheck check_layer(nn::LayerKind kind, uint64_t seed,
                              nn::ActKind act = nn::ActKind::kRelu) {
  using S = double;
  Rng rng(seed);
  std::uniform_int_distribution<int64_t> t_dist(2, 6);
  std::uniform_int_distribution<int64_t> d_dist(2, 7);
  const int64_t t_len = t_dist(rng);
  const int64_t dim = d_dist(rng);

  nn::ParameterStore<S> store;
  LayerCheck check;
  std::function<Tensor<S>(const Tensor<S>&, Tensor<S>*)> run;

  // Each branch builds the layer, names the check, and binds a closure that
  // runs forward + backward and reports the input gradient.
  switch (kind) {
    case nn::LayerKind::kLinear: {
      check.name = "linear";
      auto layer = std::make_shared<nn::Linear<S>>(store, "linear", dim, d_dist(rng), rng);
      store.add("test.input", Tensor<S>::randn({t_len, dim}, rng));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::Linear<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kLayerNorm: {
      check.name = "layernorm";
      auto layer = std::make_shared<nn::LayerNorm<S>>(store, "ln", dim);
      store.add("test.input", Tensor<S>::randn({t_len, dim}, rng));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::LayerNorm<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kMhsaRelPos: {
      check.name = "mhsa_relpos";
      const int heads = 1 + static_cast<int>(seed % 2);
      const int64_t model_dim = 4 * heads;
      const int max_rel = 1 + static_cast<int>(seed % 4);
      auto layer =
          std::make_shared<nn::MhsaRelPos<S>>(store, "mhsa", model_dim, heads, max_rel, rng);
      store.add("test.input", Tensor<S>::randn({t_len, model_dim}, rng));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::MhsaRelPos<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kDepthwiseConv: {
      check.name = "depthwise_conv";
      const int kernel = seed % 2 == 0 ? 3 : 5;
      auto layer = std::make_shared<nn::DepthwiseConv1d<S>>(store, "conv", dim, kernel, rng);
      store.add("test.input", Tensor<S>::randn({t_len + 2, dim}, rng));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::DepthwiseConv1d<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kActivation: {
      switch (act) {
        case nn::ActKind::kRelu: check.name = "relu"; break;
        case nn::ActKind::kSwish: check.name = "swish"; break;
        case nn::ActKind::kSigmoid: check.name = "sigmoid"; break;
        case nn::ActKind::kSoftmax: check.name = "softmax"; break;
      }
      auto layer = std::make_shared<nn::Activation<S>>(act);
      Tensor<S> input = Tensor<S>::randn({t_len, dim}, rng);
      if (act == nn::ActKind::kRelu) {
        // keep samples away from the kink at zero
        for (int64_t i = 0; i < input.numel(); ++i) {
          if (std::abs(input[i]) < 1e-2) input[i] += input[i] >= 0 ? 0.1 : -0.1;
        }
      }
      store.add("test.input", std::move(input));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::Activation<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kDropout: {
      check.name = "dropout";
      auto layer = std::make_shared<nn::Dropout<S>>(0.3);
      store.add("test.input", Tensor<S>::randn({t_len, dim}, rng));
      const uint64_t mask_seed = seed + 17;
      run = [layer, mask_seed](const Tensor<S>& x, Tensor<S>* gin) {
        Rng mask_rng(mask_seed);  // identical mask on every evaluation
        typename nn::Dropout<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, Mode::kTrain, &mask_rng, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
    case nn::LayerKind::kGlu: {
      check.name = "glu";
      auto layer = std::make_shared<nn::Glu<S>>();
      store.add("test.input", Tensor<S>::randn({t_len, 2 * dim}, rng));
      run = [layer](const Tensor<S>& x, Tensor<S>* gin) {
        typename nn::Glu<S>::Ctx ctx;
        Tensor<S> y = layer->forward(x, &ctx);
        if (gin) *gin = layer->backward(ctx, *gin);
        return y;
      };
      break;
    }
  }

  nn::Param<S>* input = store.find("test.input");
  Tensor<S> probe = run(input->value, nullptr);
  Rng coeff_rng(seed + 1);
  Tensor<S> coeffs = Tensor<S>::randn(probe.shape(), coeff_rng);

  auto loss_fn = [&]() {
    store.zero_grads();
    Tensor<S> grad = coeffs;
    Tensor<S> y = run(input->value, &grad);
    input->grad += grad;
    return detail::weighted_sum(y, coeffs);
  };
  check.result = check_store_grads(store, loss_fn);
  return check;
}

// Every layer kind in the vocabulary, checked at 64-bit.
inline std::vector<LayerCheck> run_layer_suite(uint64_t seed) {
  std::vector<LayerCheck> checks;
  checks.push_back(check_layer(nn::LayerKind::kLinear, seed));
  checks.push_back(check_layer(nn::LayerKind::kLayerNorm, seed + 1));
  checks.push_back(check_layer(nn::LayerKind::kMhsaRelPos, seed + 2));
  checks.push_back(check_layer(nn::LayerKind::kDepthwiseConv, seed + 3));
  checks.push_back(check_layer(nn::LayerKind::kActivation, seed + 4, nn::ActKind::kRelu));
  checks.push_back(check_layer(nn::LayerKind::kActivation, seed + 5, nn::ActKind::kSwish));
  checks.push_back(check_layer(nn::LayerKind::kActivation, seed + 6, nn::ActKind::kSigmoid));
  checks.push_back(check_layer(nn::LayerKind::kActivation, seed + 7, nn::ActKind::kSoftmax));
  checks.push_back(check_layer(nn::LayerKind::kDropout, seed + 8));
  checks.push_back(check_layer(nn::LayerKind::kGlu, seed + 9));
  return checks;
}

}  // namespace moesep::gradcheck
