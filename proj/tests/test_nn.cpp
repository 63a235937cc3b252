// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "moesep/checkpoint.hpp"
#include "moesep/gradcheck.hpp"
#include "moesep/nn.hpp"

using namespace moesep;

TEST_CASE("linear with identity weight and zero bias is identity") {
  Rng rng(0);
  nn::ParameterStore<double> store;
  nn::Linear<double> lin(store, "lin", 4, 4, rng);
  lin.weight->value.fill(0.0);
  for (int64_t i = 0; i < 4; ++i) lin.weight->value(i, i) = 1.0;
  lin.bias->value.fill(0.0);

  Tensor<double> x = Tensor<double>::randn({3, 4}, rng);
  auto y = lin.forward(x, nullptr);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  // sum-of-outputs loss through the identity: input grad is all ones
  typename nn::Linear<double>::Ctx ctx;
  lin.forward(x, &ctx);
  Tensor<double> gout = Tensor<double>::full({3, 4}, 1.0);
  auto gin = lin.backward(ctx, gout);
  for (int64_t i = 0; i < gin.numel(); ++i) CHECK(gin[i] == 1.0);

  store.zero_grads();
  Tensor<double> zero({3, 4});
  auto gz = lin.backward(ctx, zero);
  for (int64_t i = 0; i < gz.numel(); ++i) CHECK(gz[i] == 0.0);
  for (int64_t i = 0; i < lin.weight->grad.numel(); ++i) CHECK(lin.weight->grad[i] == 0.0);
}

TEST_CASE("layernorm of a constant vector is zero before the affine map") {
  Rng rng(1);
  nn::ParameterStore<double> store;
  nn::LayerNorm<double> ln(store, "ln", 5);
  Tensor<double> x = Tensor<double>::full({2, 5}, 3.7);
  auto y = ln.forward(x, nullptr);
  // gamma = 1, beta = 0 at init, so the output equals the normalized value
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("softmax of a constant row is uniform") {
  nn::Activation<double> softmax(nn::ActKind::kSoftmax);
  Tensor<double> x({1, 4});
  auto y = softmax.forward(x, nullptr);
  for (int64_t i = 0; i < 4; ++i) CHECK(y[i] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(2);
  nn::Activation<float> softmax(nn::ActKind::kSoftmax);
  Tensor<float> x = Tensor<float>::randn({8, 13}, rng, 3.0);
  auto y = softmax.forward(x, nullptr);
  for (int64_t t = 0; t < 8; ++t) {
    float sum = 0.0f;
    for (int64_t j = 0; j < 13; ++j) sum += y(t, j);
    CHECK(std::abs(sum - 1.0f) < 1e-6f);
  }
}

TEST_CASE("dropout is exact identity in eval mode and scales in train mode") {
  nn::Dropout<float> drop(0.4);
  Rng rng(3);
  Tensor<float> x = Tensor<float>::randn({6, 7}, rng);

  auto y = drop.forward(x, Mode::kEval, nullptr, nullptr);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  typename nn::Dropout<float>::Ctx ctx;
  Rng mask_rng(4);
  auto yt = drop.forward(x, Mode::kTrain, &mask_rng, &ctx);
  int64_t zeros = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (yt[i] == 0.0f) {
      ++zeros;
    } else {
      CHECK(yt[i] == Catch::Approx(x[i] / 0.6f));
    }
  }
  CHECK(zeros > 0);
  CHECK(zeros < x.numel());
}

TEST_CASE("mhsa with a single position reduces to the value path") {
  Rng rng(5);
  nn::ParameterStore<double> store;
  nn::MhsaRelPos<double> mhsa(store, "mhsa", 6, 2, 4, rng);
  Tensor<double> x = Tensor<double>::randn({1, 6}, rng);
  auto y = mhsa.forward(x, nullptr);

  // attention over one position is the identity: y = (x Wv + bv) Wo + bo
  Tensor<double> v = matmul(x, mhsa.wv->value);
  for (int64_t j = 0; j < 6; ++j) v(0, j) += mhsa.bv->value[j];
  Tensor<double> expect = matmul(v, mhsa.wo->value);
  for (int64_t j = 0; j < 6; ++j) expect(0, j) += mhsa.bo->value[j];
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(y[i] == Catch::Approx(expect[i]).margin(1e-12));
  }
}

TEST_CASE("mhsa with uniform logits averages the value rows") {
  Rng rng(6);
  nn::ParameterStore<double> store;
  nn::MhsaRelPos<double> mhsa(store, "mhsa", 6, 2, 4, rng);
  mhsa.wq->value.fill(0.0);
  mhsa.bq->value.fill(0.0);
  mhsa.wk->value.fill(0.0);
  mhsa.bk->value.fill(0.0);
  mhsa.rel_bias->value.fill(0.0);

  const int64_t t_len = 5;
  Tensor<double> x = Tensor<double>::randn({t_len, 6}, rng);
  auto y = mhsa.forward(x, nullptr);

  // oracle: uniform attention averages V over time, then projects
  Tensor<double> v = matmul(x, mhsa.wv->value);
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t j = 0; j < 6; ++j) v(t, j) += mhsa.bv->value[j];
  }
  Tensor<double> mean({1, 6});
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t j = 0; j < 6; ++j) mean(0, j) += v(t, j) / t_len;
  }
  Tensor<double> proj = matmul(mean, mhsa.wo->value);
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t j = 0; j < 6; ++j) {
      CHECK(y(t, j) == Catch::Approx(proj(0, j) + mhsa.bo->value[j]).margin(1e-10));
    }
  }
}

TEST_CASE("mhsa without relative bias is permutation-equivariant") {
  Rng rng(7);
  nn::ParameterStore<double> store;
  nn::MhsaRelPos<double> mhsa(store, "mhsa", 8, 2, 4, rng);
  mhsa.rel_bias->value.fill(0.0);

  const int64_t t_len = 6;
  Tensor<double> x = Tensor<double>::randn({t_len, 8}, rng);
  auto y = mhsa.forward(x, nullptr);

  std::vector<int64_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor<double> xp({t_len, 8});
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t j = 0; j < 8; ++j) xp(t, j) = x(perm[static_cast<size_t>(t)], j);
  }
  auto yp = mhsa.forward(xp, nullptr);
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(yp(t, j) == Catch::Approx(y(perm[static_cast<size_t>(t)], j)).margin(1e-10));
    }
  }
}

TEST_CASE("every layer kind passes the finite-difference gradient check") {
  for (uint64_t seed : {11ull, 12ull}) {
    for (const auto& check : gradcheck::run_layer_suite(seed)) {
      INFO(check.name << " seed " << seed << " worst " << check.result.worst_param
                      << " err " << check.result.max_rel_err);
      CHECK(check.result.pass(1e-4));
    }
  }
}

TEST_CASE("eval-mode forward is bit-reproducible") {
  Rng rng(13);
  nn::ParameterStore<float> store;
  nn::MhsaRelPos<float> mhsa(store, "mhsa", 8, 2, 8, rng);
  Tensor<float> x = Tensor<float>::randn({12, 8}, rng);
  auto a = mhsa.forward(x, nullptr);
  auto b = mhsa.forward(x, nullptr);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  const std::string path = "test_ckpt.bin";
  Rng rng(17);
  nn::ParameterStore<float> store;
  nn::Linear<float> lin(store, "lin", 7, 5, rng);
  nn::LayerNorm<float> ln(store, "ln", 5);
  nn::MhsaRelPos<float> mhsa(store, "mhsa", 8, 2, 4, rng);

  checkpoint::save(store, path);

  // clone the structure, load, and compare values bit for bit
  Rng rng2(99);
  nn::ParameterStore<float> other;
  nn::Linear<float> lin2(other, "lin", 7, 5, rng2);
  nn::LayerNorm<float> ln2(other, "ln", 5);
  nn::MhsaRelPos<float> mhsa2(other, "mhsa", 8, 2, 4, rng2);
  checkpoint::load(other, path);

  for (auto& [name, p] : store) {
    const nn::Param<float>* q = other.find(name);
    REQUIRE(q != nullptr);
    REQUIRE(q->value.shape() == p.value.shape());
    for (int64_t i = 0; i < p.value.numel(); ++i) CHECK(q->value[i] == p.value[i]);
  }

  // saving the loaded store reproduces the same file content
  const std::string path2 = "test_ckpt2.bin";
  checkpoint::save(other, path2);
  std::ifstream f1(path, std::ios::binary);
  std::ifstream f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint load failures carry categories") {
  Rng rng(19);
  nn::ParameterStore<float> store;
  nn::Linear<float> lin(store, "lin", 3, 3, rng);
  CHECK_THROWS_AS(checkpoint::load(store, "missing_ckpt.bin"), Error);
  try {
    checkpoint::load(store, "missing_ckpt.bin");
  } catch (const Error& e) {
    CHECK(e.category() == "checkpoint-not-found");
  }
}
