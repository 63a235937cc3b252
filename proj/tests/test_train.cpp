// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "moesep/loss.hpp"
#include "moesep/train.hpp"

using namespace moesep;

namespace {

// Independent exhaustive-permutation oracle: straight loops, both/all
// permutations enumerated explicitly.
double upit_oracle_2(const Tensor<double>& masks, const Tensor<double>& y,
                     const std::vector<Tensor<double>>& refs, const Tensor<double>& w,
                     std::vector<double>* candidates = nullptr) {
  const int64_t t_len = y.dim(0);
  const int64_t f_len = y.dim(1);
  const int64_t bands = w.dim(1);
  auto mel = [&](const Tensor<double>& mag) {
    Tensor<double> out({t_len, bands});
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t b = 0; b < bands; ++b) {
        double acc = 0.0;
        for (int64_t f = 0; f < f_len; ++f) acc += mag(t, f) * w(f, b);
        out(t, b) = acc;
      }
    }
    return out;
  };
  std::vector<Tensor<double>> est(2), ref(2);
  for (int64_t i = 0; i < 2; ++i) {
    Tensor<double> m({t_len, f_len});
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t f = 0; f < f_len; ++f) m(t, f) = masks(i, t, f) * y(t, f);
    }
    est[static_cast<size_t>(i)] = mel(m);
    ref[static_cast<size_t>(i)] = mel(refs[static_cast<size_t>(i)]);
  }
  auto sq = [&](const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0.0;
    for (int64_t k = 0; k < a.numel(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return acc;
  };
  const double perm01 = sq(est[0], ref[0]) + sq(est[1], ref[1]);
  const double perm10 = sq(est[0], ref[1]) + sq(est[1], ref[0]);
  if (candidates) *candidates = {perm01, perm10};
  return std::min(perm01, perm10);
}

conformer::ConformerConfig tiny_mmoe_config() {
  conformer::ConformerConfig cfg;
  cfg.num_blocks = 2;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  cfg.conv_kernel = 3;
  cfg.input_dim = 129;
  cfg.num_speakers = 2;
  cfg.max_rel_distance = 8;
  cfg.moe_kind = conformer::MoeKind::kMmoe;
  cfg.moe.experts = 2;
  return cfg;
}

mixsim::MixtureSample tiny_sample(uint64_t seed, mixsim::MixPattern pattern) {
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  mixsim::SourceSpec hi{mixsim::SourceKind::kSinusoidBand, 2000.0, 3500.0, ""};
  auto a = mixsim::synth_source(lo, 0.3, seed);
  auto b = mixsim::synth_source(hi, 0.3, seed + 1);
  return mixsim::mix(a, b, pattern, 0.5, 30.0, seed + 2);
}

}  // namespace

TEST_CASE("upit loss is zero with a perfect estimate and identity permutation") {
  Rng rng(1);
  Tensor<double> y = Tensor<double>::uniform({4, 6}, rng, 0.5, 1.5);
  Tensor<double> masks = Tensor<double>::uniform({2, 4, 6}, rng, 0.0, 1.0);
  std::vector<Tensor<double>> refs(2, Tensor<double>({4, 6}));
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t t = 0; t < 4; ++t) {
      for (int64_t f = 0; f < 6; ++f) refs[static_cast<size_t>(i)](t, f) = masks(i, t, f) * y(t, f);
    }
  }
  auto fb = dsp::make_mel_filterbank(6, 4, 16000, 0.0, 8000.0);

  auto result = separation::upit_loss(masks, y, refs, fb.weights);
  CHECK(result.loss == 0.0);
  CHECK(result.assignment.perm == std::vector<int>{0, 1});
  CHECK(result.assignment.loss_per_perm.size() == 2);

  std::swap(refs[0], refs[1]);
  auto swapped = separation::upit_loss(masks, y, refs, fb.weights);
  CHECK(swapped.loss == 0.0);
  CHECK(swapped.assignment.perm == std::vector<int>{1, 0});
}

TEST_CASE("upit loss equals the brute-force oracle bit for bit") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> y = Tensor<double>::uniform({3, 5}, rng, 0.0, 2.0);
    Tensor<double> masks = Tensor<double>::uniform({2, 3, 5}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> refs;
    refs.push_back(Tensor<double>::uniform({3, 5}, rng, 0.0, 2.0));
    refs.push_back(Tensor<double>::uniform({3, 5}, rng, 0.0, 2.0));
    Tensor<double> w = Tensor<double>::uniform({5, 4}, rng, 0.0, 1.0);

    std::vector<double> candidates;
    const double expect = upit_oracle_2(masks, y, refs, w, &candidates);
    auto result = separation::upit_loss(masks, y, refs, w);
    CHECK(result.loss == expect);
    REQUIRE(result.assignment.loss_per_perm.size() == 2);
    CHECK(result.assignment.loss_per_perm[0] == candidates[0]);
    CHECK(result.assignment.loss_per_perm[1] == candidates[1]);
  }
}

TEST_CASE("upit loss is invariant under reference reordering") {
  Rng rng(3);
  Tensor<double> y = Tensor<double>::uniform({4, 7}, rng, 0.0, 2.0);
  Tensor<double> masks = Tensor<double>::uniform({3, 4, 7}, rng, 0.0, 1.0);
  std::vector<Tensor<double>> refs;
  for (int i = 0; i < 3; ++i) refs.push_back(Tensor<double>::uniform({4, 7}, rng, 0.0, 2.0));
  Tensor<double> w = Tensor<double>::uniform({7, 5}, rng, 0.0, 1.0);

  auto base = separation::upit_loss(masks, y, refs, w);
  std::vector<Tensor<double>> reordered = {refs[2], refs[0], refs[1]};
  auto shuffled = separation::upit_loss(masks, y, reordered, w);
  CHECK(base.loss == shuffled.loss);
  // channel i pointed at base.perm[i] before; reordered index of that
  // reference: old j sits at new position (j + 1) % 3
  for (int i = 0; i < 3; ++i) {
    CHECK((base.assignment.perm[static_cast<size_t>(i)] + 1) % 3 ==
          shuffled.assignment.perm[static_cast<size_t>(i)]);
  }
  CHECK(base.loss >= 0.0);
}

TEST_CASE("upit gradient matches finite differences and flows through the winner only") {
  Rng rng(4);
  Tensor<double> y = Tensor<double>::uniform({3, 5}, rng, 0.5, 1.5);
  Tensor<double> masks = Tensor<double>::uniform({2, 3, 5}, rng, 0.2, 0.8);
  std::vector<Tensor<double>> refs;
  refs.push_back(Tensor<double>::uniform({3, 5}, rng, 0.0, 2.0));
  refs.push_back(Tensor<double>::uniform({3, 5}, rng, 0.0, 2.0));
  Tensor<double> w = Tensor<double>::uniform({5, 4}, rng, 0.0, 1.0);

  auto result = separation::upit_loss(masks, y, refs, w, true);
  const double h = 1e-6;
  for (int64_t k = 0; k < masks.numel(); ++k) {
    const double orig = masks[k];
    masks[k] = orig + h;
    const double lp = separation::upit_loss(masks, y, refs, w).loss;
    masks[k] = orig - h;
    const double lm = separation::upit_loss(masks, y, refs, w).loss;
    masks[k] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    CHECK(result.dmasks[k] == Catch::Approx(fd).margin(1e-5));
  }
}

TEST_CASE("more than six sources are rejected") {
  Tensor<double> masks({7, 2, 3});
  Tensor<double> y({2, 3});
  std::vector<Tensor<double>> refs(7, Tensor<double>({2, 3}));
  Tensor<double> w({3, 2});
  CHECK_THROWS_AS(separation::upit_loss(masks, y, refs, w), std::invalid_argument);
}

TEST_CASE("combined loss adds the auxiliary term") {
  moe::LoadStats none;  // dense model: no experts
  CHECK(separation::combined_loss(1.25, none) == 1.25);

  moe::LoadStats balanced;
  balanced.alpha = 0.01;
  balanced.f.assign(4, 0.25);
  balanced.P.assign(4, 0.25);
  CHECK(separation::combined_loss(1.25, balanced) == Catch::Approx(1.26).epsilon(1e-12));

  Rng rng(5);
  moe::LoadStats arbitrary;
  arbitrary.alpha = 0.01;
  for (int i = 0; i < 4; ++i) {
    arbitrary.f.push_back(0.25);
    arbitrary.P.push_back(0.1 * (i + 1));
  }
  CHECK(separation::combined_loss(2.0, arbitrary) == 2.0 + moe::aux_loss(arbitrary));
}

TEST_CASE("learning rate schedule hits the contract breakpoints") {
  train::TrainConfig cfg;
  cfg.peak_lr = 1e-4;
  cfg.warmup_steps = 30;
  cfg.total_steps = 300;
  CHECK(train::lr_schedule(30, cfg) == 1e-4);
  CHECK(train::lr_schedule(300, cfg) == 0.0);
  CHECK(train::lr_schedule(15, cfg) == Catch::Approx(0.5e-4));
  CHECK(train::lr_schedule(165, cfg) == Catch::Approx(0.5e-4));
  CHECK(train::lr_schedule(1, cfg) > 0.0);

  train::TrainConfig bad = cfg;
  bad.warmup_steps = 400;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
  Rng rng(6);
  nn::ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>({4}));
  p.grad = Tensor<double>::from({4}, {3.0, 0.0, 4.0, 0.0});  // norm 5
  const double before = opt::clip_global_norm(store, 2.5);
  CHECK(before == Catch::Approx(5.0));
  CHECK(p.grad[0] == Catch::Approx(1.5));
  CHECK(p.grad[2] == Catch::Approx(2.0));
}

TEST_CASE("adamw shrinks parameters through decoupled weight decay") {
  nn::ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>::full({1}, 2.0));
  opt::AdamW<double> adamw(store, {.weight_decay = 0.1});
  p.grad.fill(0.0);
  adamw.step(0.5);
  // zero gradient: update is lr * wd * value only
  CHECK(p.value[0] == Catch::Approx(2.0 - 0.5 * 0.1 * 2.0));
}

TEST_CASE("train_step on a fixed tiny batch does not increase the loss") {
  // empirical convexity smoke: two successive steps, >= 9 of 10 seeds
  int improved = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    conformer::ConformerConfig cfg = tiny_mmoe_config();
    cfg.moe_kind = conformer::MoeKind::kMoe;
    conformer::SSModel<float> model(cfg, seed);

    train::TrainConfig tcfg;
    tcfg.peak_lr = 2e-3;
    tcfg.warmup_steps = 1;
    tcfg.total_steps = 100;
    tcfg.batch_size = 1;
    train::FeatureConfig feat;
    feat.mel_bands = 20;
    const auto fb = feat.make_filterbank();
    const Tensor<float> mel_w = fb.weights.cast<float>();

    auto sample = tiny_sample(seed * 100 + 7, mixsim::MixPattern::kFull);
    std::vector<const mixsim::MixtureSample*> batch = {&sample};
    opt::AdamW<float> adamw(model.store(), {.weight_decay = tcfg.weight_decay});
    Rng rng(seed);

    auto m1 = train::train_step(model, batch, adamw, 1, tcfg, feat, mel_w, rng);
    auto m2 = train::train_step(model, batch, adamw, 2, tcfg, feat, mel_w, rng);
    if (m2.upit <= m1.upit) ++improved;
  }
  CHECK(improved >= 9);
}

TEST_CASE("MMoE training keeps the unused gate gradient at exactly zero") {
  conformer::SSModel<float> model(tiny_mmoe_config(), 3);
  train::TrainConfig tcfg;
  tcfg.batch_size = 2;
  train::FeatureConfig feat;
  feat.mel_bands = 20;
  const auto fb = feat.make_filterbank();
  const Tensor<float> mel_w = fb.weights.cast<float>();
  opt::AdamW<float> adamw(model.store(), {});
  Rng rng(7);

  auto s1 = tiny_sample(11, mixsim::MixPattern::kSequential);
  auto s2 = tiny_sample(23, mixsim::MixPattern::kSequential);
  REQUIRE(s1.overlap_class == mixsim::OverlapClass::kNonOverlap);
  std::vector<const mixsim::MixtureSample*> batch = {&s1, &s2};
  train::train_step(model, batch, adamw, 1, tcfg, feat, mel_w, rng);

  const auto* gate_a = model.store().find("block0.moe.gate_a.router");
  const auto* gate_b = model.store().find("block0.moe.gate_b.router");
  REQUIRE(gate_a != nullptr);
  REQUIRE(gate_b != nullptr);
  for (int64_t i = 0; i < gate_a->grad.numel(); ++i) CHECK(gate_a->grad[i] == 0.0f);
  double gb = 0.0;
  for (int64_t i = 0; i < gate_b->grad.numel(); ++i) gb += std::abs(gate_b->grad[i]);
  CHECK(gb > 0.0);

  // mixed-class minibatch violates the caller contract
  auto s3 = tiny_sample(31, mixsim::MixPattern::kFull);
  REQUIRE(s3.overlap_class == mixsim::OverlapClass::kOverlap);
  std::vector<const mixsim::MixtureSample*> mixed = {&s1, &s3};
  CHECK_THROWS_AS(train::train_step(model, mixed, adamw, 2, tcfg, feat, mel_w, rng),
                  std::invalid_argument);
}

TEST_CASE("train_loop runs the producer-consumer pipeline and writes outputs") {
  namespace fs = std::filesystem;
  const std::string out_dir = "test_train_out";
  fs::create_directories(out_dir);

  conformer::ConformerConfig cfg = tiny_mmoe_config();
  cfg.moe_kind = conformer::MoeKind::kMoe;
  conformer::SSModel<float> model(cfg, 5);

  train::TrainConfig tcfg;
  tcfg.total_steps = 3;
  tcfg.warmup_steps = 1;
  tcfg.batch_size = 2;
  tcfg.checkpoint_every = 2;
  train::FeatureConfig feat;
  feat.mel_bands = 20;

  int64_t steps_seen = 0;
  train::train_loop<float>(
      model,
      [](int64_t step) {
        std::vector<mixsim::MixtureSample> batch;
        batch.push_back(tiny_sample(static_cast<uint64_t>(step) * 2, mixsim::MixPattern::kFull));
        batch.push_back(tiny_sample(static_cast<uint64_t>(step) * 2 + 1, mixsim::MixPattern::kFull));
        return batch;
      },
      tcfg, feat, out_dir, [&](const train::StepMetrics& m) { steps_seen = m.step; });

  CHECK(steps_seen == 3);
  CHECK(fs::exists(out_dir + "/model.ckpt"));
  CHECK(fs::exists(out_dir + "/train_log.jsonl"));
  std::ifstream log(out_dir + "/train_log.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 3);
  fs::remove_all(out_dir);
}

TEST_CASE("si-snr behaves as a separation quality metric") {
  Rng rng(8);
  std::vector<double> ref(1000);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : ref) v = dist(rng);

  // scale invariance
  std::vector<double> scaled = ref;
  for (auto& v : scaled) v *= 3.7;
  CHECK(separation::si_snr(scaled, ref) > 80.0);

  // known SNR construction: signal + noise at 10 dB
  double sig_e = 0.0;
  for (double v : ref) sig_e += v * v;
  std::vector<double> noisy = ref;
  std::vector<double> noise(1000);
  double noise_e = 0.0;
  for (auto& v : noise) {
    v = dist(rng);
    noise_e += v * v;
  }
  const double g = std::sqrt(sig_e / noise_e * std::pow(10.0, -1.0));
  for (size_t i = 0; i < noisy.size(); ++i) noisy[i] += g * noise[i];
  CHECK(separation::si_snr(noisy, ref) == Catch::Approx(10.0).margin(0.5));
}
