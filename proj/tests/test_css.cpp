// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "moesep/css.hpp"
#include "moesep/mixsim.hpp"

using namespace moesep;

namespace {

conformer::SSModel<float> small_model(uint64_t seed) {
  conformer::ConformerConfig cfg;
  cfg.num_blocks = 2;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.ffn_hidden = 32;
  cfg.conv_kernel = 3;
  cfg.input_dim = 129;
  cfg.num_speakers = 2;
  cfg.max_rel_distance = 16;
  cfg.moe_kind = conformer::MoeKind::kMoe;
  cfg.moe.experts = 2;
  return conformer::SSModel<float>(cfg, seed);
}

}  // namespace

TEST_CASE("window plan covers ten seconds with eleven windows") {
  // 2.4 s window, 0.8 s hop at 16 kHz: full-start windows at 0..7.2 s plus
  // one zero-padded tail window at 8.0 s.
  auto plan = css::plan_windows(160000, 38400, 12800);
  REQUIRE(plan.offsets.size() == 11);
  for (size_t k = 0; k < plan.offsets.size(); ++k) {
    CHECK(plan.offsets[k] == static_cast<int64_t>(k) * 12800);
  }
  CHECK(plan.offsets.back() == 128000);
}

TEST_CASE("window plan edge cases") {
  auto single = css::plan_windows(10000, 38400, 12800);
  REQUIRE(single.offsets.size() == 1);
  CHECK(single.offsets[0] == 0);

  // hop = window tiles the signal without overlap
  auto tiling = css::plan_windows(3 * 38400, 38400, 38400);
  REQUIRE(tiling.offsets.size() == 3);
  CHECK(tiling.offsets[1] == 38400);
  CHECK(tiling.offsets[2] == 2 * 38400);

  CHECK_THROWS_AS(css::plan_windows(0, 100, 50), std::invalid_argument);
  CHECK_THROWS_AS(css::plan_windows(100, 50, 60), std::invalid_argument);
}

TEST_CASE("alignment recovers identity and swap") {
  Rng rng(1);
  Tensor<double> prev = Tensor<double>::uniform({2, 6, 9}, rng, 0.0, 1.0);
  CHECK(css::align_permutation(prev, prev) == std::vector<int>{0, 1});

  Tensor<double> swapped({2, 6, 9});
  for (int64_t t = 0; t < 6; ++t) {
    for (int64_t f = 0; f < 9; ++f) {
      swapped(0, t, f) = prev(1, t, f);
      swapped(1, t, f) = prev(0, t, f);
    }
  }
  CHECK(css::align_permutation(prev, swapped) == std::vector<int>{1, 0});
}

TEST_CASE("alignment recovers a planted permutation under 10 dB noise") {
  int recovered = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(static_cast<uint64_t>(trial) + 100);
    Tensor<double> prev = Tensor<double>::uniform({2, 8, 16}, rng, 0.0, 1.0);

    const bool swap = trial % 2 == 1;
    Tensor<double> cur({2, 8, 16});
    double signal_energy = 0.0;
    for (int64_t i = 0; i < prev.numel(); ++i) signal_energy += prev[i] * prev[i];
    const double noise_scale = std::sqrt(std::pow(10.0, -1.0));  // 10 dB down
    std::normal_distribution<double> noise(0.0, 1.0);
    const double sigma =
        noise_scale * std::sqrt(signal_energy / static_cast<double>(prev.numel()));
    for (int64_t t = 0; t < 8; ++t) {
      for (int64_t f = 0; f < 16; ++f) {
        cur(swap ? 1 : 0, t, f) = prev(0, t, f) + sigma * noise(rng);
        cur(swap ? 0 : 1, t, f) = prev(1, t, f) + sigma * noise(rng);
      }
    }
    const auto perm = css::align_permutation(prev, cur);
    const std::vector<int> expect = swap ? std::vector<int>{1, 0} : std::vector<int>{0, 1};
    if (perm == expect) ++recovered;
  }
  CHECK(recovered >= 99);
}

TEST_CASE("alignment for three channels matches brute force by construction") {
  Rng rng(3);
  Tensor<double> prev = Tensor<double>::uniform({3, 5, 7}, rng, 0.0, 1.0);
  Tensor<double> cur({3, 5, 7});
  // plant permutation: out channel i should take cur channel (i+1)%3
  for (int64_t t = 0; t < 5; ++t) {
    for (int64_t f = 0; f < 7; ++f) {
      cur(1, t, f) = prev(0, t, f);
      cur(2, t, f) = prev(1, t, f);
      cur(0, t, f) = prev(2, t, f);
    }
  }
  CHECK(css::align_permutation(prev, cur) == std::vector<int>{1, 2, 0});
}

TEST_CASE("stitching identical content is the identity") {
  Rng rng(4);
  std::vector<double> content(1000);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& v : content) v = dist(rng);

  auto plan = css::plan_windows(1000, 300, 100);
  std::vector<std::vector<dsp::Waveform>> windows(plan.offsets.size());
  for (size_t k = 0; k < plan.offsets.size(); ++k) {
    dsp::Waveform w;
    w.samples.assign(300, 0.0);
    for (int64_t i = 0; i < 300; ++i) {
      const int64_t n = plan.offsets[k] + i;
      if (n < 1000) w.samples[static_cast<size_t>(i)] = content[static_cast<size_t>(n)];
    }
    windows[k] = {w};
  }
  auto out = css::stitch(windows, plan);
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].samples.size() == 1000);
  double max_err = 0.0;
  for (size_t i = 0; i < 1000; ++i) {
    max_err = std::max(max_err, std::abs(out[0].samples[i] - content[i]));
  }
  CHECK(max_err < 1e-12);

  // energy bound: stitched output never exceeds the window content scale
  double out_rms = 0.0;
  double in_rms = 0.0;
  for (size_t i = 0; i < 1000; ++i) {
    out_rms += out[0].samples[i] * out[0].samples[i];
    in_rms += content[i] * content[i];
  }
  CHECK(std::sqrt(out_rms) <= std::sqrt(in_rms) * (1.0 + 1e-6));
}

TEST_CASE("single window stitches as a passthrough") {
  auto plan = css::plan_windows(200, 300, 100);
  REQUIRE(plan.offsets.size() == 1);
  dsp::Waveform w;
  w.samples.assign(300, 0.25);
  auto out = css::stitch({{w}}, plan);
  REQUIRE(out[0].samples.size() == 200);
  for (double v : out[0].samples) CHECK(v == 0.25);
}

TEST_CASE("two-window crossfade matches hand-computed ramp values") {
  // window 8, hop 4: ramp length 4, weights (i+1)/5 up and (w-i)/5 down
  css::WindowPlan plan;
  plan.window_samples = 8;
  plan.hop_samples = 4;
  plan.total_samples = 12;
  plan.offsets = {0, 4};

  dsp::Waveform a;
  a.samples.assign(8, 1.0);
  dsp::Waveform b;
  b.samples.assign(8, 2.0);
  auto out = css::stitch({{a}, {b}}, plan);
  REQUIRE(out[0].samples.size() == 12);

  const std::vector<double> expect = {1.0, 1.0, 1.0, 1.0, 1.2, 1.4,
                                      1.6, 1.8, 2.0, 2.0, 2.0, 2.0};
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(out[0].samples[i] == Catch::Approx(expect[i]).margin(1e-12));
  }
}

TEST_CASE("separate_long on silence yields silent channels of equal length") {
  auto model = small_model(7);
  dsp::Waveform silence;
  silence.sample_rate = 16000;
  silence.samples.assign(16000, 0.0);

  auto out = css::separate_long(model, silence, 256, 128, 0.3, 0.1);
  REQUIRE(out.size() == 2);
  for (const auto& ch : out) {
    REQUIRE(ch.samples.size() == silence.samples.size());
    for (double v : ch.samples) CHECK(v == 0.0);
  }
}

TEST_CASE("separate_long preserves length exactly on real mixtures") {
  auto model = small_model(8);
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  mixsim::SourceSpec hi{mixsim::SourceKind::kSinusoidBand, 2000.0, 3500.0, ""};
  auto a = mixsim::synth_source(lo, 1.3, 1);
  auto b = mixsim::synth_source(hi, 1.3, 2);
  auto s = mixsim::mix(a, b, mixsim::MixPattern::kFull, 0.0, 25.0, 3);

  auto out = css::separate_long(model, s.mixture, 256, 128, 0.3, 0.1);
  REQUIRE(out.size() == 2);
  CHECK(out[0].samples.size() == s.mixture.samples.size());
  CHECK(out[1].samples.size() == s.mixture.samples.size());

  // deterministic inference
  auto again = css::separate_long(model, s.mixture, 256, 128, 0.3, 0.1);
  for (size_t i = 0; i < out[0].samples.size(); ++i) {
    CHECK(out[0].samples[i] == again[0].samples[i]);
  }
}

TEST_CASE("audio of exactly one window equals single-window separation") {
  auto model = small_model(9);
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  auto audio = mixsim::synth_source(lo, 0.3, 5);
  REQUIRE(audio.samples.size() == 4800);  // exactly the 0.3 s window below

  auto windowed = css::separate_long(model, audio, 256, 128, 0.3, 0.1);
  auto direct = css::separate_utterance(model, audio, 256, 128);
  REQUIRE(windowed.size() == direct.size());
  for (size_t s = 0; s < windowed.size(); ++s) {
    REQUIRE(windowed[s].samples.size() == direct[s].samples.size());
    for (size_t i = 0; i < windowed[s].samples.size(); ++i) {
      CHECK(windowed[s].samples[i] == Catch::Approx(direct[s].samples[i]).margin(1e-12));
    }
  }
}
