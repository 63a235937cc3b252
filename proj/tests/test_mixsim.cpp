// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <set>

#include "moesep/mixsim.hpp"

using namespace moesep;

TEST_CASE("sinusoid-band source keeps its energy inside the band") {
  mixsim::SourceSpec spec{mixsim::SourceKind::kSinusoidBand, 500.0, 1000.0, ""};
  auto w = mixsim::synth_source(spec, 1.0, 42);
  auto s = dsp::stft(w, 256, 128);

  const double bin_hz = 16000.0 / 256.0;
  double in_band = 0.0;
  double total = 0.0;
  for (int64_t t = 0; t < s.num_frames; ++t) {
    for (int64_t f = 0; f < s.num_bins; ++f) {
      const double e = std::norm(s.at(t, f));
      total += e;
      const double hz = f * bin_hz;
      if (hz >= 500.0 && hz <= 1000.0) in_band += e;
    }
  }
  CHECK(in_band / total >= 0.95);
}

TEST_CASE("synthesis is deterministic per seed and rejects zero duration") {
  mixsim::SourceSpec spec{mixsim::SourceKind::kSinusoidBand, 400.0, 900.0, ""};
  auto a = mixsim::synth_source(spec, 0.5, 7);
  auto b = mixsim::synth_source(spec, 0.5, 7);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i] == b.samples[i]);

  auto c = mixsim::synth_source(spec, 0.5, 8);
  bool differs = false;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i] != c.samples[i]) differs = true;
  }
  CHECK(differs);

  CHECK_THROWS_AS(mixsim::synth_source(spec, 0.0, 7), std::invalid_argument);

  mixsim::SourceSpec noise{mixsim::SourceKind::kFilteredNoise, 200.0, 4000.0, ""};
  auto n = mixsim::synth_source(noise, 0.25, 9);
  CHECK(dsp::is_finite(n));
  double energy = 0.0;
  for (double v : n.samples) energy += v * v;
  CHECK(energy > 0.0);
}

TEST_CASE("wav-file source reads and validates") {
  const std::string path = "test_source.wav";
  mixsim::SourceSpec gen{mixsim::SourceKind::kSinusoidBand, 300.0, 700.0, ""};
  wav::write(path, mixsim::synth_source(gen, 1.0, 3));

  mixsim::SourceSpec spec{mixsim::SourceKind::kWavFile, 0.0, 0.0, path};
  auto w = mixsim::synth_source(spec, 0.5, 0);
  CHECK(w.samples.size() == 8000);

  CHECK_THROWS_AS(mixsim::synth_source(spec, 2.0, 0), Error);  // longer than the file
  mixsim::SourceSpec missing{mixsim::SourceKind::kWavFile, 0.0, 0.0, "no_such.wav"};
  CHECK_THROWS_AS(mixsim::synth_source(missing, 0.5, 0), Error);
  std::remove(path.c_str());
}

TEST_CASE("vad basics") {
  dsp::Waveform silence;
  silence.samples.assign(8000, 0.0);
  for (uint8_t v : mixsim::vad(silence)) CHECK(v == 0);

  dsp::Waveform tone;
  tone.samples.resize(8000);
  for (size_t i = 0; i < tone.samples.size(); ++i) {
    tone.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 16000.0);
  }
  for (uint8_t v : mixsim::vad(tone)) CHECK(v == 1);
}

TEST_CASE("vad boundaries land within one frame of the construction") {
  // 0.5 s tone, 0.5 s silence, 0.5 s tone
  dsp::Waveform w;
  w.samples.assign(24000, 0.0);
  for (size_t i = 0; i < 8000; ++i) {
    const double v = 0.5 * std::sin(2.0 * std::numbers::pi * 500.0 * i / 16000.0);
    w.samples[i] = v;
    w.samples[i + 16000] = v;
  }
  const mixsim::VadConfig cfg;
  auto labels = mixsim::vad(w, cfg);

  const double hop_s = cfg.hop_ms / 1000.0;
  const double frame_s = cfg.frame_ms / 1000.0;
  for (size_t t = 0; t < labels.size(); ++t) {
    const double start = t * hop_s;
    const double end = start + frame_s;
    const bool clearly_voiced = end <= 0.5 || (start >= 1.0 && end <= 1.5);
    const bool clearly_silent = start >= 0.5 + hop_s && end <= 1.0 - hop_s;
    if (clearly_voiced) CHECK(labels[t] == 1);
    if (clearly_silent) CHECK(labels[t] == 0);
  }
}

TEST_CASE("mix patterns produce the contracted overlap classes") {
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  mixsim::SourceSpec hi{mixsim::SourceKind::kSinusoidBand, 2000.0, 3500.0, ""};
  auto a = mixsim::synth_source(lo, 3.0, 1);
  auto b = mixsim::synth_source(hi, 3.0, 2);

  SECTION("sequential has zero overlap") {
    auto s = mixsim::mix(a, b, mixsim::MixPattern::kSequential, 0.0, 20.0, 3);
    CHECK(s.overlap_ratio == 0.0);
    CHECK(s.overlap_class == mixsim::OverlapClass::kNonOverlap);
  }

  SECTION("full overlap of equal-length sources is complete") {
    auto s = mixsim::mix(a, b, mixsim::MixPattern::kFull, 0.0, 20.0, 3);
    CHECK(s.overlap_ratio >= 0.98);
    CHECK(s.overlap_class == mixsim::OverlapClass::kOverlap);
    CHECK(s.mixture.samples.size() == a.samples.size());
  }

  SECTION("partial overlap hits 40 percent within two points") {
    auto s = mixsim::mix(a, b, mixsim::MixPattern::kPartial, 0.4, 20.0, 3);
    CHECK(std::abs(s.overlap_ratio - 0.4) <= 0.02);
    CHECK(s.overlap_class == mixsim::OverlapClass::kOverlap);
    // class label is derivable from the references alone
    CHECK(mixsim::overlap_ratio_from_refs(s.references) == s.overlap_ratio);
  }

  SECTION("unreachable ratios are rejected") {
    auto tiny = mixsim::synth_source(hi, 0.4, 4);
    CHECK_THROWS_AS(mixsim::mix(a, tiny, mixsim::MixPattern::kPartial, 0.9, 20.0, 3),
                    std::invalid_argument);
  }
}

TEST_CASE("mixture equals references plus noise, sample for sample") {
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  mixsim::SourceSpec hi{mixsim::SourceKind::kSinusoidBand, 2000.0, 3500.0, ""};
  auto a = mixsim::synth_source(lo, 1.0, 5);
  auto b = mixsim::synth_source(hi, 1.0, 6);
  auto s = mixsim::mix(a, b, mixsim::MixPattern::kPartial, 0.5, 15.0, 7);

  REQUIRE(s.references.size() == 2);
  REQUIRE(s.noise.samples.size() == s.mixture.samples.size());
  for (size_t i = 0; i < s.mixture.samples.size(); ++i) {
    const double residual =
        s.mixture.samples[i] - s.references[0].samples[i] - s.references[1].samples[i];
    CHECK(residual == s.noise.samples[i]);
  }
}

TEST_CASE("noise lands within 0.1 dB of the requested snr") {
  mixsim::SourceSpec lo{mixsim::SourceKind::kSinusoidBand, 300.0, 1200.0, ""};
  mixsim::SourceSpec hi{mixsim::SourceKind::kSinusoidBand, 2000.0, 3500.0, ""};
  auto a = mixsim::synth_source(lo, 1.0, 8);
  auto b = mixsim::synth_source(hi, 1.0, 9);
  for (double snr : {0.0, 10.0, 25.0}) {
    auto s = mixsim::mix(a, b, mixsim::MixPattern::kFull, 0.0, snr, 10);
    double speech = 0.0;
    double noise = 0.0;
    for (size_t i = 0; i < s.mixture.samples.size(); ++i) {
      const double sp = s.references[0].samples[i] + s.references[1].samples[i];
      speech += sp * sp;
      noise += s.noise.samples[i] * s.noise.samples[i];
    }
    const double measured = 10.0 * std::log10(speech / noise);
    CHECK(measured == Catch::Approx(snr).margin(0.1));
  }
}

TEST_CASE("class-pure batching keeps classes separated and is seeded") {
  using mixsim::OverlapClass;
  std::vector<OverlapClass> classes;
  for (int i = 0; i < 8; ++i) classes.push_back(OverlapClass::kOverlap);
  for (int i = 0; i < 8; ++i) classes.push_back(OverlapClass::kNonOverlap);

  auto batches = mixsim::make_batches(classes, 4, true, 11);
  CHECK(batches.size() == 4);
  std::set<size_t> seen;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 4);
    const auto cls = classes[batch.front()];
    for (size_t idx : batch) {
      CHECK(classes[idx] == cls);
      seen.insert(idx);
    }
  }
  CHECK(seen.size() == 16);

  auto again = mixsim::make_batches(classes, 4, true, 11);
  CHECK(batches == again);
  auto other = mixsim::make_batches(classes, 4, true, 12);
  CHECK(batches != other);

  // short final batch allowed
  std::vector<OverlapClass> small(3, OverlapClass::kOverlap);
  auto short_batches = mixsim::make_batches(small, 4, true, 1);
  REQUIRE(short_batches.size() == 1);
  CHECK(short_batches[0].size() == 3);

  // mixed batches permitted when purity is off
  auto mixed = mixsim::make_batches(classes, 4, false, 13);
  CHECK(mixed.size() == 4);
}
