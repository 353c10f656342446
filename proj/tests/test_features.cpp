/* Copyright 2026 The stgram Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "stgram/features.hpp"
#include "stgram/nn.hpp"
#include "oracles.hpp"

using namespace stgram;

namespace {

AudioClip make_clip(std::vector<double> samples, int sr = 16000) {
  AudioClip clip;
  clip.samples = std::move(samples);
  clip.sample_rate = sr;
  clip.source_path = "memory";
  return clip;
}

AudioClip sine_clip(double freq, int64_t length, int sr = 16000, double amp = 0.4) {
  std::vector<double> s(static_cast<size_t>(length));
  for (int64_t i = 0; i < length; ++i) {
    s[static_cast<size_t>(i)] = amp * std::sin(2.0 * M_PI * freq * i / sr);
  }
  return make_clip(std::move(s), sr);
}

AudioClip noise_clip(nn::Rng& rng, int64_t length, double stddev) {
  std::vector<double> s(static_cast<size_t>(length));
  for (double& v : s) v = stddev * rng.normal();
  return make_clip(std::move(s));
}

SpectralConfig small_cfg() {
  SpectralConfig cfg;
  cfg.window_size = 256;
  cfg.hop_length = 128;
  cfg.mel_bins = 24;
  return cfg;
}

}  // namespace

TEST_CASE("mel scale follows the HTK formula") {
  CHECK(hz_to_mel(0.0) == doctest::Approx(0.0));
  // Scalar evaluation of 2595 * log10(1 + f/700).
  CHECK(hz_to_mel(1000.0) == doctest::Approx(2595.0 * std::log10(1.0 + 1000.0 / 700.0))
                                 .epsilon(1e-12));
  CHECK(hz_to_mel(1000.0) == doctest::Approx(999.9855).epsilon(1e-6));
  CHECK(mel_to_hz(hz_to_mel(440.0)) == doctest::Approx(440.0).epsilon(1e-12));
}

TEST_CASE("mel bank construction") {
  SpectralConfig cfg;

  SUBCASE("single filter spans (fmin, fmax)") {
    cfg.mel_bins = 1;
    MelBank bank = build_mel_bank(cfg);
    REQUIRE(bank.mel_bins == 1);
    int positive = 0;
    for (int b = 0; b < bank.fft_bins; ++b) {
      if (bank.at(0, b) > 0.0) ++positive;
    }
    CHECK(positive > 0);
    CHECK(bank.at(0, 0) == 0.0);                  // at fmin edge
    CHECK(bank.at(0, bank.fft_bins - 1) == 0.0);  // at fmax edge
  }

  SUBCASE("default bank: rows non-empty with contiguous support, centers increasing") {
    MelBank bank = build_mel_bank(cfg);
    double prev_center = -1.0;
    for (int m = 0; m < bank.mel_bins; ++m) {
      int first = -1, last = -1;
      double best = 0.0;
      int best_bin = 0;
      for (int b = 0; b < bank.fft_bins; ++b) {
        const double w = bank.at(m, b);
        CHECK(w >= 0.0);
        if (w > 0.0) {
          if (first < 0) first = b;
          last = b;
        }
        if (w > best) {
          best = w;
          best_bin = b;
        }
      }
      REQUIRE(first >= 0);  // every row has support
      for (int b = first; b <= last; ++b) CHECK(bank.at(m, b) > 0.0);  // contiguous
      CHECK(static_cast<double>(best_bin) > prev_center);
      prev_center = best_bin;
    }
  }

  SUBCASE("more mel bins than fft bins is a configuration error") {
    cfg.window_size = 16;
    cfg.hop_length = 8;
    cfg.mel_bins = 64;
    CHECK_THROWS_AS(build_mel_bank(cfg), std::invalid_argument);
  }
}

TEST_CASE("power spectrogram shapes and values") {
  SpectralConfig cfg;

  SUBCASE("all-zero clip gives an all-zero matrix") {
    Tensor p = power_spectrogram(make_clip(std::vector<double>(4096, 0.0)), cfg);
    for (int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == 0.0);
  }

  SUBCASE("10 s at 16 kHz yields 313 frames and 513 bins") {
    Tensor p = power_spectrogram(sine_clip(440.0, 160000), cfg);
    CHECK(p.dim(0) == 513);
    CHECK(p.dim(1) == 313);
  }

  SUBCASE("pure 1 kHz sine peaks at bin 64 in every interior frame") {
    Tensor p = power_spectrogram(sine_clip(1000.0, 16000), cfg);
    // Skip the first/last frames whose windows extend into the reflection
    // padding, where the mirrored sine leaks across neighbouring bins.
    for (int64_t t = 1; t + 2 < p.dim(1); ++t) {
      int64_t arg = 0;
      for (int64_t b = 1; b < p.dim(0); ++b) {
        if (p[b * p.dim(1) + t] > p[arg * p.dim(1) + t]) arg = b;
      }
      CHECK(arg == 64);  // 1000 / 16000 * 1024
    }
  }

  SUBCASE("an interior frame matches the direct DFT") {
    AudioClip clip = sine_clip(1000.0, 16000);
    Tensor p = power_spectrogram(clip, cfg);
    // Frame 5 starts at 5*512 - 512 = 2048, fully interior (no padding).
    const int64_t frame = 5;
    std::vector<double> windowed(1024);
    for (int i = 0; i < 1024; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / 1024.0);
      windowed[static_cast<size_t>(i)] = clip.samples[static_cast<size_t>(2048 + i)] * hann;
    }
    std::vector<double> reference = oracle::dft_power(windowed);
    for (int64_t b = 0; b < p.dim(0); ++b) {
      CHECK(oracle::relative_error(p[b * p.dim(1) + frame], reference[static_cast<size_t>(b)]) <
            1e-9);
    }
  }

  SUBCASE("non-finite samples are rejected") {
    auto clip = make_clip(std::vector<double>(2048, 0.0));
    clip.samples[100] = std::nan("");
    CHECK_THROWS_AS(power_spectrogram(clip, cfg), std::invalid_argument);
  }
}

TEST_CASE("log_mel values and shapes") {
  SpectralConfig cfg;

  SUBCASE("all-zero clip floors every entry at ln(log_floor)") {
    FeatureTensor f = log_mel(make_clip(std::vector<double>(4096, 0.0)), cfg);
    for (int64_t i = 0; i < f.data.size(); ++i) {
      CHECK(f.data[i] == doctest::Approx(std::log(1e-8)).epsilon(1e-12));
    }
  }

  SUBCASE("default config on a 10 s clip gives (1, 128, 313)") {
    FeatureTensor f = log_mel(sine_clip(500.0, 160000), cfg);
    REQUIRE(f.data.rank() == 3);
    CHECK(f.channels() == 1);
    CHECK(f.rows() == 128);
    CHECK(f.frames() == 313);
    CHECK(f.kind == FeatureKind::Sgram);
  }

  SUBCASE("doubling the amplitude adds ln(4) above the floor") {
    AudioClip clip = sine_clip(700.0, 16000, 16000, 0.2);
    AudioClip doubled = clip;
    for (double& v : doubled.samples) v *= 2.0;
    FeatureTensor a = log_mel(clip, cfg);
    FeatureTensor b = log_mel(doubled, cfg);
    const double floor_log = std::log(cfg.log_floor);
    int checked = 0;
    for (int64_t i = 0; i < a.data.size(); ++i) {
      if (a.data[i] > floor_log) {
        CHECK(b.data[i] - a.data[i] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
        ++checked;
      }
    }
    CHECK(checked > 100);
  }
}

TEST_CASE("log_spec matches the unprojected pipeline") {
  SpectralConfig cfg;

  SUBCASE("all-zero clip floors at ln(log_floor)") {
    FeatureTensor f = log_spec(make_clip(std::vector<double>(4096, 0.0)), cfg);
    for (int64_t i = 0; i < f.data.size(); ++i) {
      CHECK(f.data[i] == doctest::Approx(std::log(1e-8)).epsilon(1e-12));
    }
  }

  SUBCASE("default config gives (1, 513, 313)") {
    FeatureTensor f = log_spec(sine_clip(500.0, 160000), cfg);
    CHECK(f.channels() == 1);
    CHECK(f.rows() == 513);  // 1024/2 + 1
    CHECK(f.frames() == 313);
    CHECK(f.kind == FeatureKind::Spec);
  }

  SUBCASE("equals log of the floored power spectrogram (identity projection)") {
    AudioClip clip = sine_clip(750.0, 8000);
    Tensor p = power_spectrogram(clip, cfg);
    FeatureTensor f = log_spec(clip, cfg);
    for (int64_t i = 0; i < p.size(); ++i) {
      CHECK(f.data[i] == doctest::Approx(std::log(std::max(p[i], cfg.log_floor))).epsilon(1e-12));
    }
  }
}

TEST_CASE("fuse_stgram concatenates channels exactly") {
  FeatureTensor fs;
  fs.kind = FeatureKind::Sgram;
  fs.data = Tensor({1, 128, 313});
  FeatureTensor ft;
  ft.kind = FeatureKind::Tgram;
  ft.data = Tensor::full({1, 128, 313}, 1.0);

  FeatureTensor fused = fuse_stgram(fs, ft);
  REQUIRE(fused.data.shape() == std::vector<int64_t>{2, 128, 313});
  CHECK(fused.kind == FeatureKind::STgram);

  double sum0 = 0.0, sum1 = 0.0;
  const int64_t plane = 128 * 313;
  for (int64_t i = 0; i < plane; ++i) sum0 += fused.data[i];
  for (int64_t i = 0; i < plane; ++i) sum1 += fused.data[plane + i];
  CHECK(sum0 == 0.0);
  CHECK(sum1 == 40064.0);  // 128 * 313

  SUBCASE("round-trip split recovers both inputs bit-exactly") {
    CHECK(std::memcmp(fused.data.data(), fs.data.data(), sizeof(double) * plane) == 0);
    CHECK(std::memcmp(fused.data.data() + plane, ft.data.data(), sizeof(double) * plane) == 0);
  }

  SUBCASE("shape mismatch error names both shapes") {
    FeatureTensor bad;
    bad.kind = FeatureKind::Tgram;
    bad.data = Tensor({1, 64, 313});
    try {
      fuse_stgram(fs, bad);
      FAIL("expected a shape mismatch error");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(1, 128, 313)") != std::string::npos);
      CHECK(msg.find("(1, 64, 313)") != std::string::npos);
    }
  }
}

TEST_CASE("white-noise total power scales linearly with variance") {
  SpectralConfig cfg = small_cfg();
  nn::Rng rng(21);
  double total_lo = 0.0, total_hi = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor lo = power_spectrogram(noise_clip(rng, 4096, 0.1), cfg);
    Tensor hi = power_spectrogram(noise_clip(rng, 4096, 0.2), cfg);  // 4x variance
    for (int64_t i = 0; i < lo.size(); ++i) total_lo += lo[i];
    for (int64_t i = 0; i < hi.size(); ++i) total_hi += hi[i];
  }
  CHECK(total_hi / total_lo == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("log_mel is monotone in input scale") {
  SpectralConfig cfg = small_cfg();
  nn::Rng rng(22);
  AudioClip clip = noise_clip(rng, 4096, 0.05);
  AudioClip scaled = clip;
  for (double& v : scaled.samples) v *= 3.0;
  FeatureTensor a = log_mel(clip, cfg);
  FeatureTensor b = log_mel(scaled, cfg);
  for (int64_t i = 0; i < a.data.size(); ++i) CHECK(b.data[i] >= a.data[i]);
}

TEST_CASE("frame count depends only on length and hop") {
  SpectralConfig cfg = small_cfg();
  nn::Rng rng(23);
  for (int64_t len : {256, 1000, 4096, 5000}) {
    Tensor a = power_spectrogram(noise_clip(rng, len, 0.1), cfg);
    Tensor b = power_spectrogram(sine_clip(330.0, len), cfg);
    CHECK(a.dim(1) == len / cfg.hop_length + 1);
    CHECK(a.dim(1) == b.dim(1));
    CHECK(a.dim(1) == frame_count(len, cfg.hop_length));
  }
}

TEST_CASE("feature extraction is bit-deterministic") {
  SpectralConfig cfg;
  nn::Rng rng(24);
  AudioClip clip = noise_clip(rng, 16000, 0.1);
  FeatureTensor a = log_mel(clip, cfg);
  FeatureTensor b = log_mel(clip, cfg);
  CHECK(std::memcmp(a.data.data(), b.data.data(),
                    sizeof(double) * static_cast<size_t>(a.data.size())) == 0);
}

TEST_CASE("feature cache round-trips and invalidates on config change") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "stgram_feature_cache_test").string();
  fs::remove_all(dir);

  SpectralConfig cfg = small_cfg();
  AudioClip clip = sine_clip(950.0, 4096);
  clip.source_path = "/data/fan/train/normal_id_00_00000000.wav";
  FeatureTensor f = log_mel(clip, cfg);

  CHECK(!load_cached_feature(dir, clip.source_path, cfg, FeatureKind::Sgram).has_value());
  store_cached_feature(dir, clip.source_path, cfg, f);

  auto cached = load_cached_feature(dir, clip.source_path, cfg, FeatureKind::Sgram);
  REQUIRE(cached.has_value());
  CHECK(cached->data.shape() == f.data.shape());
  CHECK(std::memcmp(cached->data.data(), f.data.data(),
                    sizeof(double) * static_cast<size_t>(f.data.size())) == 0);

  SpectralConfig other = cfg;
  other.mel_bins = 32;
  CHECK(!load_cached_feature(dir, clip.source_path, other, FeatureKind::Sgram).has_value());
  CHECK(!load_cached_feature(dir, clip.source_path, cfg, FeatureKind::Spec).has_value());
  fs::remove_all(dir);
}

TEST_CASE("spectral config validation") {
  SpectralConfig cfg;
  cfg.hop_length = 2048;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SpectralConfig{};
  cfg.log_floor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SpectralConfig{};
  cfg.fmin = 9000.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
