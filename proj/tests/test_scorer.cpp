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
#include <filesystem>
#include <set>

#include "stgram/features.hpp"
#include "stgram/scorer.hpp"
#include "stgram/synth.hpp"
#include "stgram/trainer.hpp"

namespace fs = std::filesystem;
using namespace stgram;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SpectralConfig tiny_spectral() {
  SpectralConfig cfg;
  cfg.window_size = 64;
  cfg.hop_length = 32;
  cfg.mel_bins = 16;
  return cfg;
}

TrainConfig tiny_train(HeadKind head = HeadKind::cee) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.base_lr = 1e-3;
  cfg.seed = 3;
  cfg.head_kind = head;
  cfg.clip_samples = 512;
  cfg.mfn_preset = "compact";
  return cfg;
}

IdMap four_ids() {
  return {{{"piston", "00"}, 0},
          {{"piston", "01"}, 1},
          {{"rotor", "00"}, 2},
          {{"rotor", "01"}, 3}};
}

AudioClip probe_clip() {
  AudioClip clip;
  clip.samples.resize(512);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.3 * std::sin(0.07 * static_cast<double>(i));
  }
  clip.sample_rate = 16000;
  clip.source_path = "probe";
  return clip;
}

uint64_t state_hash(const ModelBundle& bundle) {
  std::vector<nn::ParamTensor*> state;
  bundle.collect_state(state);
  uint64_t h = 1469598103934665603ull;
  for (const auto* p : state) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (int64_t i = 0; i < p->value.size() * static_cast<int64_t>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("anomaly score equals the negative log own-class probability") {
  ModelBundle bundle = ModelBundle::create(tiny_spectral(), tiny_train(), four_ids());
  std::vector<nn::ParamTensor*> state;
  bundle.head->collect_state(state);

  SUBCASE("uniform model scores ln(C)") {
    for (auto* p : state) p->value.fill(0.0);  // zero weights and bias: uniform softmax
    const double score =
        anomaly_score(bundle, probe_clip(), {"piston", "01", Condition::normal, 1});
    CHECK(score == doctest::Approx(std::log(4.0)).epsilon(1e-6));  // p(own) = 0.25 -> ln 4
  }

  SUBCASE("a certain model scores zero") {
    for (auto* p : state) p->value.fill(0.0);
    // Bias the true class by 60 logits: p(own) -> 1, score -> 0.
    for (auto* p : state) {
      if (p->name.find("bias") != std::string::npos) p->value[1] = 60.0;
    }
    const double score =
        anomaly_score(bundle, probe_clip(), {"piston", "01", Condition::normal, 1});
    CHECK(score >= 0.0);
    CHECK(score < 1e-12);
  }

  SUBCASE("unknown machine id is never scored") {
    CHECK_THROWS_AS(anomaly_score(bundle, probe_clip(), {"fan", "00", Condition::normal, 0}),
                    std::invalid_argument);
  }
}

TEST_CASE("exp(-score) recovers the own-class probability") {
  ModelBundle bundle = ModelBundle::create(tiny_spectral(), tiny_train(), four_ids());
  AudioClip clip = probe_clip();
  const ClipLabel label{"rotor", "00", Condition::normal, 2};
  const double score = anomaly_score(bundle, clip, label);
  CHECK(score >= 0.0);

  std::vector<const AudioClip*> one{&clip};
  Tensor logits = bundle.inference_logits(one);
  std::vector<double> row(logits.data(), logits.data() + logits.dim(1));
  const double p = nn::softmax(row)[2];
  CHECK(std::exp(-score) == doctest::Approx(p).epsilon(1e-6));
  CHECK(std::exp(-score) > 0.0);
  CHECK(std::exp(-score) <= 1.0);
}

TEST_CASE("score_split covers the manifest deterministically") {
  TempDir dir("stgram_scorer_split");
  SynthConfig synth;
  synth.root = (dir.path / "data").string();
  synth.seed = 17;
  synth.clip_seconds = 512.0 / 16000.0;
  synth.train_per_id = 4;
  synth.test_normal_per_id = 3;
  synth.test_anomaly_per_id = 2;
  generate_synthetic_dataset(synth);

  DatasetManifest train_manifest = scan_dataset(synth.root, Split::train);
  ModelBundle bundle = train(train_manifest, tiny_spectral(), tiny_train());
  DatasetManifest test_manifest = scan_dataset(synth.root, Split::test, &train_manifest.id_map);

  SUBCASE("train split is rejected") {
    CHECK_THROWS_AS(score_split(bundle, train_manifest), std::invalid_argument);
  }

  SUBCASE("records follow manifest order and partition by (type, id)") {
    ScoreResult result = score_split(bundle, test_manifest);
    CHECK(result.complete);
    REQUIRE(result.records.size() == test_manifest.entries.size());
    std::set<std::pair<std::string, std::string>> seen;
    for (size_t i = 0; i < result.records.size(); ++i) {
      CHECK(result.records[i].path == test_manifest.entries[i].path);
      CHECK(std::isfinite(result.records[i].score));
      seen.insert({result.records[i].machine_type, result.records[i].machine_id});
    }
    CHECK(seen.size() == 4);
  }

  SUBCASE("batch size does not change the scores") {
    ScoreResult one = score_split(bundle, test_manifest, 1);
    ScoreResult many = score_split(bundle, test_manifest, 32);
    REQUIRE(one.records.size() == many.records.size());
    for (size_t i = 0; i < one.records.size(); ++i) {
      CHECK(std::abs(one.records[i].score - many.records[i].score) < 1e-6);
    }
  }

  SUBCASE("scoring never mutates the bundle") {
    const uint64_t before = state_hash(bundle);
    score_split(bundle, test_manifest);
    CHECK(state_hash(bundle) == before);
  }

  SUBCASE("empty manifest gives an empty record list") {
    DatasetManifest empty;
    empty.split = Split::test;
    ScoreResult result = score_split(bundle, empty);
    CHECK(result.records.empty());
    CHECK(result.complete);
  }

  SUBCASE("unknown ids land in the rejects report with an incomplete flag") {
    DatasetManifest tainted = test_manifest;
    tainted.entries[0].label.machine_id = "99";
    ScoreResult result = score_split(bundle, tainted);
    CHECK(!result.complete);
    REQUIRE(result.rejects.size() == 1);
    CHECK(result.records.size() == test_manifest.entries.size() - 1);
  }

  SUBCASE("scores CSV round-trips") {
    ScoreResult result = score_split(bundle, test_manifest);
    const std::string path = (dir.path / "scores.csv").string();
    write_scores_csv(path, result.records);
    std::vector<ScoreRecord> loaded = read_scores_csv(path);
    REQUIRE(loaded.size() == result.records.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
      CHECK(loaded[i].path == result.records[i].path);
      CHECK(loaded[i].machine_type == result.records[i].machine_type);
      CHECK(loaded[i].machine_id == result.records[i].machine_id);
      CHECK(loaded[i].condition == result.records[i].condition);
      CHECK(loaded[i].score == doctest::Approx(result.records[i].score).epsilon(1e-7));
    }
  }
}
