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
#include <fstream>

#include "stgram/dataio.hpp"
#include "stgram/wav.hpp"

namespace fs = std::filesystem;
using namespace stgram;

namespace {

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& name) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }

  std::string add_wav(const std::string& rel, int64_t samples = 64, int sr = 16000,
                      double value = 0.25) {
    fs::path p = root / rel;
    fs::create_directories(p.parent_path());
    write_wav_pcm16(p.string(), std::vector<double>(static_cast<size_t>(samples), value), sr);
    return p.string();
  }
};

}  // namespace

TEST_CASE("clip filename grammar") {
  Condition cond;
  std::string id, error;

  CHECK(parse_clip_filename("normal_id_01_00000042.wav", &cond, &id, &error));
  CHECK(cond == Condition::normal);
  CHECK(id == "01");

  CHECK(parse_clip_filename("anomaly_id_02_00000005.wav", &cond, &id, &error));
  CHECK(cond == Condition::anomaly);
  CHECK(id == "02");

  CHECK(!parse_clip_filename("weird_id_01_0.wav", &cond, &id, &error));
  CHECK(error.find("condition") != std::string::npos);
  CHECK(!parse_clip_filename("normal_01_0.wav", &cond, &id, &error));
  CHECK(error.find("id") != std::string::npos);
}

TEST_CASE("scan_dataset labels a single-class tree") {
  TempTree tree("stgram_scan_single");
  tree.add_wav("fan/train/normal_id_00_00000001.wav");
  tree.add_wav("fan/train/normal_id_00_00000002.wav");
  tree.add_wav("fan/train/normal_id_00_00000003.wav");

  DatasetManifest m = scan_dataset(tree.root.string(), Split::train);
  CHECK(m.entries.size() == 3);
  CHECK(m.class_count == 1);
  CHECK(m.rejects.empty());
  for (const auto& e : m.entries) {
    CHECK(e.label.machine_type == "fan");
    CHECK(e.label.machine_id == "00");
    CHECK(e.label.class_index == 0);
    CHECK(e.label.condition == Condition::normal);
  }
}

TEST_CASE("anomaly test files share the class index of their id") {
  TempTree tree("stgram_scan_sym");
  tree.add_wav("fan/train/normal_id_01_00000001.wav");
  tree.add_wav("fan/train/normal_id_02_00000001.wav");
  tree.add_wav("fan/test/normal_id_02_00000001.wav");
  tree.add_wav("fan/test/anomaly_id_02_00000005.wav");

  DatasetManifest train = scan_dataset(tree.root.string(), Split::train);
  DatasetManifest test = scan_dataset(tree.root.string(), Split::test, &train.id_map);
  REQUIRE(test.entries.size() == 2);
  const int idx_02 = train.id_map.at({"fan", "02"});
  for (const auto& e : test.entries) {
    CHECK(e.label.class_index == idx_02);
  }
  const auto& anomaly_entry = test.entries[0].label.condition == Condition::anomaly
                                  ? test.entries[0]
                                  : test.entries[1];
  CHECK(anomaly_entry.label.condition == Condition::anomaly);
}

TEST_CASE("scan is deterministic regardless of creation order") {
  TempTree a("stgram_scan_order_a");
  TempTree b("stgram_scan_order_b");
  const char* files[] = {"pump/train/normal_id_02_00000002.wav",
                         "fan/train/normal_id_00_00000001.wav",
                         "pump/train/normal_id_00_00000009.wav",
                         "fan/train/normal_id_01_00000004.wav"};
  for (const char* f : files) a.add_wav(f);
  for (int i = 3; i >= 0; --i) b.add_wav(files[i]);

  DatasetManifest ma = scan_dataset(a.root.string(), Split::train);
  DatasetManifest mb = scan_dataset(b.root.string(), Split::train);
  DatasetManifest ma2 = scan_dataset(a.root.string(), Split::train);

  REQUIRE(ma.entries.size() == 4);
  REQUIRE(mb.entries.size() == 4);
  CHECK(ma.class_count == mb.class_count);
  for (size_t i = 0; i < ma.entries.size(); ++i) {
    CHECK(fs::path(ma.entries[i].path).filename() == fs::path(mb.entries[i].path).filename());
    CHECK(ma.entries[i].label.class_index == mb.entries[i].label.class_index);
    CHECK(ma.entries[i].path == ma2.entries[i].path);
  }

  // Dense 0-based lexicographic class indices.
  CHECK(ma.id_map.at({"fan", "00"}) == 0);
  CHECK(ma.id_map.at({"fan", "01"}) == 1);
  CHECK(ma.id_map.at({"pump", "00"}) == 2);
  CHECK(ma.id_map.at({"pump", "02"}) == 3);
}

TEST_CASE("unparsable names go to the rejects report") {
  TempTree tree("stgram_scan_rejects");
  tree.add_wav("fan/train/normal_id_00_00000001.wav");
  tree.add_wav("fan/train/README_notes.wav");

  DatasetManifest m = scan_dataset(tree.root.string(), Split::train);
  CHECK(m.entries.size() == 1);
  REQUIRE(m.rejects.size() == 1);
  CHECK(m.rejects[0].path.find("README_notes") != std::string::npos);
}

TEST_CASE("missing root is a configuration error") {
  CHECK_THROWS_AS(scan_dataset("/nonexistent/stgram/root", Split::train), std::invalid_argument);
}

TEST_CASE("test ids unknown to the reference map are rejected, not indexed") {
  TempTree tree("stgram_scan_refmap");
  tree.add_wav("fan/train/normal_id_00_00000001.wav");
  tree.add_wav("fan/test/anomaly_id_07_00000001.wav");

  DatasetManifest train = scan_dataset(tree.root.string(), Split::train);
  DatasetManifest test = scan_dataset(tree.root.string(), Split::test, &train.id_map);
  CHECK(test.entries.empty());
  REQUIRE(test.rejects.size() == 1);
  CHECK(test.rejects[0].reason.find("id map") != std::string::npos);
}

TEST_CASE("the DCASE-style id layout yields 41 classes") {
  TempTree tree("stgram_scan_41");
  const char* mimii[] = {"fan", "pump", "slider", "valve"};
  for (const char* type : mimii) {
    for (int id = 0; id < 7; ++id) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s/train/normal_id_%02d_00000000.wav", type, id);
      tree.add_wav(name);
    }
  }
  for (int id = 0; id < 7; ++id) {
    char name[64];
    std::snprintf(name, sizeof(name), "ToyCar/train/normal_id_%02d_00000000.wav", id);
    tree.add_wav(name);
  }
  for (int id = 0; id < 6; ++id) {
    char name[64];
    std::snprintf(name, sizeof(name), "ToyConveyor/train/normal_id_%02d_00000000.wav", id);
    tree.add_wav(name);
  }
  DatasetManifest m = scan_dataset(tree.root.string(), Split::train);
  CHECK(m.class_count == 41);  // 4*7 + 7 + 6
  CHECK(m.entries.size() == 41);
}

TEST_CASE("load_clip length handling") {
  TempTree tree("stgram_load");

  SUBCASE("exact length is passed through") {
    std::vector<double> ramp(160);
    for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = (static_cast<double>(i) - 80.0) / 100.0;
    fs::path p = tree.root / "exact.wav";
    write_wav_pcm16(p.string(), ramp, 16000);
    AudioClip clip = load_clip(p.string(), 16000, 160);
    REQUIRE(clip.samples.size() == 160);
    for (size_t i = 0; i < 160; ++i) {
      CHECK(clip.samples[i] == doctest::Approx(ramp[i]).epsilon(1e-3));
    }
  }

  SUBCASE("short clips gain trailing zeros") {
    std::string p = tree.add_wav("short.wav", 159, 16000, 0.5);
    AudioClip clip = load_clip(p, 16000, 160);
    REQUIRE(clip.samples.size() == 160);
    CHECK(clip.samples[158] == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(clip.samples[159] == 0.0);
  }

  SUBCASE("long clips keep the first target_length samples") {
    std::vector<double> ramp(200);
    for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i) / 400.0;
    fs::path p = tree.root / "long.wav";
    write_wav_pcm16(p.string(), ramp, 16000);
    AudioClip clip = load_clip(p.string(), 16000, 160);
    REQUIRE(clip.samples.size() == 160);
    CHECK(clip.samples[159] == doctest::Approx(ramp[159]).epsilon(1e-3));
  }

  SUBCASE("output length is always target_length") {
    for (int64_t src_len : {1, 50, 160, 999}) {
      std::string p = tree.add_wav("var.wav", src_len);
      AudioClip clip = load_clip(p, 16000, 160);
      CHECK(static_cast<int64_t>(clip.samples.size()) == 160);
    }
  }
}

TEST_CASE("load_clip sample-rate and channel handling") {
  TempTree tree("stgram_load_sr");

  SUBCASE("sample-rate mismatch errors unless resampling is allowed") {
    std::string p = tree.add_wav("sr8k.wav", 80, 8000);
    CHECK_THROWS_AS(load_clip(p, 16000, 160), std::runtime_error);
    LoadOptions opts;
    opts.allow_resample = true;
    AudioClip clip = load_clip(p, 16000, 160, opts);
    CHECK(clip.samples.size() == 160);
    CHECK(clip.sample_rate == 16000);
  }

  SUBCASE("stereo input is downmixed by averaging") {
    // Hand-build a 2-channel PCM16 WAV: L = +0.5, R = -0.5 -> mean 0.
    fs::path p = tree.root / "stereo.wav";
    {
      std::vector<double> mono(32, 0.0);
      write_wav_pcm16(p.string(), mono, 16000);  // template header
    }
    // Rewrite as stereo by patching channels and interleaving.
    std::ifstream in(p.string(), std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    bytes[22] = 2;  // channels
    std::ofstream out(p.string(), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), 44);
    for (int i = 0; i < 16; ++i) {
      int16_t l = 16384, r = -16384;
      out.write(reinterpret_cast<const char*>(&l), 2);
      out.write(reinterpret_cast<const char*>(&r), 2);
    }
    out.close();
    AudioClip clip = load_clip(p.string(), 16000, 16);
    for (double v : clip.samples) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
  }
}

TEST_CASE("pcm16 wav io round-trip") {
  TempTree tree("stgram_wavio");
  std::vector<double> samples(256);
  for (size_t i = 0; i < samples.size(); ++i) samples[i] = 0.7 * std::sin(0.05 * i);
  fs::path p = tree.root / "roundtrip.wav";
  write_wav_pcm16(p.string(), samples, 16000);
  WavData wav = read_wav(p.string());
  CHECK(wav.sample_rate == 16000);
  CHECK(wav.channels == 1);
  REQUIRE(wav.samples.size() == samples.size());
  // Write scales by 32767, read normalizes by 32768; bound covers both the
  // quantization step and that scale asymmetry.
  for (size_t i = 0; i < samples.size(); ++i) {
    const double bound = 0.5 / 32767.0 + std::abs(samples[i]) / 32768.0 + 1e-9;
    CHECK(std::abs(wav.samples[i] - samples[i]) < bound);
  }
  CHECK_THROWS(read_wav((tree.root / "missing.wav").string()));
}

TEST_CASE("manifest serialization round-trips") {
  TempTree tree("stgram_manifest");
  tree.add_wav("fan/train/normal_id_00_00000001.wav");
  tree.add_wav("pump/train/normal_id_03_00000001.wav");
  DatasetManifest m = scan_dataset(tree.root.string(), Split::train);

  fs::path csv = tree.root / "manifest.csv";
  fs::path json_path = tree.root / "manifest.json";
  write_manifest_csv(csv.string(), m);
  write_manifest_json(json_path.string(), m);
  CHECK(fs::exists(json_path));

  DatasetManifest loaded = read_manifest_csv(csv.string(), Split::train);
  REQUIRE(loaded.entries.size() == m.entries.size());
  CHECK(loaded.class_count == m.class_count);
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(loaded.entries[i].path == m.entries[i].path);
    CHECK(loaded.entries[i].label.machine_type == m.entries[i].label.machine_type);
    CHECK(loaded.entries[i].label.machine_id == m.entries[i].label.machine_id);
    CHECK(loaded.entries[i].label.class_index == m.entries[i].label.class_index);
  }
}
