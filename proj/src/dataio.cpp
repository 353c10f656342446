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

#include "stgram/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "stgram/csv.hpp"
#include "stgram/log.hpp"
#include "stgram/wav.hpp"

namespace fs = std::filesystem;

namespace stgram {

const char* condition_name(Condition c) {
  switch (c) {
    case Condition::normal: return "normal";
    case Condition::anomaly: return "anomaly";
    case Condition::unknown: return "unknown";
  }
  return "?";
}

std::optional<Condition> condition_from_name(const std::string& name) {
  if (name == "normal") return Condition::normal;
  if (name == "anomaly") return Condition::anomaly;
  if (name == "unknown") return Condition::unknown;
  return std::nullopt;
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  return std::nullopt;
}

bool parse_clip_filename(const std::string& filename, Condition* condition,
                         std::string* machine_id, std::string* error) {
  std::string stem = filename;
  auto dot = stem.rfind('.');
  if (dot != std::string::npos) stem = stem.substr(0, dot);

  std::vector<std::string> tokens;
  std::string cur;
  for (char c : stem) {
    if (c == '_') {
      tokens.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  tokens.push_back(cur);

  if (tokens.empty() || tokens[0].empty()) {
    *error = "empty condition token";
    return false;
  }
  auto cond = condition_from_name(tokens[0]);
  if (!cond || *cond == Condition::unknown) {
    *error = "unknown condition token '" + tokens[0] + "'";
    return false;
  }

  for (size_t i = 1; i + 1 < tokens.size(); ++i) {
    if (tokens[i] == "id") {
      if (tokens[i + 1].empty()) {
        *error = "empty machine id after 'id' token";
        return false;
      }
      *condition = *cond;
      *machine_id = tokens[i + 1];
      return true;
    }
  }
  *error = "no 'id' token in file name";
  return false;
}

DatasetManifest scan_dataset(const std::string& root, Split split, const IdMap* reference_ids) {
  if (!fs::exists(root) || !fs::is_directory(root)) {
    throw std::invalid_argument("dataset root does not exist or is not a directory: " + root);
  }

  struct RawEntry {
    std::string path, machine_type, machine_id;
    Condition condition;
  };
  std::vector<RawEntry> raw;
  std::vector<RejectedFile> rejects;

  std::vector<fs::path> type_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) type_dirs.push_back(e.path());
  }
  std::sort(type_dirs.begin(), type_dirs.end());

  for (const auto& type_dir : type_dirs) {
    fs::path split_dir = type_dir / split_name(split);
    if (!fs::exists(split_dir) || !fs::is_directory(split_dir)) continue;
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(split_dir)) {
      if (!f.is_regular_file()) continue;
      std::string ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (ext != ".wav") continue;
      files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Condition cond;
      std::string id, error;
      if (!parse_clip_filename(f.filename().string(), &cond, &id, &error)) {
        rejects.push_back({f.string(), error});
        continue;
      }
      raw.push_back({f.string(), type_dir.filename().string(), id, cond});
    }
  }

  DatasetManifest manifest;
  manifest.split = split;

  if (reference_ids != nullptr) {
    manifest.id_map = *reference_ids;
  } else {
    for (const auto& r : raw) manifest.id_map[{r.machine_type, r.machine_id}] = 0;
    int next = 0;
    for (auto& kv : manifest.id_map) kv.second = next++;  // std::map iterates lexicographically
  }
  manifest.class_count = static_cast<int>(manifest.id_map.size());

  for (const auto& r : raw) {
    auto it = manifest.id_map.find({r.machine_type, r.machine_id});
    if (it == manifest.id_map.end()) {
      rejects.push_back({r.path, "machine id (" + r.machine_type + ", " + r.machine_id +
                                     ") not present in reference id map"});
      continue;
    }
    ManifestEntry entry;
    entry.path = r.path;
    entry.label = {r.machine_type, r.machine_id, r.condition, it->second};
    manifest.entries.push_back(std::move(entry));
  }

  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              auto ka = std::tie(a.label.machine_type, a.label.machine_id, a.path);
              auto kb = std::tie(b.label.machine_type, b.label.machine_id, b.path);
              return ka < kb;
            });
  std::sort(rejects.begin(), rejects.end(),
            [](const RejectedFile& a, const RejectedFile& b) { return a.path < b.path; });
  manifest.rejects = std::move(rejects);
  for (const auto& rej : manifest.rejects) {
    log_warning("rejected dataset file ", rej.path, ": ", rej.reason);
  }
  return manifest;
}

AudioClip load_clip(const std::string& path, int target_sample_rate, int64_t target_length,
                    const LoadOptions& options) {
  if (target_length <= 0) throw std::invalid_argument("target_length must be positive");
  WavData wav = read_wav(path);

  std::vector<double> mono;
  if (wav.channels == 1) {
    mono = std::move(wav.samples);
  } else {
    log_warning("downmixing ", wav.channels, "-channel file to mono by averaging: ", path);
    int64_t frames = wav.frame_count();
    mono.resize(static_cast<size_t>(frames));
    for (int64_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (int c = 0; c < wav.channels; ++c) acc += wav.samples[static_cast<size_t>(f * wav.channels + c)];
      mono[static_cast<size_t>(f)] = acc / wav.channels;
    }
  }

  if (wav.sample_rate != target_sample_rate) {
    if (!options.allow_resample) {
      throw std::runtime_error("sample rate mismatch for " + path + ": file has " +
                               std::to_string(wav.sample_rate) + " Hz, expected " +
                               std::to_string(target_sample_rate) +
                               " Hz (pass allow_resample to convert)");
    }
    // Linear-interpolation resample.
    std::vector<double> resampled;
    if (!mono.empty()) {
      double ratio = static_cast<double>(wav.sample_rate) / target_sample_rate;
      auto out_len = static_cast<int64_t>(std::floor((mono.size() - 1) / ratio)) + 1;
      resampled.resize(static_cast<size_t>(out_len));
      for (int64_t i = 0; i < out_len; ++i) {
        double src = i * ratio;
        auto lo = static_cast<int64_t>(std::floor(src));
        auto hi = std::min<int64_t>(lo + 1, static_cast<int64_t>(mono.size()) - 1);
        double frac = src - lo;
        resampled[static_cast<size_t>(i)] =
            mono[static_cast<size_t>(lo)] * (1.0 - frac) + mono[static_cast<size_t>(hi)] * frac;
      }
    }
    mono = std::move(resampled);
  }

  // Length normalization: keep the head of long clips, zero-pad short ones.
  if (static_cast<int64_t>(mono.size()) > target_length) {
    mono.resize(static_cast<size_t>(target_length));
  } else if (static_cast<int64_t>(mono.size()) < target_length) {
    mono.resize(static_cast<size_t>(target_length), 0.0);
  }

  for (double v : mono) {
    if (!std::isfinite(v)) throw std::runtime_error("non-finite sample in " + path);
  }

  AudioClip clip;
  clip.samples = std::move(mono);
  clip.sample_rate = target_sample_rate;
  clip.source_path = path;
  return clip;
}

void write_manifest_csv(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << "path,machine_type,machine_id,condition,class_index\n";
  for (const auto& e : manifest.entries) {
    out << csv_join({e.path, e.label.machine_type, e.label.machine_id,
                     condition_name(e.label.condition), std::to_string(e.label.class_index)})
        << "\n";
  }
}

void write_manifest_json(const std::string& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["split"] = split_name(manifest.split);
  j["class_count"] = manifest.class_count;
  auto& id_map = j["id_map"] = nlohmann::json::array();
  for (const auto& kv : manifest.id_map) {
    id_map.push_back({{"machine_type", kv.first.first},
                      {"machine_id", kv.first.second},
                      {"class_index", kv.second}});
  }
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"path", e.path},
                       {"machine_type", e.label.machine_type},
                       {"machine_id", e.label.machine_id},
                       {"condition", condition_name(e.label.condition)},
                       {"class_index", e.label.class_index}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest_csv(const std::string& path, Split split) {
  auto rows = csv_read_file(path);
  if (rows.empty()) throw std::runtime_error("empty manifest: " + path);
  DatasetManifest manifest;
  manifest.split = split;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 5) {
      throw std::runtime_error("malformed manifest row " + std::to_string(i) + " in " + path);
    }
    auto cond = condition_from_name(row[3]);
    if (!cond) throw std::runtime_error("bad condition '" + row[3] + "' in " + path);
    ManifestEntry e;
    e.path = row[0];
    e.label = {row[1], row[2], *cond, std::stoi(row[4])};
    manifest.entries.push_back(std::move(e));
  }
  for (const auto& e : manifest.entries) {
    manifest.id_map[{e.label.machine_type, e.label.machine_id}] = e.label.class_index;
  }
  manifest.class_count = static_cast<int>(manifest.id_map.size());
  return manifest;
}

void write_rejects_csv(const std::string& path, const std::vector<RejectedFile>& rejects) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write rejects report: " + path);
  out << "path,reason\n";
  for (const auto& r : rejects) out << csv_join({r.path, r.reason}) << "\n";
}

}  // namespace stgram
