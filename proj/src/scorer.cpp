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

#include "stgram/scorer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "stgram/csv.hpp"
#include "stgram/log.hpp"
#include "stgram/nn.hpp"

namespace stgram {

namespace {

/// Own-class negative log probability from one row of inference logits.
/// The probability is floored at 1e-30 before the log so scores stay
/// bounded, and the resulting score is a 32-bit float.
double score_from_logits(const double* row, int64_t classes, int class_index) {
  std::vector<double> logits(row, row + classes);
  std::vector<double> probs = nn::softmax(logits);
  const double p = std::max(probs[static_cast<size_t>(class_index)], 1e-30);
  return static_cast<double>(static_cast<float>(-std::log(p)));
}

}  // namespace

double anomaly_score(ModelBundle& bundle, const AudioClip& clip, const ClipLabel& label) {
  auto it = bundle.id_map.find({label.machine_type, label.machine_id});
  if (it == bundle.id_map.end()) {
    throw std::invalid_argument("machine id (" + label.machine_type + ", " + label.machine_id +
                                ") is not in the model's id map");
  }
  std::vector<const AudioClip*> one{&clip};
  Tensor logits = bundle.inference_logits(one);
  return score_from_logits(logits.data(), logits.dim(1), it->second);
}

ScoreResult score_split(ModelBundle& bundle, const DatasetManifest& manifest, int batch_size) {
  if (manifest.split != Split::test) {
    throw std::invalid_argument("score_split requires a test-split manifest");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  ScoreResult result;
  const size_t n = manifest.entries.size();
  size_t begin = 0;
  while (begin < n) {
    const size_t end = std::min(n, begin + static_cast<size_t>(batch_size));

    std::vector<AudioClip> clips;
    std::vector<const ManifestEntry*> entries;
    std::vector<int> class_indices;
    clips.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
      const ManifestEntry& e = manifest.entries[i];
      auto it = bundle.id_map.find({e.label.machine_type, e.label.machine_id});
      if (it == bundle.id_map.end()) {
        result.rejects.push_back({e.path, "machine id (" + e.label.machine_type + ", " +
                                              e.label.machine_id + ") not in model id map"});
        result.complete = false;
        continue;
      }
      if (e.label.condition == Condition::unknown) {
        result.rejects.push_back({e.path, "unknown ground-truth condition"});
        result.complete = false;
        continue;
      }
      try {
        clips.push_back(load_clip(e.path, bundle.spectral.sample_rate,
                                  bundle.train_cfg.clip_samples));
        entries.push_back(&e);
        class_indices.push_back(it->second);
      } catch (const std::exception& ex) {
        result.rejects.push_back({e.path, ex.what()});
        result.complete = false;
      }
    }

    if (!clips.empty()) {
      std::vector<const AudioClip*> refs;
      refs.reserve(clips.size());
      for (const AudioClip& c : clips) refs.push_back(&c);
      Tensor logits = bundle.inference_logits(refs);
      for (size_t i = 0; i < entries.size(); ++i) {
        ScoreRecord rec;
        rec.path = entries[i]->path;
        rec.machine_type = entries[i]->label.machine_type;
        rec.machine_id = entries[i]->label.machine_id;
        rec.condition = entries[i]->label.condition;
        rec.score = score_from_logits(logits.data() + static_cast<int64_t>(i) * logits.dim(1),
                                      logits.dim(1), class_indices[i]);
        result.records.push_back(std::move(rec));
      }
    }
    begin = end;
  }

  for (const auto& rej : result.rejects) {
    log_warning("scoring rejected ", rej.path, ": ", rej.reason);
  }
  return result;
}

void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scores: " + path);
  out << "path,machine_type,machine_id,condition,score\n";
  out.precision(9);
  for (const auto& r : records) {
    out << csv_join({r.path, r.machine_type, r.machine_id, condition_name(r.condition)}) << ",";
    out << r.score << "\n";
  }
}

std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
  auto rows = csv_read_file(path);
  if (rows.empty()) throw std::runtime_error("empty scores file: " + path);
  std::vector<ScoreRecord> records;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 5) {
      throw std::runtime_error("malformed scores row " + std::to_string(i) + " in " + path);
    }
    auto cond = condition_from_name(row[3]);
    if (!cond || *cond == Condition::unknown) {
      throw std::runtime_error("bad condition '" + row[3] + "' in " + path);
    }
    ScoreRecord rec;
    rec.path = row[0];
    rec.machine_type = row[1];
    rec.machine_id = row[2];
    rec.condition = *cond;
    rec.score = std::stod(row[4]);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace stgram
