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

#ifndef STGRAM_SCORER_HPP_
#define STGRAM_SCORER_HPP_

#include <string>
#include <vector>

#include "stgram/dataio.hpp"
#include "stgram/trainer.hpp"

namespace stgram {

/// One test clip's anomaly score; higher = more anomalous.
struct ScoreRecord {
  std::string path;
  std::string machine_type;
  std::string machine_id;
  Condition condition = Condition::unknown;
  double score = 0.0;
};

/// -ln p(own machine-id class | clip) under the bundle's classifier, with
/// margin-free logits. Computed in 32-bit with a 1e-30 probability floor.
double anomaly_score(ModelBundle& bundle, const AudioClip& clip, const ClipLabel& label);

struct ScoreResult {
  std::vector<ScoreRecord> records;  // manifest order
  std::vector<RejectedFile> rejects;
  bool complete = true;
};

ScoreResult score_split(ModelBundle& bundle, const DatasetManifest& manifest,
                        int batch_size = 32);

void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores_csv(const std::string& path);

}  // namespace stgram

#endif  // STGRAM_SCORER_HPP_
