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

#ifndef STGRAM_DATAIO_HPP_
#define STGRAM_DATAIO_HPP_

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stgram {

/// Fixed-length mono waveform, amplitude in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string source_path;
};

enum class Condition { normal, anomaly, unknown };

const char* condition_name(Condition c);
std::optional<Condition> condition_from_name(const std::string& name);

struct ClipLabel {
  std::string machine_type;
  std::string machine_id;
  Condition condition = Condition::unknown;
  int class_index = -1;
};

enum class Split { train, test };

const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

struct ManifestEntry {
  std::string path;
  ClipLabel label;
};

struct RejectedFile {
  std::string path;
  std::string reason;
};

/// (machine_type, machine_id) -> dense 0-based class index, lexicographic order.
using IdMap = std::map<std::pair<std::string, std::string>, int>;

struct DatasetManifest {
  std::vector<ManifestEntry> entries;  // sorted by (type, id, path)
  Split split = Split::train;
  int class_count = 0;
  IdMap id_map;
  std::vector<RejectedFile> rejects;
};

/// Walks root/<machine_type>/<split>/*.wav and labels every file from its
/// name (condition prefix before the first underscore, machine id after the
/// "id" token). Files that do not parse go to the rejects list.
///
/// When `reference_ids` is given (typically the training id_map), class
/// indices come from it and entries with unknown (type, id) are rejected
/// instead of being indexed.
DatasetManifest scan_dataset(const std::string& root, Split split,
                             const IdMap* reference_ids = nullptr);

/// Parses one DCASE-style file name, e.g. "normal_id_01_00000042.wav".
/// Returns condition + machine id, or an error reason.
bool parse_clip_filename(const std::string& filename, Condition* condition,
                         std::string* machine_id, std::string* error);

struct LoadOptions {
  bool allow_resample = false;  // sample-rate mismatch is an error unless set
};

/// Loads a WAV as a mono clip of exactly `target_length` samples: longer
/// input keeps the first samples, shorter input is zero-padded at the end.
/// Multichannel input is downmixed by averaging (with a warning).
AudioClip load_clip(const std::string& path, int target_sample_rate, int64_t target_length,
                    const LoadOptions& options = {});

void write_manifest_csv(const std::string& path, const DatasetManifest& manifest);
void write_manifest_json(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest_csv(const std::string& path, Split split);
void write_rejects_csv(const std::string& path, const std::vector<RejectedFile>& rejects);

}  // namespace stgram

#endif  // STGRAM_DATAIO_HPP_
