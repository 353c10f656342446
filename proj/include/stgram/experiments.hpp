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

#ifndef STGRAM_EXPERIMENTS_HPP_
#define STGRAM_EXPERIMENTS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "stgram/metrics.hpp"
#include "stgram/scorer.hpp"
#include "stgram/trainer.hpp"

namespace stgram {

struct AblationCell {
  FeatureKind feature = FeatureKind::STgram;
  HeadKind head = HeadKind::arcface;
};

/// Display name like "STgram-MFN(ArcFace)" or "LogMel-MFN(CEE)".
std::string ablation_cell_name(const AblationCell& cell);

struct ExperimentConfig {
  std::string dataset_root;
  std::string output_dir = "runs";
  std::string run_id = "run";
  SpectralConfig spectral;
  TrainConfig train;
  double pauc_p = 0.1;
  int score_batch = 32;
  // Single-feature baselines train under CEE; the fused feature gets both heads.
  std::vector<AblationCell> ablation = {{FeatureKind::Sgram, HeadKind::cee},
                                        {FeatureKind::Tgram, HeadKind::cee},
                                        {FeatureKind::Spec, HeadKind::cee},
                                        {FeatureKind::STgram, HeadKind::cee},
                                        {FeatureKind::STgram, HeadKind::arcface}};

  void validate() const;
};

/// Loads a YAML experiment config, then applies dotted-key overrides such as
/// "train.epochs=2". The STGRAM_DATASET_ROOT environment variable, when set,
/// overrides dataset_root.
ExperimentConfig load_experiment_config(const std::string& yaml_path,
                                        const std::vector<std::string>& overrides = {});
/// Defaults only (no file), still honoring overrides and the environment.
ExperimentConfig default_experiment_config(const std::vector<std::string>& overrides = {});

/// Artifact ledger for one run directory. Creating a manifest in a directory
/// that already has one refuses, so reruns never silently overwrite.
class RunManifest {
 public:
  static RunManifest create(const std::string& run_dir);
  void record(const std::string& relative_path);
  void save() const;
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

struct AblationCellResult {
  AblationCell cell;
  bool ok = false;
  std::string error;
  std::string cell_dir;
  MetricsReport report;  // valid when ok
};

struct AblationResult {
  double p = 0.1;
  std::vector<AblationCellResult> cells;
  std::string run_dir;
};

/// Trains, scores and evaluates every ablation cell. A failed cell is
/// recorded and the remaining cells proceed; a missing or empty dataset
/// throws before any artifact is written.
AblationResult run_ablation(const ExperimentConfig& cfg);

/// Combined comparison table: machine types as rows, one (AUC, mAUC) column
/// pair per cell, Average row; values in percent.
std::string render_ablation_table(const AblationResult& result);
void write_ablation_csv(const std::string& path, const AblationResult& result);
void write_ablation_json(const std::string& path, const AblationResult& result);

struct EmbeddingExportResult {
  int64_t rows = 0;
  std::vector<RejectedFile> rejects;
  bool complete = true;
};

/// One CSV row per clip: D embedding values then machine_type, machine_id,
/// condition. `expected_kind`, when set, must match the bundle's feature.
EmbeddingExportResult export_embeddings(ModelBundle& bundle, const DatasetManifest& manifest,
                                        const std::string& csv_path,
                                        std::optional<FeatureKind> expected_kind = std::nullopt,
                                        int batch_size = 32);

struct EmbeddingRows {
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> machine_types;
  std::vector<std::string> machine_ids;
  std::vector<Condition> conditions;
};

EmbeddingRows read_embeddings_csv(const std::string& path);

}  // namespace stgram

#endif  // STGRAM_EXPERIMENTS_HPP_
