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

#ifndef STGRAM_TRAINER_HPP_
#define STGRAM_TRAINER_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stgram/classifier.hpp"
#include "stgram/dataio.hpp"
#include "stgram/features.hpp"
#include "stgram/tgramnet.hpp"

namespace stgram {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double base_lr = 1e-4;
  double eta_min = 0.0;  // cosine-annealing floor
  uint64_t seed = 42;
  HeadKind head_kind = HeadKind::arcface;
  FeatureKind feature_kind = FeatureKind::STgram;  // Sgram here means the LogMel ablation
  double margin = 0.7;
  double scale = 30.0;
  nn::AdamConfig adam;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  int checkpoint_every = 0;  // epochs between checkpoints, 0 = final only
  int64_t clip_samples = 160000;
  std::string mfn_preset = "paper";  // paper | compact
  int embedding_dim_override = 0;    // 0 keeps the preset value
  std::string feature_cache_dir;     // optional on-disk cache for the spectral branch

  void validate() const;
};

/// Cosine-annealed learning rate for a 0-based epoch index:
/// eta_min + (base - eta_min) * (1 + cos(pi * t / (epochs - 1))) / 2.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

/// Everything needed to score clips: the nets, the head, both configs and
/// the id map. Scoring needs no external manifest.
struct ModelBundle {
  SpectralConfig spectral;
  TrainConfig train_cfg;
  MFNConfig mfn_cfg;
  HeadConfig head_cfg;
  IdMap id_map;
  int epochs_completed = 0;
  std::vector<EpochStats> history;

  std::unique_ptr<TgramNet> tgram;  // null for LogMel / Spec models
  std::unique_ptr<MobileFaceNet> mfn;
  std::unique_ptr<ClassifierHead> head;

  static ModelBundle create(const SpectralConfig& spectral, const TrainConfig& train,
                            const IdMap& id_map);

  bool uses_tgram() const {
    return train_cfg.feature_kind == FeatureKind::Tgram ||
           train_cfg.feature_kind == FeatureKind::STgram;
  }
  int input_channels() const { return train_cfg.feature_kind == FeatureKind::STgram ? 2 : 1; }
  int64_t feature_rows() const {
    return train_cfg.feature_kind == FeatureKind::Spec ? spectral.fft_bins() : spectral.mel_bins;
  }
  int64_t feature_frames() const {
    return frame_count(train_cfg.clip_samples, spectral.hop_length);
  }

  /// Spectral-branch map of one clip as a (rows, frames) tensor; empty for
  /// Tgram-only models.
  Tensor spectral_feature(const AudioClip& clip) const;

  /// Batched eval-mode embeddings (B, D).
  Tensor embed_batch(const std::vector<const AudioClip*>& clips);
  /// Batched eval-mode margin-free logits (B, C).
  Tensor inference_logits(const std::vector<const AudioClip*>& clips);

  void collect_state(std::vector<nn::ParamTensor*>& out) const;
};

/// Trains TgramNet (when used) + MFN + head jointly on machine-id labels.
/// When run_dir is non-empty, writes train_log.csv, cadence checkpoints and
/// the final model.bundle there.
ModelBundle train(const DatasetManifest& manifest, const SpectralConfig& spectral,
                  const TrainConfig& cfg, const std::string& run_dir = "");

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

}  // namespace stgram

#endif  // STGRAM_TRAINER_HPP_
