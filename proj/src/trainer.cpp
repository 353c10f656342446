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

#include "stgram/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "stgram/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stgram {

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Tensor waves_tensor(const std::vector<const AudioClip*>& clips, int64_t clip_samples) {
  Tensor waves({static_cast<int64_t>(clips.size()), 1, clip_samples});
  for (size_t b = 0; b < clips.size(); ++b) {
    const auto& s = clips[b]->samples;
    if (static_cast<int64_t>(s.size()) != clip_samples) {
      throw std::invalid_argument("clip length " + std::to_string(s.size()) +
                                  " does not match configured length " +
                                  std::to_string(clip_samples) + ": " + clips[b]->source_path);
    }
    std::memcpy(waves.data() + static_cast<int64_t>(b) * clip_samples, s.data(),
                sizeof(double) * s.size());
  }
  return waves;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (base_lr <= 0.0) throw std::invalid_argument("base_lr must be positive");
  if (eta_min < 0.0) throw std::invalid_argument("eta_min must be non-negative");
  if (clip_samples <= 0) throw std::invalid_argument("clip_samples must be positive");
  if (mfn_preset != "paper" && mfn_preset != "compact") {
    throw std::invalid_argument("mfn_preset must be 'paper' or 'compact'");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::invalid_argument("epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
  }
  if (cfg.epochs == 1) return cfg.base_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + std::cos(M_PI * t));
}

ModelBundle ModelBundle::create(const SpectralConfig& spectral, const TrainConfig& train,
                                const IdMap& id_map) {
  spectral.validate();
  train.validate();
  if (id_map.empty()) throw std::invalid_argument("empty id map");

  ModelBundle bundle;
  bundle.spectral = spectral;
  bundle.train_cfg = train;
  bundle.id_map = id_map;

  const int rows = static_cast<int>(bundle.feature_rows());
  const int cols = static_cast<int>(bundle.feature_frames());
  const int channels = bundle.input_channels();
  bundle.mfn_cfg = train.mfn_preset == "compact"
                       ? MFNConfig::compact_scale(channels, rows, cols)
                       : MFNConfig::paper_scale(channels, rows, cols);
  if (train.embedding_dim_override > 0) {
    bundle.mfn_cfg.embedding_dim = train.embedding_dim_override;
  }

  bundle.head_cfg.kind = train.head_kind;
  bundle.head_cfg.class_count = static_cast<int>(id_map.size());
  bundle.head_cfg.embedding_dim = bundle.mfn_cfg.embedding_dim;
  bundle.head_cfg.margin = train.margin;
  bundle.head_cfg.scale = train.scale;

  if (bundle.uses_tgram()) {
    bundle.tgram = std::make_unique<TgramNet>(spectral, train.clip_samples,
                                              derive_seed(train.seed, 1));
  }
  bundle.mfn = std::make_unique<MobileFaceNet>(bundle.mfn_cfg, derive_seed(train.seed, 2));
  bundle.head = make_head(bundle.head_cfg, derive_seed(train.seed, 3));
  return bundle;
}

Tensor ModelBundle::spectral_feature(const AudioClip& clip) const {
  switch (train_cfg.feature_kind) {
    case FeatureKind::Tgram:
      return Tensor();
    case FeatureKind::Spec: {
      FeatureTensor f = log_spec(clip, spectral);
      return f.data.reshaped({f.rows(), f.frames()});
    }
    default: {
      FeatureTensor f = log_mel(clip, spectral);
      return f.data.reshaped({f.rows(), f.frames()});
    }
  }
}

void ModelBundle::collect_state(std::vector<nn::ParamTensor*>& out) const {
  if (tgram) tgram->collect_state(out);
  mfn->collect_state(out);
  head->collect_state(out);
}

namespace {

/// Assembles the (B, C, rows, frames) classifier input. `tgram_maps`, when
/// non-null, receives the raw TgramNet output so the caller can route
/// gradients back; spectral maps come precomputed from the caller.
Tensor assemble_input(ModelBundle& bundle, const std::vector<const Tensor*>& spectral_maps,
                      const Tensor* tgram_out) {
  const int64_t rows = bundle.feature_rows();
  const int64_t cols = bundle.feature_frames();
  const int channels = bundle.input_channels();
  const int64_t batch = bundle.uses_tgram() && tgram_out != nullptr
                            ? tgram_out->dim(0)
                            : static_cast<int64_t>(spectral_maps.size());
  Tensor input({batch, channels, rows, cols});
  const int64_t plane = rows * cols;

  if (bundle.train_cfg.feature_kind == FeatureKind::Tgram) {
    for (int64_t b = 0; b < batch; ++b) {
      std::memcpy(input.data() + b * plane, tgram_out->data() + b * plane,
                  sizeof(double) * static_cast<size_t>(plane));
    }
    return input;
  }

  for (int64_t b = 0; b < batch; ++b) {
    const Tensor* sf = spectral_maps[static_cast<size_t>(b)];
    if (sf->dim(0) != rows || sf->dim(1) != cols) {
      throw std::invalid_argument("spectral feature shape " + sf->shape_str() +
                                  " does not match model input " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
    std::memcpy(input.data() + b * channels * plane, sf->data(),
                sizeof(double) * static_cast<size_t>(plane));
    if (channels == 2) {
      std::memcpy(input.data() + b * channels * plane + plane, tgram_out->data() + b * plane,
                  sizeof(double) * static_cast<size_t>(plane));
    }
  }
  return input;
}

}  // namespace

Tensor ModelBundle::embed_batch(const std::vector<const AudioClip*>& clips) {
  if (clips.empty()) return Tensor({0, mfn_cfg.embedding_dim});

  Tensor tgram_out;
  if (uses_tgram()) {
    Tensor waves = waves_tensor(clips, train_cfg.clip_samples);
    tgram_out = tgram->forward(waves, nn::Phase::eval);
  }
  std::vector<Tensor> spectral_store;
  std::vector<const Tensor*> spectral_maps;
  if (train_cfg.feature_kind != FeatureKind::Tgram) {
    spectral_store.reserve(clips.size());
    for (const AudioClip* clip : clips) spectral_store.push_back(spectral_feature(*clip));
    for (const Tensor& t : spectral_store) spectral_maps.push_back(&t);
  }
  Tensor input = assemble_input(*this, spectral_maps, uses_tgram() ? &tgram_out : nullptr);
  return mfn->forward(input, nn::Phase::eval);
}

Tensor ModelBundle::inference_logits(const std::vector<const AudioClip*>& clips) {
  Tensor emb = embed_batch(clips);
  if (emb.dim(0) == 0) return Tensor({0, head_cfg.class_count});
  return head->logits(emb, nullptr, nn::Phase::eval);
}

ModelBundle train(const DatasetManifest& manifest, const SpectralConfig& spectral,
                  const TrainConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  spectral.validate();
  if (manifest.split != Split::train) {
    throw std::invalid_argument("training requires a train-split manifest");
  }
  if (manifest.entries.empty()) throw std::invalid_argument("training manifest is empty");
  for (const auto& e : manifest.entries) {
    if (e.label.condition != Condition::normal) {
      throw std::invalid_argument("training clip is not labeled normal: " + e.path);
    }
    if (e.label.class_index < 0 || e.label.class_index >= manifest.class_count) {
      throw std::invalid_argument("class index out of range in manifest: " + e.path);
    }
  }

  ModelBundle bundle = ModelBundle::create(spectral, cfg, manifest.id_map);

  if (!run_dir.empty()) fs::create_directories(run_dir);
  std::ofstream log_csv;
  if (!run_dir.empty()) {
    log_csv.open((fs::path(run_dir) / "train_log.csv").string(), std::ios::trunc);
    log_csv << "epoch,mean_loss,train_accuracy,lr,wall_time\n";
  }

  const size_t n = manifest.entries.size();
  log_info("training ", feature_kind_name(cfg.feature_kind), "-MFN (",
           head_kind_name(cfg.head_kind), ") on ", n, " clips, ", manifest.class_count,
           " classes, ", cfg.epochs, " epochs");

  // Load every clip once; keep waves for the temporal branch and precompute
  // the spectral branch (optionally via the on-disk cache).
  std::vector<AudioClip> clips;
  clips.reserve(n);
  std::vector<int> labels_all;
  labels_all.reserve(n);
  for (const auto& e : manifest.entries) {
    clips.push_back(load_clip(e.path, spectral.sample_rate, cfg.clip_samples));
    labels_all.push_back(e.label.class_index);
  }

  std::vector<Tensor> spectral_features(n);
  if (cfg.feature_kind != FeatureKind::Tgram) {
    const FeatureKind kind =
        cfg.feature_kind == FeatureKind::Spec ? FeatureKind::Spec : FeatureKind::Sgram;
    for (size_t i = 0; i < n; ++i) {
      if (!cfg.feature_cache_dir.empty()) {
        auto cached = load_cached_feature(cfg.feature_cache_dir, clips[i].source_path, spectral,
                                          kind);
        if (cached.has_value()) {
          spectral_features[i] = cached->data.reshaped({cached->rows(), cached->frames()});
          continue;
        }
      }
      spectral_features[i] = bundle.spectral_feature(clips[i]);
      if (!cfg.feature_cache_dir.empty()) {
        FeatureTensor f;
        f.kind = kind;
        f.data = spectral_features[i].reshaped(
            {1, spectral_features[i].dim(0), spectral_features[i].dim(1)});
        store_cached_feature(cfg.feature_cache_dir, clips[i].source_path, spectral, f);
      }
    }
  }

  std::vector<nn::ParamTensor*> params;
  bundle.collect_state(params);
  nn::Adam optimizer(cfg.adam);
  nn::Rng shuffle_rng(derive_seed(cfg.seed, 4));

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const int64_t plane = bundle.feature_rows() * bundle.feature_frames();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int64_t correct = 0;
    for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(n, begin + static_cast<size_t>(cfg.batch_size));
      const int64_t batch = static_cast<int64_t>(end - begin);

      std::vector<const AudioClip*> batch_clips(static_cast<size_t>(batch));
      std::vector<const Tensor*> batch_spectral(static_cast<size_t>(batch));
      std::vector<int> labels(static_cast<size_t>(batch));
      for (size_t i = begin; i < end; ++i) {
        const size_t idx = order[i];
        batch_clips[i - begin] = &clips[idx];
        batch_spectral[i - begin] = &spectral_features[idx];
        labels[i - begin] = labels_all[idx];
      }

      Tensor tgram_out;
      if (bundle.uses_tgram()) {
        Tensor waves = waves_tensor(batch_clips, cfg.clip_samples);
        tgram_out = bundle.tgram->forward(waves, nn::Phase::train);
      }
      Tensor input = assemble_input(bundle, batch_spectral,
                                    bundle.uses_tgram() ? &tgram_out : nullptr);
      Tensor emb = bundle.mfn->forward(input, nn::Phase::train);
      Tensor logits = bundle.head->logits(emb, &labels, nn::Phase::train);

      Tensor grad_logits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &grad_logits);
      if (!std::isfinite(loss)) {
        if (!run_dir.empty()) {
          const std::string diag = (fs::path(run_dir) / "diagnostic.bundle").string();
          bundle.epochs_completed = epoch;
          save_bundle(bundle, diag);
          log_error("non-finite loss at epoch ", epoch, "; diagnostic checkpoint: ", diag);
        }
        throw std::runtime_error("training aborted: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }

      // Accuracy over the classification view of this same pass.
      const Tensor& plain = bundle.head->plain_logits();
      for (int64_t b = 0; b < batch; ++b) {
        const double* row = plain.data() + b * plain.dim(1);
        int64_t arg = 0;
        for (int64_t c = 1; c < plain.dim(1); ++c) {
          if (row[c] > row[arg]) arg = c;
        }
        if (arg == labels[static_cast<size_t>(b)]) ++correct;
      }

      nn::zero_grads(params);
      Tensor grad_emb = bundle.head->backward(grad_logits);
      Tensor grad_input = bundle.mfn->backward(grad_emb);
      if (bundle.uses_tgram()) {
        Tensor grad_tgram({batch, static_cast<int64_t>(spectral.mel_bins),
                           bundle.feature_frames()});
        const int channels = bundle.input_channels();
        for (int64_t b = 0; b < batch; ++b) {
          const double* src = grad_input.data() + (b * channels + (channels - 1)) * plane;
          std::memcpy(grad_tgram.data() + b * plane, src,
                      sizeof(double) * static_cast<size_t>(plane));
        }
        bundle.tgram->backward(grad_tgram);
      }
      nn::clip_grad_norm(params, cfg.grad_clip);
      optimizer.step(params, lr);

      loss_sum += loss * static_cast<double>(batch);
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    stats.lr = lr;
    stats.wall_seconds = wall;
    bundle.history.push_back(stats);
    bundle.epochs_completed = epoch + 1;

    log_info("epoch ", epoch, ": loss ", stats.mean_loss, ", accuracy ", stats.accuracy, ", lr ",
             lr, ", ", wall, " s");
    if (log_csv.is_open()) {
      log_csv << epoch << "," << stats.mean_loss << "," << stats.accuracy << "," << lr << ","
              << wall << "\n";
      log_csv.flush();
    }
    if (!run_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      save_bundle(bundle,
                  (fs::path(run_dir) / ("checkpoint_epoch_" + std::to_string(epoch + 1) +
                                        ".bundle"))
                      .string());
    }
  }

  if (!run_dir.empty()) {
    save_bundle(bundle, (fs::path(run_dir) / "model.bundle").string());
  }
  return bundle;
}

// ---- Serialization ----------------------------------------------------------

namespace {

constexpr char kBundleMagic[4] = {'S', 'T', 'G', 'B'};
constexpr uint32_t kBundleVersion = 1;

json spectral_to_json(const SpectralConfig& c) {
  return json{{"window_size", c.window_size}, {"hop_length", c.hop_length},
              {"mel_bins", c.mel_bins},       {"sample_rate", c.sample_rate},
              {"fmin", c.fmin},               {"fmax", c.fmax},
              {"log_floor", c.log_floor},     {"window_function", c.window_function}};
}

SpectralConfig spectral_from_json(const json& j) {
  SpectralConfig c;
  c.window_size = j.at("window_size");
  c.hop_length = j.at("hop_length");
  c.mel_bins = j.at("mel_bins");
  c.sample_rate = j.at("sample_rate");
  c.fmin = j.at("fmin");
  c.fmax = j.at("fmax");
  c.log_floor = j.at("log_floor");
  c.window_function = j.at("window_function");
  return c;
}

json train_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"base_lr", c.base_lr},
              {"eta_min", c.eta_min},
              {"seed", c.seed},
              {"head_kind", head_kind_name(c.head_kind)},
              {"feature_kind", feature_kind_name(c.feature_kind)},
              {"margin", c.margin},
              {"scale", c.scale},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"grad_clip", c.grad_clip},
              {"checkpoint_every", c.checkpoint_every},
              {"clip_samples", c.clip_samples},
              {"mfn_preset", c.mfn_preset},
              {"embedding_dim_override", c.embedding_dim_override}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.base_lr = j.at("base_lr");
  c.eta_min = j.at("eta_min");
  c.seed = j.at("seed");
  c.head_kind = head_kind_from_name(j.at("head_kind"));
  auto kind = feature_kind_from_name(j.at("feature_kind"));
  if (!kind) throw std::runtime_error("bad feature kind in bundle header");
  c.feature_kind = *kind;
  c.margin = j.at("margin");
  c.scale = j.at("scale");
  c.adam.beta1 = j.at("adam_beta1");
  c.adam.beta2 = j.at("adam_beta2");
  c.adam.eps = j.at("adam_eps");
  c.grad_clip = j.at("grad_clip");
  c.checkpoint_every = j.at("checkpoint_every");
  c.clip_samples = j.at("clip_samples");
  c.mfn_preset = j.at("mfn_preset");
  c.embedding_dim_override = j.at("embedding_dim_override");
  return c;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  std::vector<nn::ParamTensor*> state;
  bundle.collect_state(state);

  json header;
  header["format_version"] = kBundleVersion;
  header["spectral"] = spectral_to_json(bundle.spectral);
  header["train"] = train_to_json(bundle.train_cfg);
  header["epochs_completed"] = bundle.epochs_completed;
  auto& id_map = header["id_map"] = json::array();
  for (const auto& kv : bundle.id_map) {
    id_map.push_back({kv.first.first, kv.first.second, kv.second});
  }
  auto& hist = header["history"] = json::array();
  for (const auto& s : bundle.history) {
    hist.push_back({s.epoch, s.mean_loss, s.accuracy, s.lr, s.wall_seconds});
  }
  auto& tensors = header["tensors"] = json::array();
  for (const nn::ParamTensor* p : state) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  }
  const std::string header_bytes = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write bundle: " + tmp);
    out.write(kBundleMagic, 4);
    uint32_t version = kBundleVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t header_len = header_bytes.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
    for (const nn::ParamTensor* p : state) {
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p->value.size())));
    }
    if (!out) throw std::runtime_error("short write to bundle: " + tmp);
  }
  fs::rename(tmp, path);
}

ModelBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open bundle: " + path);

  char magic[4];
  uint32_t version = 0;
  uint64_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kBundleMagic, 4) != 0) {
    throw std::runtime_error("not a model bundle: " + path);
  }
  if (version != kBundleVersion) {
    throw std::runtime_error("bundle format version " + std::to_string(version) +
                             " is not supported (expected " + std::to_string(kBundleVersion) +
                             "): " + path);
  }
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated bundle header: " + path);

  json header = json::parse(header_bytes);
  SpectralConfig spectral = spectral_from_json(header.at("spectral"));
  TrainConfig train_cfg = train_from_json(header.at("train"));
  IdMap id_map;
  for (const auto& row : header.at("id_map")) {
    id_map[{row.at(0).get<std::string>(), row.at(1).get<std::string>()}] = row.at(2).get<int>();
  }

  ModelBundle bundle = ModelBundle::create(spectral, train_cfg, id_map);
  bundle.epochs_completed = header.at("epochs_completed");
  for (const auto& row : header.at("history")) {
    EpochStats s;
    s.epoch = row.at(0);
    s.mean_loss = row.at(1);
    s.accuracy = row.at(2);
    s.lr = row.at(3);
    s.wall_seconds = row.at(4);
    bundle.history.push_back(s);
  }

  std::vector<nn::ParamTensor*> state;
  bundle.collect_state(state);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != state.size()) {
    throw std::runtime_error("bundle tensor count mismatch: header lists " +
                             std::to_string(tensors.size()) + ", model has " +
                             std::to_string(state.size()) + ": " + path);
  }
  for (size_t i = 0; i < state.size(); ++i) {
    const auto& meta = tensors[i];
    if (meta.at("name").get<std::string>() != state[i]->name) {
      throw std::runtime_error("bundle tensor name mismatch at index " + std::to_string(i) +
                               ": header '" + meta.at("name").get<std::string>() + "' vs model '" +
                               state[i]->name + "'");
    }
    const auto shape = meta.at("shape").get<std::vector<int64_t>>();
    if (shape != state[i]->value.shape()) {
      throw std::runtime_error("bundle tensor shape mismatch for " + state[i]->name);
    }
    const auto bytes = static_cast<std::streamsize>(sizeof(double) *
                                                    static_cast<size_t>(state[i]->value.size()));
    in.read(reinterpret_cast<char*>(state[i]->value.data()), bytes);
    if (in.gcount() != bytes) {
      throw std::runtime_error("truncated bundle payload for " + state[i]->name + ": expected " +
                               std::to_string(bytes) + " bytes, got " +
                               std::to_string(in.gcount()) + ": " + path);
    }
  }
  return bundle;
}

}  // namespace stgram
