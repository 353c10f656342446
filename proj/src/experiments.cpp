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

#include "stgram/experiments.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "stgram/csv.hpp"
#include "stgram/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stgram {

std::string ablation_cell_name(const AblationCell& cell) {
  std::string feature;
  switch (cell.feature) {
    case FeatureKind::Sgram: feature = "LogMel"; break;
    case FeatureKind::Tgram: feature = "Tgram"; break;
    case FeatureKind::Spec: feature = "Spec"; break;
    case FeatureKind::STgram: feature = "STgram"; break;
  }
  return feature + "-MFN(" + (cell.head == HeadKind::cee ? "CEE" : "ArcFace") + ")";
}

void ExperimentConfig::validate() const {
  spectral.validate();
  train.validate();
  if (!(pauc_p > 0.0) || pauc_p > 1.0) throw std::invalid_argument("pauc_p must be in (0, 1]");
  if (score_batch < 1) throw std::invalid_argument("score_batch must be >= 1");
  if (ablation.empty()) throw std::invalid_argument("ablation matrix is empty");
}

namespace {

std::string cell_dir_name(const AblationCell& cell) {
  std::string feature;
  switch (cell.feature) {
    case FeatureKind::Sgram: feature = "logmel"; break;
    case FeatureKind::Tgram: feature = "tgram"; break;
    case FeatureKind::Spec: feature = "spec"; break;
    case FeatureKind::STgram: feature = "stgram"; break;
  }
  return feature + "_" + head_kind_name(cell.head);
}

template <typename T>
void read_if_present(const YAML::Node& node, const char* key, T* out) {
  if (node && node[key]) *out = node[key].as<T>();
}

ExperimentConfig config_from_yaml(const YAML::Node& root) {
  ExperimentConfig cfg;
  read_if_present(root, "dataset_root", &cfg.dataset_root);
  read_if_present(root, "output_dir", &cfg.output_dir);
  read_if_present(root, "run_id", &cfg.run_id);
  read_if_present(root, "pauc_p", &cfg.pauc_p);
  read_if_present(root, "score_batch", &cfg.score_batch);

  const YAML::Node spectral = root["spectral"];
  read_if_present(spectral, "window_size", &cfg.spectral.window_size);
  read_if_present(spectral, "hop_length", &cfg.spectral.hop_length);
  read_if_present(spectral, "mel_bins", &cfg.spectral.mel_bins);
  read_if_present(spectral, "sample_rate", &cfg.spectral.sample_rate);
  read_if_present(spectral, "fmin", &cfg.spectral.fmin);
  read_if_present(spectral, "fmax", &cfg.spectral.fmax);
  read_if_present(spectral, "log_floor", &cfg.spectral.log_floor);
  read_if_present(spectral, "window_function", &cfg.spectral.window_function);

  const YAML::Node train = root["train"];
  read_if_present(train, "epochs", &cfg.train.epochs);
  read_if_present(train, "batch_size", &cfg.train.batch_size);
  read_if_present(train, "base_lr", &cfg.train.base_lr);
  read_if_present(train, "eta_min", &cfg.train.eta_min);
  read_if_present(train, "seed", &cfg.train.seed);
  if (train && train["head"]) cfg.train.head_kind = head_kind_from_name(train["head"].as<std::string>());
  if (train && train["feature"]) {
    auto kind = feature_kind_from_name(train["feature"].as<std::string>());
    if (!kind) {
      throw std::invalid_argument("unknown feature kind in config: " +
                                  train["feature"].as<std::string>());
    }
    cfg.train.feature_kind = *kind;
  }
  read_if_present(train, "margin", &cfg.train.margin);
  read_if_present(train, "scale", &cfg.train.scale);
  read_if_present(train, "grad_clip", &cfg.train.grad_clip);
  read_if_present(train, "checkpoint_every", &cfg.train.checkpoint_every);
  read_if_present(train, "clip_samples", &cfg.train.clip_samples);
  read_if_present(train, "mfn_preset", &cfg.train.mfn_preset);
  read_if_present(train, "embedding_dim", &cfg.train.embedding_dim_override);
  read_if_present(train, "feature_cache_dir", &cfg.train.feature_cache_dir);

  if (root["ablation"]) {
    cfg.ablation.clear();
    for (const auto& item : root["ablation"]) {
      AblationCell cell;
      auto kind = feature_kind_from_name(item["feature"].as<std::string>());
      if (!kind) {
        throw std::invalid_argument("unknown feature kind in ablation cell: " +
                                    item["feature"].as<std::string>());
      }
      cell.feature = *kind;
      cell.head = head_kind_from_name(item["head"].as<std::string>());
      cfg.ablation.push_back(cell);
    }
  }
  return cfg;
}

// Note: YAML::Node::operator= assigns node *content* (reference semantics
// live in the copy constructor), so the walk below recurses with by-value
// parameters instead of rebinding a local.
void set_dotted_key(YAML::Node node, const std::vector<std::string>& keys, size_t index,
                    const std::string& value) {
  if (index + 1 == keys.size()) {
    node[keys[index]] = YAML::Load(value);
    return;
  }
  if (!node[keys[index]] || !node[keys[index]].IsMap()) {
    node[keys[index]] = YAML::Node(YAML::NodeType::Map);
  }
  set_dotted_key(node[keys[index]], keys, index + 1, value);
}

void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key.path=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  std::vector<std::string> keys;
  std::string cur;
  for (char c : path) {
    if (c == '.') {
      keys.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  keys.push_back(cur);
  for (const auto& k : keys) {
    if (k.empty()) throw std::invalid_argument("empty key segment in override: " + assignment);
  }
  set_dotted_key(root, keys, 0, value);
}

ExperimentConfig finish_config(YAML::Node root, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) apply_override(root, ov);
  ExperimentConfig cfg = config_from_yaml(root);
  if (const char* env_root = std::getenv("STGRAM_DATASET_ROOT"); env_root && *env_root) {
    cfg.dataset_root = env_root;
  }
  return cfg;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& yaml_path,
                                        const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(yaml_path);
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument("cannot parse config " + yaml_path + ": " + e.what());
  }
  return finish_config(root, overrides);
}

ExperimentConfig default_experiment_config(const std::vector<std::string>& overrides) {
  YAML::Node root(YAML::NodeType::Map);
  return finish_config(root, overrides);
}

// ---- RunManifest ------------------------------------------------------------

RunManifest RunManifest::create(const std::string& run_dir) {
  fs::create_directories(run_dir);
  const fs::path manifest_path = fs::path(run_dir) / "run_manifest.json";
  if (fs::exists(manifest_path)) {
    throw std::runtime_error("run directory already has artifacts (" + manifest_path.string() +
                             "); choose a new run id instead of overwriting");
  }
  RunManifest m;
  m.dir_ = run_dir;
  m.save();
  return m;
}

void RunManifest::record(const std::string& relative_path) {
  files_.push_back(relative_path);
  save();
}

void RunManifest::save() const {
  json j;
  j["files"] = files_;
  std::ofstream out((fs::path(dir_) / "run_manifest.json").string(), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write run manifest in " + dir_);
  out << j.dump(2) << "\n";
}

// ---- Ablation ---------------------------------------------------------------

AblationResult run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.dataset_root.empty()) throw std::invalid_argument("dataset_root is not set");

  DatasetManifest train_manifest = scan_dataset(cfg.dataset_root, Split::train);
  if (train_manifest.entries.empty()) {
    throw std::runtime_error("no training clips under " + cfg.dataset_root);
  }
  DatasetManifest test_manifest =
      scan_dataset(cfg.dataset_root, Split::test, &train_manifest.id_map);
  if (test_manifest.entries.empty()) {
    throw std::runtime_error("no test clips under " + cfg.dataset_root);
  }

  const std::string run_dir = (fs::path(cfg.output_dir) / cfg.run_id).string();
  RunManifest manifest = RunManifest::create(run_dir);

  AblationResult result;
  result.p = cfg.pauc_p;
  result.run_dir = run_dir;

  for (const AblationCell& cell : cfg.ablation) {
    AblationCellResult cell_result;
    cell_result.cell = cell;
    const std::string dir_name = cell_dir_name(cell);
    cell_result.cell_dir = (fs::path(run_dir) / dir_name).string();
    try {
      TrainConfig cell_cfg = cfg.train;
      cell_cfg.feature_kind = cell.feature;
      cell_cfg.head_kind = cell.head;

      log_info("ablation cell ", ablation_cell_name(cell));
      ModelBundle bundle = train(train_manifest, cfg.spectral, cell_cfg, cell_result.cell_dir);
      manifest.record(dir_name + "/model.bundle");
      manifest.record(dir_name + "/train_log.csv");

      ScoreResult scores = score_split(bundle, test_manifest, cfg.score_batch);
      write_scores_csv((fs::path(cell_result.cell_dir) / "scores.csv").string(), scores.records);
      manifest.record(dir_name + "/scores.csv");

      cell_result.report = build_report(scores.records, cfg.pauc_p);
      write_report_csv((fs::path(cell_result.cell_dir) / "report.csv").string(),
                       cell_result.report);
      write_report_json((fs::path(cell_result.cell_dir) / "report.json").string(),
                        cell_result.report);
      manifest.record(dir_name + "/report.csv");
      manifest.record(dir_name + "/report.json");
      cell_result.ok = true;
    } catch (const std::exception& e) {
      cell_result.ok = false;
      cell_result.error = e.what();
      log_error("ablation cell ", ablation_cell_name(cell), " failed: ", e.what());
    }
    result.cells.push_back(std::move(cell_result));
  }

  const std::string table = render_ablation_table(result);
  {
    std::ofstream out((fs::path(run_dir) / "ablation_table.txt").string(), std::ios::trunc);
    out << table;
  }
  write_ablation_csv((fs::path(run_dir) / "ablation.csv").string(), result);
  write_ablation_json((fs::path(run_dir) / "ablation.json").string(), result);
  manifest.record("ablation_table.txt");
  manifest.record("ablation.csv");
  manifest.record("ablation.json");
  return result;
}

namespace {

std::vector<std::string> ablation_types(const AblationResult& result) {
  std::set<std::string> types;
  for (const auto& cell : result.cells) {
    if (!cell.ok) continue;
    for (const auto& t : cell.report.types) types.insert(t.machine_type);
  }
  return {types.begin(), types.end()};
}

const TypeMetrics* find_type(const MetricsReport& report, const std::string& type) {
  for (const auto& t : report.types) {
    if (t.machine_type == type) return &t;
  }
  return nullptr;
}

}  // namespace

std::string render_ablation_table(const AblationResult& result) {
  const std::vector<std::string> types = ablation_types(result);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);

  int label_width = 12;
  for (const auto& t : types) label_width = std::max(label_width, static_cast<int>(t.size()) + 2);

  std::vector<std::string> headers;
  int cell_width = 16;
  for (const auto& cell : result.cells) {
    headers.push_back(ablation_cell_name(cell.cell));
    cell_width = std::max(cell_width, static_cast<int>(headers.back().size()) + 2);
  }

  os << std::left << std::setw(label_width) << "" << std::right;
  for (const auto& h : headers) os << std::setw(cell_width) << h;
  os << "\n";
  os << std::left << std::setw(label_width) << "machine" << std::right;
  for (size_t i = 0; i < headers.size(); ++i) {
    std::ostringstream sub;
    sub << std::setw(cell_width / 2) << "AUC" << std::setw(cell_width - cell_width / 2) << "mAUC";
    os << sub.str();
  }
  os << "\n";

  auto emit_row = [&](const std::string& label, auto auc_of, auto mauc_of) {
    os << std::left << std::setw(label_width) << label << std::right;
    for (const auto& cell : result.cells) {
      std::ostringstream a, m;
      a << std::fixed << std::setprecision(2);
      m << std::fixed << std::setprecision(2);
      if (cell.ok) {
        const auto v = auc_of(cell);
        const auto w = mauc_of(cell);
        if (v.has_value()) a << *v * 100.0; else a << "--";
        if (w.has_value()) m << *w * 100.0; else m << "--";
      } else {
        a << "--";
        m << "--";
      }
      os << std::setw(cell_width / 2) << a.str()
         << std::setw(cell_width - cell_width / 2) << m.str();
    }
    os << "\n";
  };

  for (const auto& type : types) {
    emit_row(
        type,
        [&](const AblationCellResult& c) -> std::optional<double> {
          const TypeMetrics* t = find_type(c.report, type);
          return t ? std::optional<double>(t->mean_auc) : std::nullopt;
        },
        [&](const AblationCellResult& c) -> std::optional<double> {
          const TypeMetrics* t = find_type(c.report, type);
          return t ? std::optional<double>(t->min_auc) : std::nullopt;
        });
  }
  emit_row(
      "Average",
      [&](const AblationCellResult& c) -> std::optional<double> { return c.report.average_auc; },
      [&](const AblationCellResult& c) -> std::optional<double> { return c.report.average_mauc; });

  bool any_failed = false;
  for (const auto& cell : result.cells) any_failed = any_failed || !cell.ok;
  if (any_failed) {
    os << "\nfailed cells:\n";
    for (const auto& cell : result.cells) {
      if (!cell.ok) os << "  " << ablation_cell_name(cell.cell) << ": " << cell.error << "\n";
    }
  }
  return os.str();
}

void write_ablation_csv(const std::string& path, const AblationResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ablation table: " + path);
  out.precision(9);
  out << "machine_type";
  for (const auto& cell : result.cells) {
    const std::string name = ablation_cell_name(cell.cell);
    out << "," << csv_escape(name + " AUC") << "," << csv_escape(name + " mAUC");
  }
  out << "\n";
  for (const auto& type : ablation_types(result)) {
    out << csv_escape(type);
    for (const auto& cell : result.cells) {
      const TypeMetrics* t = cell.ok ? find_type(cell.report, type) : nullptr;
      if (t) {
        out << "," << t->mean_auc << "," << t->min_auc;
      } else {
        out << ",,";
      }
    }
    out << "\n";
  }
  out << "Average";
  for (const auto& cell : result.cells) {
    if (cell.ok) {
      out << "," << cell.report.average_auc << "," << cell.report.average_mauc;
    } else {
      out << ",,";
    }
  }
  out << "\n";
}

void write_ablation_json(const std::string& path, const AblationResult& result) {
  json j;
  j["p"] = result.p;
  auto& cells = j["cells"] = json::array();
  for (const auto& cell : result.cells) {
    json cj;
    cj["name"] = ablation_cell_name(cell.cell);
    cj["ok"] = cell.ok;
    cj["dir"] = cell.cell_dir;
    if (cell.ok) {
      cj["average_auc"] = cell.report.average_auc;
      cj["average_pauc"] = cell.report.average_pauc;
      cj["average_mauc"] = cell.report.average_mauc;
      auto& types = cj["types"] = json::array();
      for (const auto& t : cell.report.types) {
        types.push_back({{"machine_type", t.machine_type},
                         {"auc", t.mean_auc},
                         {"pauc", t.mean_pauc},
                         {"mauc", t.min_auc}});
      }
    } else {
      cj["error"] = cell.error;
    }
    cells.push_back(std::move(cj));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ablation json: " + path);
  out << j.dump(2) << "\n";
}

// ---- Embedding export -------------------------------------------------------

EmbeddingExportResult export_embeddings(ModelBundle& bundle, const DatasetManifest& manifest,
                                        const std::string& csv_path,
                                        std::optional<FeatureKind> expected_kind,
                                        int batch_size) {
  if (expected_kind.has_value() && *expected_kind != bundle.train_cfg.feature_kind) {
    throw std::invalid_argument(std::string("bundle feature kind is ") +
                                feature_kind_name(bundle.train_cfg.feature_kind) +
                                ", requested " + feature_kind_name(*expected_kind));
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write embeddings: " + csv_path);
  out.precision(9);
  const int dim = bundle.mfn_cfg.embedding_dim;
  for (int d = 0; d < dim; ++d) out << "e" << d << ",";
  out << "machine_type,machine_id,condition\n";

  EmbeddingExportResult result;
  const size_t n = manifest.entries.size();
  size_t begin = 0;
  while (begin < n) {
    const size_t end = std::min(n, begin + static_cast<size_t>(batch_size));
    std::vector<AudioClip> clips;
    std::vector<const ManifestEntry*> entries;
    for (size_t i = begin; i < end; ++i) {
      const ManifestEntry& e = manifest.entries[i];
      try {
        clips.push_back(load_clip(e.path, bundle.spectral.sample_rate,
                                  bundle.train_cfg.clip_samples));
        entries.push_back(&e);
      } catch (const std::exception& ex) {
        result.rejects.push_back({e.path, ex.what()});
        result.complete = false;
      }
    }
    if (!clips.empty()) {
      std::vector<const AudioClip*> refs;
      for (const AudioClip& c : clips) refs.push_back(&c);
      Tensor emb = bundle.embed_batch(refs);
      for (size_t i = 0; i < entries.size(); ++i) {
        const double* row = emb.data() + static_cast<int64_t>(i) * dim;
        for (int d = 0; d < dim; ++d) out << row[d] << ",";
        out << csv_join({entries[i]->label.machine_type, entries[i]->label.machine_id,
                         condition_name(entries[i]->label.condition)})
            << "\n";
        ++result.rows;
      }
    }
    begin = end;
  }
  return result;
}

EmbeddingRows read_embeddings_csv(const std::string& path) {
  auto rows = csv_read_file(path);
  if (rows.size() < 2) throw std::runtime_error("embeddings file has no data rows: " + path);
  const size_t cols = rows[0].size();
  if (cols < 4) throw std::runtime_error("embeddings file needs D+3 columns: " + path);
  const size_t dim = cols - 3;

  EmbeddingRows out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != cols) {
      throw std::runtime_error("ragged embeddings row " + std::to_string(i) + " in " + path);
    }
    std::vector<double> vec(dim);
    for (size_t d = 0; d < dim; ++d) vec[d] = std::stod(row[d]);
    out.vectors.push_back(std::move(vec));
    out.machine_types.push_back(row[dim]);
    out.machine_ids.push_back(row[dim + 1]);
    auto cond = condition_from_name(row[dim + 2]);
    out.conditions.push_back(cond.value_or(Condition::unknown));
  }
  return out;
}

}  // namespace stgram
