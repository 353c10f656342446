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

// Command-line front end: dataset preparation, training, scoring,
// evaluation, the ablation matrix, embedding export and plotting.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stgram/csv.hpp"
#include "stgram/experiments.hpp"
#include "stgram/log.hpp"
#include "stgram/metrics.hpp"
#include "stgram/plot.hpp"
#include "stgram/scorer.hpp"
#include "stgram/synth.hpp"
#include "stgram/trainer.hpp"

namespace fs = std::filesystem;
using namespace stgram;

namespace {

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;

  ExperimentConfig load() const {
    return config_path.empty() ? default_experiment_config(overrides)
                               : load_experiment_config(config_path, overrides);
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs* args) {
  cmd->add_option("--config", args->config_path, "YAML experiment config")
      ->check(CLI::ExistingFile);
  cmd->add_option("--override,-O", args->overrides,
                  "dotted-key config override, e.g. train.epochs=2");
}

DatasetManifest manifest_from_args(const std::string& manifest_csv, const std::string& root,
                                   Split split, const IdMap* reference) {
  if (!manifest_csv.empty()) return read_manifest_csv(manifest_csv, split);
  if (root.empty()) {
    throw std::invalid_argument("provide --manifest or a dataset root (--root / config)");
  }
  return scan_dataset(root, split, reference);
}

int run_app(int argc, char** argv) {
  CLI::App app{"stgram: spectral-temporal anomalous machine sound detection"};
  app.require_subcommand(1);

  // ---- synth ----------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "generate the bundled synthetic dataset");
  SynthConfig synth_cfg;
  synth_cmd->add_option("--out", synth_cfg.root, "output dataset root")->required();
  synth_cmd->add_option("--seed", synth_cfg.seed, "generator seed");
  synth_cmd->add_option("--sample-rate", synth_cfg.sample_rate, "sample rate in Hz");
  synth_cmd->add_option("--clip-seconds", synth_cfg.clip_seconds, "clip length in seconds");
  synth_cmd->add_option("--train-per-id", synth_cfg.train_per_id, "training clips per id");
  synth_cmd->add_option("--test-normal-per-id", synth_cfg.test_normal_per_id,
                        "normal test clips per id");
  synth_cmd->add_option("--test-anomaly-per-id", synth_cfg.test_anomaly_per_id,
                        "anomaly test clips per id");
  synth_cmd->add_option("--ids-per-type", synth_cfg.ids_per_type, "machine ids per type");
  synth_cmd->callback([&] { generate_synthetic_dataset(synth_cfg); });

  // ---- prepare --------------------------------------------------------------
  auto* prepare_cmd = app.add_subcommand("prepare", "scan a dataset tree and write manifests");
  ConfigArgs prepare_args;
  add_config_options(prepare_cmd, &prepare_args);
  std::string prepare_root, prepare_split = "train", prepare_out = ".";
  bool prepare_cache = false;
  prepare_cmd->add_option("--root", prepare_root, "dataset root (overrides config)");
  prepare_cmd->add_option("--split", prepare_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  prepare_cmd->add_option("--out", prepare_out, "output directory for manifests");
  prepare_cmd->add_flag("--cache", prepare_cache,
                        "precompute the spectral feature cache for the split");
  prepare_cmd->callback([&] {
    ExperimentConfig cfg = prepare_args.load();
    const std::string root = prepare_root.empty() ? cfg.dataset_root : prepare_root;
    const Split split = *split_from_name(prepare_split);
    DatasetManifest manifest = scan_dataset(root, split);
    fs::create_directories(prepare_out);
    const std::string base = (fs::path(prepare_out) / ("manifest_" + prepare_split)).string();
    write_manifest_csv(base + ".csv", manifest);
    write_manifest_json(base + ".json", manifest);
    if (!manifest.rejects.empty()) {
      write_rejects_csv(base + "_rejects.csv", manifest.rejects);
    }
    std::cout << "scanned " << manifest.entries.size() << " clips, " << manifest.class_count
              << " classes, " << manifest.rejects.size() << " rejects -> " << base << ".csv\n";
    if (prepare_cache) {
      const std::string cache_dir = cfg.train.feature_cache_dir.empty()
                                        ? (fs::path(prepare_out) / "feature_cache").string()
                                        : cfg.train.feature_cache_dir;
      const FeatureKind kind = cfg.train.feature_kind == FeatureKind::Spec ? FeatureKind::Spec
                                                                           : FeatureKind::Sgram;
      int64_t cached = 0;
      for (const auto& e : manifest.entries) {
        AudioClip clip = load_clip(e.path, cfg.spectral.sample_rate, cfg.train.clip_samples);
        FeatureTensor f = kind == FeatureKind::Spec ? log_spec(clip, cfg.spectral)
                                                    : log_mel(clip, cfg.spectral);
        store_cached_feature(cache_dir, e.path, cfg.spectral, f);
        ++cached;
      }
      std::cout << "cached " << cached << " " << feature_kind_name(kind) << " features in "
                << cache_dir << "\n";
    }
  });

  // ---- train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model on the train split");
  ConfigArgs train_args;
  add_config_options(train_cmd, &train_args);
  std::string train_root;
  train_cmd->add_option("--root", train_root, "dataset root (overrides config)");
  train_cmd->callback([&] {
    ExperimentConfig cfg = train_args.load();
    if (!train_root.empty()) cfg.dataset_root = train_root;
    if (cfg.dataset_root.empty()) throw std::invalid_argument("dataset root is not set");
    DatasetManifest manifest = scan_dataset(cfg.dataset_root, Split::train);
    const std::string run_dir = (fs::path(cfg.output_dir) / cfg.run_id).string();
    RunManifest run_manifest = RunManifest::create(run_dir);
    write_manifest_csv((fs::path(run_dir) / "train_manifest.csv").string(), manifest);
    run_manifest.record("train_manifest.csv");
    ModelBundle bundle = train(manifest, cfg.spectral, cfg.train, run_dir);
    run_manifest.record("train_log.csv");
    run_manifest.record("model.bundle");
    for (const auto& f : fs::directory_iterator(run_dir)) {
      const std::string name = f.path().filename().string();
      if (name.rfind("checkpoint_epoch_", 0) == 0) run_manifest.record(name);
    }
    std::cout << "trained " << feature_kind_name(cfg.train.feature_kind) << "-MFN ("
              << head_kind_name(cfg.train.head_kind) << "), final loss "
              << bundle.history.back().mean_loss << ", accuracy "
              << bundle.history.back().accuracy << " -> " << run_dir << "/model.bundle\n";
  });

  // ---- score ----------------------------------------------------------------
  auto* score_cmd = app.add_subcommand("score", "score the test split with a trained bundle");
  ConfigArgs score_args;
  add_config_options(score_cmd, &score_args);
  std::string score_bundle, score_root, score_manifest, score_out = "scores.csv";
  int score_batch = 0;
  score_cmd->add_option("--bundle", score_bundle, "trained model bundle")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--root", score_root, "dataset root to scan for the test split");
  score_cmd->add_option("--manifest", score_manifest, "test manifest CSV")
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--out", score_out, "output scores CSV");
  score_cmd->add_option("--batch", score_batch, "scoring batch size");
  score_cmd->callback([&] {
    ExperimentConfig cfg = score_args.load();
    if (score_root.empty()) score_root = cfg.dataset_root;
    if (score_batch <= 0) score_batch = cfg.score_batch;
    ModelBundle bundle = load_bundle(score_bundle);
    DatasetManifest manifest =
        manifest_from_args(score_manifest, score_root, Split::test, &bundle.id_map);
    ScoreResult result = score_split(bundle, manifest, score_batch);
    write_scores_csv(score_out, result.records);
    if (!result.complete) {
      write_rejects_csv(score_out + ".rejects.csv", result.rejects);
      log_warning("scoring incomplete: ", result.rejects.size(), " clips rejected (see ",
                  score_out, ".rejects.csv)");
    }
    std::cout << "scored " << result.records.size() << " clips -> " << score_out
              << (result.complete ? "" : " (incomplete)") << "\n";
  });

  // ---- evaluate ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "aggregate scores into AUC/pAUC/mAUC reports");
  ConfigArgs eval_args;
  add_config_options(eval_cmd, &eval_args);
  std::string eval_scores, eval_out = ".";
  double eval_p = 0.1;
  eval_cmd->add_option("--scores", eval_scores, "scores CSV from the score subcommand")
      ->required()
      ->check(CLI::ExistingFile);
  auto* eval_p_opt = eval_cmd->add_option("--p", eval_p, "pAUC false-positive-rate cap");
  eval_cmd->add_option("--out", eval_out, "output directory for report files");
  eval_cmd->callback([&] {
    ExperimentConfig cfg = eval_args.load();
    const double p = eval_p_opt->count() > 0 ? eval_p : cfg.pauc_p;
    std::vector<ScoreRecord> records = read_scores_csv(eval_scores);
    MetricsReport report = build_report(records, p);
    fs::create_directories(eval_out);
    write_report_csv((fs::path(eval_out) / "report.csv").string(), report);
    write_report_json((fs::path(eval_out) / "report.json").string(), report);
    const std::string table = render_report_table(report);
    std::ofstream table_out((fs::path(eval_out) / "report_table.txt").string(), std::ios::trunc);
    table_out << table;
    std::cout << table;
    for (const auto& w : report.warnings) log_warning(w);
  });

  // ---- ablate -----------------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "run the feature/head ablation matrix");
  ConfigArgs ablate_args;
  add_config_options(ablate_cmd, &ablate_args);
  ablate_cmd->callback([&] {
    ExperimentConfig cfg = ablate_args.load();
    AblationResult result = run_ablation(cfg);
    std::cout << render_ablation_table(result);
    int failed = 0;
    for (const auto& cell : result.cells) {
      if (!cell.ok) ++failed;
    }
    if (failed > 0) {
      throw std::runtime_error(std::to_string(failed) + " ablation cell(s) failed");
    }
    std::cout << "ablation artifacts in " << result.run_dir << "\n";
  });

  // ---- embed ------------------------------------------------------------------
  auto* embed_cmd = app.add_subcommand("embed", "export latent embeddings for a manifest");
  ConfigArgs embed_args;
  add_config_options(embed_cmd, &embed_args);
  std::string embed_bundle, embed_root, embed_manifest, embed_out = "embeddings.csv";
  std::string embed_split = "test", embed_feature;
  int embed_batch = 0;
  embed_cmd->add_option("--bundle", embed_bundle, "trained model bundle")
      ->required()
      ->check(CLI::ExistingFile);
  embed_cmd->add_option("--root", embed_root, "dataset root to scan");
  embed_cmd->add_option("--manifest", embed_manifest, "manifest CSV")->check(CLI::ExistingFile);
  embed_cmd->add_option("--split", embed_split, "split to scan when using --root")
      ->check(CLI::IsMember({"train", "test"}));
  embed_cmd->add_option("--feature", embed_feature,
                        "expected feature kind (asserted against the bundle)");
  embed_cmd->add_option("--out", embed_out, "output embeddings CSV");
  embed_cmd->add_option("--batch", embed_batch, "batch size");
  embed_cmd->callback([&] {
    ExperimentConfig cfg = embed_args.load();
    if (embed_root.empty()) embed_root = cfg.dataset_root;
    if (embed_batch <= 0) embed_batch = cfg.score_batch;
    ModelBundle bundle = load_bundle(embed_bundle);
    DatasetManifest manifest = manifest_from_args(embed_manifest, embed_root,
                                                  *split_from_name(embed_split), &bundle.id_map);
    std::optional<FeatureKind> expected;
    if (!embed_feature.empty()) {
      expected = feature_kind_from_name(embed_feature);
      if (!expected) throw std::invalid_argument("unknown feature kind: " + embed_feature);
    }
    EmbeddingExportResult result =
        export_embeddings(bundle, manifest, embed_out, expected, embed_batch);
    std::cout << "wrote " << result.rows << " embedding rows -> " << embed_out
              << (result.complete ? "" : " (incomplete)") << "\n";
  });

  // ---- plot -------------------------------------------------------------------
  auto* plot_cmd = app.add_subcommand("plot", "project embeddings to 2-D and render a scatter");
  ConfigArgs plot_args;
  add_config_options(plot_cmd, &plot_args);
  std::string plot_embeddings, plot_out = "embeddings.svg", plot_coords;
  std::string plot_title = "latent embeddings";
  plot_cmd->add_option("--embeddings", plot_embeddings, "embeddings CSV from the embed subcommand")
      ->required()
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot_out, "output SVG file");
  plot_cmd->add_option("--coords", plot_coords, "also write projected coordinates CSV");
  plot_cmd->add_option("--title", plot_title, "plot title");
  plot_cmd->callback([&] {
    EmbeddingRows rows = read_embeddings_csv(plot_embeddings);
    auto projected = pca_project_2d(rows.vectors);
    std::vector<ScatterPoint> points(projected.size());
    for (size_t i = 0; i < projected.size(); ++i) {
      points[i].x = projected[i][0];
      points[i].y = projected[i][1];
      points[i].series = rows.machine_types[i] + " id " + rows.machine_ids[i];
      points[i].anomaly = rows.conditions[i] == Condition::anomaly;
    }
    write_scatter_svg(plot_out, points, plot_title);
    if (!plot_coords.empty()) {
      std::ofstream out(plot_coords, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write coords: " + plot_coords);
      out.precision(9);
      out << "x,y,machine_type,machine_id,condition\n";
      for (size_t i = 0; i < projected.size(); ++i) {
        out << projected[i][0] << "," << projected[i][1] << ","
            << csv_join({rows.machine_types[i], rows.machine_ids[i],
                         condition_name(rows.conditions[i])})
            << "\n";
      }
    }
    std::cout << "plotted " << points.size() << " points -> " << plot_out << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_app(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
