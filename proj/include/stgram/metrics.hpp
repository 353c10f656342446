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

#ifndef STGRAM_METRICS_HPP_
#define STGRAM_METRICS_HPP_

#include <string>
#include <vector>

#include "stgram/scorer.hpp"

namespace stgram {

/// Mann-Whitney AUC: fraction of (anomaly, normal) pairs where the anomaly
/// scores higher, ties credited one half. Computed from midranks.
double auc(const std::vector<double>& normal_scores, const std::vector<double>& anomaly_scores);

/// Area under the empirical ROC restricted to FPR in [0, p], with linear
/// interpolation at the truncation point, normalized by p. pauc(..., 1) == auc.
double pauc(const std::vector<double>& normal_scores, const std::vector<double>& anomaly_scores,
            double p);

/// Minimum per-id AUC: the worst individual machine of a type.
double mauc(const std::vector<double>& per_id_aucs);

struct IdMetrics {
  std::string machine_type;
  std::string machine_id;
  double auc = 0.0;
  double pauc = 0.0;
  int normal_count = 0;
  int anomaly_count = 0;
};

struct TypeMetrics {
  std::string machine_type;
  double mean_auc = 0.0;
  double mean_pauc = 0.0;
  double min_auc = 0.0;  // mAUC
  std::vector<IdMetrics> ids;
};

struct MetricsReport {
  double p = 0.1;
  std::vector<TypeMetrics> types;       // lexicographic by machine_type
  double average_auc = 0.0;             // unweighted mean over types
  double average_pauc = 0.0;
  double average_mauc = 0.0;
  std::vector<std::string> warnings;    // ids excluded for missing a condition
};

/// Aggregates score records into per-id, per-type and overall metrics. Ids
/// missing one condition are excluded with a warning.
MetricsReport build_report(const std::vector<ScoreRecord>& records, double p = 0.1);

void write_report_csv(const std::string& path, const MetricsReport& report);
void write_report_json(const std::string& path, const MetricsReport& report);
MetricsReport read_report_json(const std::string& path);

/// Fixed-width text rendering: machine types as columns, AUC/pAUC/mAUC rows,
/// Average column, values in percent.
std::string render_report_table(const MetricsReport& report);

}  // namespace stgram

#endif  // STGRAM_METRICS_HPP_
