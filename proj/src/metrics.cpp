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

#include "stgram/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "stgram/csv.hpp"

using nlohmann::json;

namespace stgram {

namespace {

void check_scores(const std::vector<double>& scores, const char* which) {
  if (scores.empty()) throw std::invalid_argument(std::string(which) + " score list is empty");
  for (double v : scores) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(which) + " score list has a non-finite value");
    }
  }
}

}  // namespace

double auc(const std::vector<double>& normal_scores, const std::vector<double>& anomaly_scores) {
  check_scores(normal_scores, "normal");
  check_scores(anomaly_scores, "anomaly");

  struct Item {
    double score;
    bool anomaly;
  };
  std::vector<Item> items;
  items.reserve(normal_scores.size() + anomaly_scores.size());
  for (double s : normal_scores) items.push_back({s, false});
  for (double s : anomaly_scores) items.push_back({s, true});
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });

  // Midranks over the pooled sample; AUC from the rank-sum statistic.
  double rank_sum_anomaly = 0.0;
  size_t i = 0;
  while (i < items.size()) {
    size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k) {
      if (items[k].anomaly) rank_sum_anomaly += midrank;
    }
    i = j;
  }
  const double na = static_cast<double>(anomaly_scores.size());
  const double nn = static_cast<double>(normal_scores.size());
  return (rank_sum_anomaly - na * (na + 1.0) / 2.0) / (na * nn);
}

double pauc(const std::vector<double>& normal_scores, const std::vector<double>& anomaly_scores,
            double p) {
  check_scores(normal_scores, "normal");
  check_scores(anomaly_scores, "anomaly");
  if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("pauc needs p in (0, 1]");

  std::vector<double> anoms = anomaly_scores;
  std::vector<double> norms = normal_scores;
  std::sort(anoms.begin(), anoms.end(), std::greater<>());
  std::sort(norms.begin(), norms.end(), std::greater<>());
  const double na = static_cast<double>(anoms.size());
  const double nn = static_cast<double>(norms.size());

  // Sweep distinct thresholds downward; ties advance both counts at once,
  // which makes the corresponding ROC segment diagonal.
  size_t ia = 0, in = 0;
  double tp = 0.0, fp = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  double area = 0.0;
  while (ia < anoms.size() || in < norms.size()) {
    double v;
    if (ia < anoms.size() && in < norms.size()) {
      v = std::max(anoms[ia], norms[in]);
    } else if (ia < anoms.size()) {
      v = anoms[ia];
    } else {
      v = norms[in];
    }
    while (ia < anoms.size() && anoms[ia] == v) {
      tp += 1.0;
      ++ia;
    }
    while (in < norms.size() && norms[in] == v) {
      fp += 1.0;
      ++in;
    }
    const double fpr = fp / nn;
    const double tpr = tp / na;
    if (fpr <= p) {
      area += (fpr - prev_fpr) * 0.5 * (prev_tpr + tpr);
    } else if (prev_fpr < p) {
      const double t = (p - prev_fpr) / (fpr - prev_fpr);
      const double tpr_at_p = prev_tpr + t * (tpr - prev_tpr);
      area += (p - prev_fpr) * 0.5 * (prev_tpr + tpr_at_p);
    }
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  return area / p;
}

double mauc(const std::vector<double>& per_id_aucs) {
  if (per_id_aucs.empty()) throw std::invalid_argument("mauc of an empty list");
  return *std::min_element(per_id_aucs.begin(), per_id_aucs.end());
}

MetricsReport build_report(const std::vector<ScoreRecord>& records, double p) {
  if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("build_report needs p in (0, 1]");

  struct Bucket {
    std::vector<double> normals, anomalies;
  };
  std::map<std::pair<std::string, std::string>, Bucket> buckets;
  for (const auto& rec : records) {
    Bucket& b = buckets[{rec.machine_type, rec.machine_id}];
    if (rec.condition == Condition::normal) {
      b.normals.push_back(rec.score);
    } else if (rec.condition == Condition::anomaly) {
      b.anomalies.push_back(rec.score);
    }
  }

  MetricsReport report;
  report.p = p;
  std::map<std::string, std::vector<IdMetrics>> per_type;
  for (const auto& [key, bucket] : buckets) {
    if (bucket.normals.empty() || bucket.anomalies.empty()) {
      report.warnings.push_back("(" + key.first + ", " + key.second +
                                ") excluded: missing " +
                                (bucket.normals.empty() ? "normal" : "anomaly") + " scores");
      continue;
    }
    IdMetrics m;
    m.machine_type = key.first;
    m.machine_id = key.second;
    m.auc = auc(bucket.normals, bucket.anomalies);
    m.pauc = pauc(bucket.normals, bucket.anomalies, p);
    m.normal_count = static_cast<int>(bucket.normals.size());
    m.anomaly_count = static_cast<int>(bucket.anomalies.size());
    per_type[key.first].push_back(std::move(m));
  }
  if (per_type.empty()) {
    throw std::invalid_argument(
        "no (machine_type, machine_id) group has both normal and anomaly scores");
  }

  for (auto& [type, ids] : per_type) {
    TypeMetrics t;
    t.machine_type = type;
    std::vector<double> aucs;
    for (const auto& id : ids) {
      t.mean_auc += id.auc;
      t.mean_pauc += id.pauc;
      aucs.push_back(id.auc);
    }
    t.mean_auc /= static_cast<double>(ids.size());
    t.mean_pauc /= static_cast<double>(ids.size());
    t.min_auc = mauc(aucs);
    t.ids = std::move(ids);
    report.types.push_back(std::move(t));
  }
  for (const auto& t : report.types) {
    report.average_auc += t.mean_auc;
    report.average_pauc += t.mean_pauc;
    report.average_mauc += t.min_auc;
  }
  const double nt = static_cast<double>(report.types.size());
  report.average_auc /= nt;
  report.average_pauc /= nt;
  report.average_mauc /= nt;
  return report;
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out.precision(9);
  out << "scope,machine_type,machine_id,auc,pauc,mauc\n";
  for (const auto& t : report.types) {
    for (const auto& id : t.ids) {
      out << "id," << csv_escape(t.machine_type) << "," << csv_escape(id.machine_id) << ","
          << id.auc << "," << id.pauc << ",\n";
    }
  }
  for (const auto& t : report.types) {
    out << "type," << csv_escape(t.machine_type) << ",," << t.mean_auc << "," << t.mean_pauc
        << "," << t.min_auc << "\n";
  }
  out << "overall,,," << report.average_auc << "," << report.average_pauc << ","
      << report.average_mauc << "\n";
}

namespace {

json report_to_json(const MetricsReport& report) {
  json j;
  j["p"] = report.p;
  j["average"] = {{"auc", report.average_auc},
                  {"pauc", report.average_pauc},
                  {"mauc", report.average_mauc}};
  auto& types = j["types"] = json::array();
  for (const auto& t : report.types) {
    json tj;
    tj["machine_type"] = t.machine_type;
    tj["auc"] = t.mean_auc;
    tj["pauc"] = t.mean_pauc;
    tj["mauc"] = t.min_auc;
    auto& ids = tj["ids"] = json::array();
    for (const auto& id : t.ids) {
      ids.push_back({{"machine_id", id.machine_id},
                     {"auc", id.auc},
                     {"pauc", id.pauc},
                     {"normal_count", id.normal_count},
                     {"anomaly_count", id.anomaly_count}});
    }
    types.push_back(std::move(tj));
  }
  j["warnings"] = report.warnings;
  return j;
}

}  // namespace

void write_report_json(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << report_to_json(report).dump(2) << "\n";
}

MetricsReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report: " + path);
  json j = json::parse(in);
  MetricsReport report;
  report.p = j.at("p");
  report.average_auc = j.at("average").at("auc");
  report.average_pauc = j.at("average").at("pauc");
  report.average_mauc = j.at("average").at("mauc");
  for (const auto& tj : j.at("types")) {
    TypeMetrics t;
    t.machine_type = tj.at("machine_type");
    t.mean_auc = tj.at("auc");
    t.mean_pauc = tj.at("pauc");
    t.min_auc = tj.at("mauc");
    for (const auto& ij : tj.at("ids")) {
      IdMetrics id;
      id.machine_type = t.machine_type;
      id.machine_id = ij.at("machine_id");
      id.auc = ij.at("auc");
      id.pauc = ij.at("pauc");
      id.normal_count = ij.at("normal_count");
      id.anomaly_count = ij.at("anomaly_count");
      t.ids.push_back(std::move(id));
    }
    report.types.push_back(std::move(t));
  }
  report.warnings = j.at("warnings").get<std::vector<std::string>>();
  return report;
}

std::string render_report_table(const MetricsReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);

  const int name_width = 10;
  int col_width = 9;
  for (const auto& t : report.types) {
    col_width = std::max(col_width, static_cast<int>(t.machine_type.size()) + 2);
  }

  os << std::left << std::setw(name_width) << "metric" << std::right;
  for (const auto& t : report.types) os << std::setw(col_width) << t.machine_type;
  os << std::setw(col_width) << "Average" << "\n";

  auto row = [&](const char* label, auto getter, double average) {
    os << std::left << std::setw(name_width) << label << std::right;
    for (const auto& t : report.types) os << std::setw(col_width) << getter(t) * 100.0;
    os << std::setw(col_width) << average * 100.0 << "\n";
  };
  row("AUC(%)", [](const TypeMetrics& t) { return t.mean_auc; }, report.average_auc);
  row("pAUC(%)", [](const TypeMetrics& t) { return t.mean_pauc; }, report.average_pauc);
  row("mAUC(%)", [](const TypeMetrics& t) { return t.min_auc; }, report.average_mauc);
  return os.str();
}

}  // namespace stgram
