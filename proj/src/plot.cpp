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

#include "stgram/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <Eigen/Dense>

namespace stgram {

std::vector<std::array<double, 2>> pca_project_2d(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const size_t n = rows.size();
  const size_t dim = rows[0].size();
  if (dim == 0) throw std::invalid_argument("pca_project_2d: empty feature vectors");
  for (const auto& r : rows) {
    if (r.size() != dim) throw std::invalid_argument("pca_project_2d: ragged input");
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  Eigen::MatrixXd cov = (x.transpose() * x) / std::max<double>(1.0, static_cast<double>(n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca eigendecomposition failed");

  // Eigenvalues ascend; take the last two columns, fix signs.
  const auto cols = solver.eigenvectors().cols();
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(dim), 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    if (cols >= c + 1) v = solver.eigenvectors().col(cols - 1 - c);
    Eigen::Index argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v(argmax) < 0.0) v = -v;
    basis.col(c) = v;
  }

  Eigen::MatrixXd projected = x * basis;
  std::vector<std::array<double, 2>> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i] = {projected(static_cast<Eigen::Index>(i), 0),
              projected(static_cast<Eigen::Index>(i), 1)};
  }
  return out;
}

void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                       const std::string& title) {
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr int kPaletteSize = 10;
  const double width = 860.0, height = 620.0;
  const double left = 60.0, right = 200.0, top = 50.0, bottom = 40.0;

  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  if (!points.empty()) {
    min_x = max_x = points[0].x;
    min_y = max_y = points[0].y;
    for (const auto& pt : points) {
      min_x = std::min(min_x, pt.x);
      max_x = std::max(max_x, pt.x);
      min_y = std::min(min_y, pt.y);
      max_y = std::max(max_y, pt.y);
    }
  }
  if (max_x <= min_x) max_x = min_x + 1.0;
  if (max_y <= min_y) max_y = min_y + 1.0;

  auto sx = [&](double x) {
    return left + (x - min_x) / (max_x - min_x) * (width - left - right);
  };
  auto sy = [&](double y) {
    return height - bottom - (y - min_y) / (max_y - min_y) * (height - top - bottom);
  };

  std::map<std::string, std::string> colors;
  for (const auto& pt : points) {
    if (!colors.count(pt.series)) {
      colors[pt.series] = kPalette[colors.size() % kPaletteSize];
    }
  }

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write SVG: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"18\" "
         "font-family=\"sans-serif\">"
      << title << "</text>\n";

  for (const auto& pt : points) {
    const double x = sx(pt.x), y = sy(pt.y);
    const std::string& color = colors[pt.series];
    if (pt.anomaly) {
      out << "<path d=\"M" << x - 3.5 << " " << y - 3.5 << " L" << x + 3.5 << " " << y + 3.5
          << " M" << x - 3.5 << " " << y + 3.5 << " L" << x + 3.5 << " " << y - 3.5
          << "\" stroke=\"" << color << "\" stroke-width=\"1.6\"/>\n";
    } else {
      out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color
          << "\" fill-opacity=\"0.75\"/>\n";
    }
  }

  double ly = top + 10.0;
  const double lx = width - right + 24.0;
  for (const auto& [series, color] : colors) {
    out << "<circle cx=\"" << lx << "\" cy=\"" << ly << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << lx + 12.0 << "\" y=\"" << ly + 4.0
        << "\" font-size=\"13\" font-family=\"sans-serif\">" << series << "</text>\n";
    ly += 20.0;
  }
  out << "<text x=\"" << lx << "\" y=\"" << ly + 8.0
      << "\" font-size=\"12\" font-family=\"sans-serif\">dot = normal, x = anomaly</text>\n";
  out << "</svg>\n";
}

}  // namespace stgram
