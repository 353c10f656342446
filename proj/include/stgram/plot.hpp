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

#ifndef STGRAM_PLOT_HPP_
#define STGRAM_PLOT_HPP_

#include <array>
#include <string>
#include <vector>

namespace stgram {

/// PCA projection of row vectors onto their top two principal components.
/// Signs are fixed (largest-magnitude loading positive) so output is
/// deterministic.
std::vector<std::array<double, 2>> pca_project_2d(const std::vector<std::vector<double>>& rows);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string series;    // colored by this key (machine id)
  bool anomaly = false;  // normal = dot, anomaly = cross
};

/// Static SVG scatter plot with a legend; one color per series.
void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                       const std::string& title);

}  // namespace stgram

#endif  // STGRAM_PLOT_HPP_
