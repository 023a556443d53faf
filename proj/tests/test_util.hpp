// Copyright 2026 The molspace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <vector>

#include "molspace/geom.hpp"
#include "molspace/rng.hpp"

namespace molspace::testing {

/// Heavy atoms drawn from {C, N, O, S} with positions in a box of half-width `spread`.
inline geom::AtomicPointCloud random_cloud(Rng& rng, std::size_t n, double spread = 3.0) {
  static constexpr int kTypes[] = {6, 7, 8, 16};
  std::vector<int> z;
  std::vector<geom::Vec3> p;
  for (std::size_t i = 0; i < n; ++i) {
    z.push_back(kTypes[rng.below(4)]);
    p.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                 rng.uniform(-spread, spread)});
  }
  return geom::AtomicPointCloud(z, p);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace molspace::testing
