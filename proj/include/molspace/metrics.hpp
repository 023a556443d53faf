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

#include <filesystem>
#include <string>
#include <vector>

namespace molspace::metrics {

struct ScreenItem {
  std::string id;
  double score = 0.0;
  bool active = false;
};

inline constexpr double kDefaultBedrocAlpha = 80.5;

enum class AurocTies {
  kHalf,  // tied active/inactive pairs count 1/2 (mid-rank)
  kById,  // ties broken by id ascending before counting
};

/// 1-based ranks of the actives after sorting by (score desc, id asc).
/// Throws ArgumentError for duplicate ids and NumericError for non-finite scores.
std::vector<std::size_t> active_ranks(const std::vector<ScreenItem>& screen);

/// P(random active outranks random inactive). Needs both classes.
double auroc(const std::vector<ScreenItem>& screen, AurocTies ties = AurocTies::kHalf);

/// Truchon-Bayly BEDROC. Needs alpha > 0 and 1 <= n < N.
double bedroc(const std::vector<ScreenItem>& screen, double alpha = kDefaultBedrocAlpha);

/// (actives in top m / m) / (n / N), m = max(1, floor(fraction * N)).
double enrichment_factor(const std::vector<ScreenItem>& screen, double fraction);

struct ScreenReport {
  std::string target;
  double auroc = 0.0;
  double bedroc = 0.0;
  double ef_0_5 = 0.0;
  double ef_1 = 0.0;
  double ef_5 = 0.0;
};

ScreenReport evaluate_screen(const std::string& target, const std::vector<ScreenItem>& screen,
                             double alpha = kDefaultBedrocAlpha, AurocTies ties = AurocTies::kHalf);

/// Header "target,auroc,bedroc,ef_0.5,ef_1,ef_5"; values printed with 17 significant digits.
std::string format_report_csv(const std::vector<ScreenReport>& reports);

/// Ranked-list input: header "target,id,score,label", label in {0,1}. Targets
/// keep first-appearance order. FormatError names the offending line.
std::vector<std::pair<std::string, std::vector<ScreenItem>>> parse_screen_csv(const std::string& text,
                                                                             const std::string& origin);
std::vector<std::pair<std::string, std::vector<ScreenItem>>> load_screen_csv(const std::filesystem::path& path);
std::string format_screen_csv(const std::vector<std::pair<std::string, std::vector<ScreenItem>>>& screens);

}  // namespace molspace::metrics
