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

#include "molspace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>

#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace::metrics {

namespace {

struct Counts {
  std::size_t total = 0;
  std::size_t actives = 0;
};

Counts count(const std::vector<ScreenItem>& screen) {
  Counts c{screen.size(), 0};
  for (const auto& item : screen) {
    if (!std::isfinite(item.score)) throw NumericError("screen item " + item.id + " has a non-finite score");
    c.actives += item.active;
  }
  return c;
}

std::vector<const ScreenItem*> ranked(const std::vector<ScreenItem>& screen) {
  std::vector<const ScreenItem*> order;
  order.reserve(screen.size());
  for (const auto& item : screen) order.push_back(&item);
  std::sort(order.begin(), order.end(), [](const ScreenItem* a, const ScreenItem* b) {
    return a->score != b->score ? a->score > b->score : a->id < b->id;
  });
  std::set<std::string_view> seen;
  for (const auto* item : order)
    if (!seen.insert(item->id).second) throw ArgumentError("duplicate screen id " + item->id);
  return order;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> active_ranks(const std::vector<ScreenItem>& screen) {
  count(screen);
  const auto order = ranked(screen);
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i]->active) ranks.push_back(i + 1);
  return ranks;
}

double auroc(const std::vector<ScreenItem>& screen, AurocTies ties) {
  const Counts c = count(screen);
  if (c.actives == 0 || c.actives == c.total)
    throw ArgumentError("auroc needs at least one active and one inactive");
  const auto order = ranked(screen);
  // Twice the Mann-Whitney count so half-credit ties stay integral.
  std::uint64_t doubled = 0;
  std::uint64_t inactives_below = c.total - c.actives;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t group_actives = 0, group_inactives = 0;
    if (ties == AurocTies::kHalf) {
      while (j < order.size() && order[j]->score == order[i]->score) {
        (order[j]->active ? group_actives : group_inactives) += 1;
        ++j;
      }
    } else {
      (order[j]->active ? group_actives : group_inactives) += 1;
      ++j;
    }
    inactives_below -= group_inactives;
    doubled += group_actives * (2 * inactives_below + group_inactives);
    i = j;
  }
  const double pairs = 2.0 * static_cast<double>(c.actives) * static_cast<double>(c.total - c.actives);
  return static_cast<double>(doubled) / pairs;
}

double bedroc(const std::vector<ScreenItem>& screen, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ArgumentError("bedroc alpha must be positive");
  const Counts c = count(screen);
  if (c.actives == 0 || c.actives >= c.total) throw ArgumentError("bedroc needs 1 <= actives < total");
  const auto ranks = active_ranks(screen);
  const double n = static_cast<double>(c.actives);
  const double big_n = static_cast<double>(c.total);
  double sum = 0.0;
  for (std::size_t r : ranks) sum += std::exp(-alpha * static_cast<double>(r) / big_n);
  const double random_sum = (1.0 / big_n) * (1.0 - std::exp(-alpha)) / std::expm1(alpha / big_n);
  const double rie = (sum / n) / random_sum;
  const double ra = n / big_n;
  const double scale = ra * std::sinh(alpha / 2.0) / (std::cosh(alpha / 2.0) - std::cosh(alpha / 2.0 - alpha * ra));
  const double shift = 1.0 / (1.0 - std::exp(alpha * (1.0 - ra)));
  const double value = rie * scale + shift;
  if (!std::isfinite(value)) throw NumericError("bedroc overflowed for alpha " + fmt(alpha));
  return value;
}

double enrichment_factor(const std::vector<ScreenItem>& screen, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("enrichment fraction must lie in (0, 1]");
  const Counts c = count(screen);
  if (c.total == 0) throw ArgumentError("enrichment_factor on an empty screen");
  if (c.actives == 0) throw ArgumentError("enrichment_factor needs at least one active");
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(c.total))));
  const auto order = ranked(screen);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) hits += order[i]->active;
  // One division of integer products, so hand-countable cases come out exact.
  return static_cast<double>(hits * c.total) / static_cast<double>(m * c.actives);
}

ScreenReport evaluate_screen(const std::string& target, const std::vector<ScreenItem>& screen, double alpha,
                             AurocTies ties) {
  ScreenReport r;
  r.target = target;
  r.auroc = auroc(screen, ties);
  r.bedroc = bedroc(screen, alpha);
  r.ef_0_5 = enrichment_factor(screen, 0.005);
  r.ef_1 = enrichment_factor(screen, 0.01);
  r.ef_5 = enrichment_factor(screen, 0.05);
  return r;
}

std::string format_report_csv(const std::vector<ScreenReport>& reports) {
  std::string out = "target,auroc,bedroc,ef_0.5,ef_1,ef_5\n";
  for (const auto& r : reports)
    out += r.target + "," + fmt(r.auroc) + "," + fmt(r.bedroc) + "," + fmt(r.ef_0_5) + "," + fmt(r.ef_1) + "," +
           fmt(r.ef_5) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::vector<ScreenItem>>> parse_screen_csv(const std::string& text,
                                                                             const std::string& origin) {
  std::vector<std::pair<std::string, std::vector<ScreenItem>>> out;
  std::map<std::string, std::set<std::string>> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "target,id,score,label")
        throw FormatError(origin, lineno, "expected header target,id,score,label");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 4) throw FormatError(origin, lineno, "expected 4 fields, found " + std::to_string(f.size()));
    if (f[0].empty() || f[1].empty()) throw FormatError(origin, lineno, "empty target or id");
    ScreenItem item;
    item.id = f[1];
    std::size_t used = 0;
    try {
      item.score = std::stod(f[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[2].size() || f[2].empty() || !std::isfinite(item.score))
      throw FormatError(origin, lineno, "score is not a finite number: '" + f[2] + "'");
    if (f[3] != "0" && f[3] != "1") throw FormatError(origin, lineno, "label must be 0 or 1");
    item.active = f[3] == "1";
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == f[0]; });
    if (it == out.end()) {
      out.emplace_back(f[0], std::vector<ScreenItem>{});
      it = out.end() - 1;
    }
    if (!seen[f[0]].insert(item.id).second) throw FormatError(origin, lineno, "duplicate id " + item.id + " in target " + f[0]);
    it->second.push_back(std::move(item));
  }
  if (!header) throw FormatError(origin, 0, "missing header");
  return out;
}

std::vector<std::pair<std::string, std::vector<ScreenItem>>> load_screen_csv(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_screen_csv(std::string(bytes.begin(), bytes.end()), path.string());
}

std::string format_screen_csv(const std::vector<std::pair<std::string, std::vector<ScreenItem>>>& screens) {
  std::string out = "target,id,score,label\n";
  for (const auto& [target, items] : screens)
    for (const auto& item : items) out += target + "," + item.id + "," + fmt(item.score) + "," + (item.active ? "1" : "0") + "\n";
  return out;
}

}  // namespace molspace::metrics
