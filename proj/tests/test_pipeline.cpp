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

#include <cmath>

#include "doctest.h"
#include "molspace/pipeline.hpp"
#include "json.hpp"

using namespace molspace;
using namespace molspace::pipeline;

TEST_CASE("fnv1a64 reference values") {
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
  CHECK(hex64(fnv1a64("foobar")) == "85944171f73967e8");
}

TEST_CASE("manifest records config hash and outputs in order") {
  Manifest m{"search", {"molspace", "search", "--k", "5"}, R"({"k":5})", 9, {"out.csv"}};
  const auto j = nlohmann::ordered_json::parse(format_manifest(m));
  CHECK(j["command"] == "search");
  CHECK(j["seed"] == 9);
  CHECK(j["config_hash"] == "fnv1a64:" + hex64(fnv1a64(R"({"k":5})")));
  CHECK(j["outputs"][0] == "out.csv");
  CHECK(j["versions"]["molspace"] == kVersion);
  CHECK(manifest_path("x/out.csv") == std::filesystem::path("x/out.csv.manifest.json"));
}

TEST_CASE("tiny steering run is deterministic and well formed") {
  SteeringConfig cfg = default_steering_config();
  cfg.per_label = 20;
  cfg.conditions = 4;
  cfg.train.steps = 5;
  cfg.decoder.hidden = 16;
  cfg.decoder.layers = 1;
  const auto a = run_steering_ablation(cfg);
  const auto b = run_steering_ablation(cfg);
  REQUIRE(a.tokens.size() == 2);
  CHECK(a.tokens[0].label == "A");
  CHECK(a.tokens[1].label == "B");
  CHECK(a.samples.size() == 2 * cfg.conditions);
  CHECK(a.losses.size() == static_cast<std::size_t>(cfg.train.steps));
  CHECK(steering_samples_csv(a) == steering_samples_csv(b));
  CHECK(steering_summary_csv(a) == steering_summary_csv(b));
  for (const auto& s : a.samples) CHECK(s.valid == !std::isnan(s.nn_similarity));
}
