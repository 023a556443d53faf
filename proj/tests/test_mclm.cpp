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
#include <filesystem>

#include "doctest.h"
#include "molspace/chem.hpp"
#include "molspace/error.hpp"
#include "molspace/gradcheck.hpp"
#include "molspace/mclm.hpp"
#include "molspace/synth.hpp"

using namespace molspace;
using namespace molspace::mclm;
using ad::Tensor;

namespace {

MclmConfig tiny_config() {
  MclmConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 8;
  c.max_positions = 16;
  c.cond_dim = 4;
  return c;
}

void randomize(ParamStore& params, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double& v : params.value(i).vec()) v = rng.normal(0.0, sd);
}

std::vector<double> random_x(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return normalize_condition(x);
}

Example example(const Vocab& vocab, const std::string& ds, const std::string& smiles, std::vector<double> x) {
  auto ids = vocab.encode(smiles);
  ids.push_back(kEos);
  return {ds, std::move(x), ids};
}

// Row-wise log-softmax NLL, written out directly.
double row_nll(const double* row, std::size_t v, int target) {
  double mx = row[0];
  for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < v; ++i) z += std::exp(row[i] - mx);
  return -(row[target] - mx - std::log(z));
}

}  // namespace

TEST_CASE("vocabulary layout and round trips") {
  const Vocab vocab({"enamine", "chembl"}, {"CC[NH4+]", "C%12CC%12", "c1ccccc1"});
  CHECK(vocab.token(kPad) == "<pad>");
  CHECK(vocab.token(kBos) == "<bos>");
  CHECK(vocab.token(kEos) == "<eos>");
  CHECK(vocab.dataset_id("enamine") == 3);
  CHECK(vocab.dataset_id("chembl") == 4);
  CHECK(vocab.token(3) == dataset_token("enamine"));
  CHECK(vocab.is_dataset(4));
  CHECK_FALSE(vocab.is_smiles(4));
  CHECK(vocab.token(5) == base_smiles_tokens().front());
  const std::size_t base_end = 5 + base_smiles_tokens().size();
  REQUIRE(vocab.size() == base_end + 2);
  CHECK(vocab.token(static_cast<int>(base_end)) == "%12");
  CHECK(vocab.token(static_cast<int>(base_end + 1)) == "[NH4+]");
  CHECK_THROWS_AS(vocab.dataset_id("zinc"), ArgumentError);

  for (const std::string s : {"CC[NH4+]", "C%12CC%12", "c1ccccc1", "CC(=O)Cl", "N#CBr"})
    CHECK(vocab.decode(vocab.encode(s)) == s);
  CHECK_THROWS(vocab.encode("C[Se]"));
  const std::vector<int> with_specials = {kPad, 3, vocab.id_of("C"), vocab.id_of("O"), kEos};
  CHECK(vocab.decode(with_specials) == "CO");

  CHECK(Vocab::from_json(vocab.to_json(), "mem") == vocab);
  const auto path = std::filesystem::temp_directory_path() / "molspace_vocab.json";
  vocab.save(path);
  CHECK(Vocab::load(path) == vocab);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Vocab::from_json("{\"tokens\": 3}", "bad"), FormatError);
}

TEST_CASE("config validation and JSON") {
  MclmConfig c = tiny_config();
  CHECK(config_from_json(config_to_json(c), "mem") == c);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_config();
  c.max_positions = 2;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK_THROWS_AS(config_from_json("{\"layers\": \"x\"}", "bad"), FormatError);
}

TEST_CASE("assemble_input") {
  const MclmConfig cfg = tiny_config();
  const Vocab vocab({"A", "B"});
  ParamStore params = init_params(cfg, vocab.size(), 1);
  randomize(params, 2);
  ad::Tape tape;
  const BoundParams bound(tape, params, false);
  const auto tokens = vocab.encode("CCO");
  const auto x = tape.constant(Tensor({1, 4}, std::vector<double>{0.5, -0.5, 0.5, 0.5}));
  const ad::Var h = assemble_input(bound, cfg, vocab, "B", x, tokens);
  REQUIRE(h.shape() == ad::Shape{5, 8});
  const Tensor& tok = params.value(params.index_of("tok"));
  const Tensor& wp = params.value(params.index_of("wp"));
  const Tensor& bp = params.value(params.index_of("bp"));
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(h.value().at(0, j) == tok.at(static_cast<std::size_t>(vocab.dataset_id("B")), j));
    double proj = bp[j];
    for (std::size_t i = 0; i < 4; ++i) proj += x.value()[i] * wp.at(i, j);
    CHECK(h.value().at(1, j) == doctest::Approx(proj).epsilon(1e-14));
    for (std::size_t t = 0; t < 3; ++t) CHECK(h.value().at(t + 2, j) == tok.at(static_cast<std::size_t>(tokens[t]), j));
  }
  SUBCASE("a zero conditioning vector with zero bias gives a zero row") {
    params.value(params.index_of("bp")).fill(0.0);
    ad::Tape t2;
    const BoundParams b2(t2, params, false);
    const ad::Var h0 = assemble_input(b2, cfg, vocab, "A", t2.constant(Tensor({1, 4})), {});
    REQUIRE(h0.shape() == ad::Shape{2, 8});
    for (std::size_t j = 0; j < 8; ++j) CHECK(h0.value().at(1, j) == 0.0);
  }
  CHECK_THROWS_AS(assemble_input(bound, cfg, vocab, "A", tape.constant(Tensor({1, 3})), tokens), ShapeError);
  CHECK_THROWS_AS(assemble_input(bound, cfg, vocab, "Z", x, tokens), ArgumentError);
  const std::vector<int> bad = {999};
  CHECK_THROWS_AS(assemble_input(bound, cfg, vocab, "A", x, bad), ArgumentError);
}

TEST_CASE("causality of the decoder") {
  const MclmConfig cfg = tiny_config();
  ParamStore params = init_params(cfg, 40, 3);
  randomize(params, 4);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 2 + rng.below(static_cast<std::uint64_t>(cfg.max_positions - 1));
    Tensor h({T, 8});
    for (double& v : h.vec()) v = rng.normal();
    const auto run = [&](const Tensor& input) {
      ad::Tape tape;
      const BoundParams bound(tape, params, false);
      return decoder_logits(bound, cfg, tape.constant(input)).value();
    };
    const Tensor base = run(h);
    const std::size_t t = rng.below(T);
    Tensor moved = h;
    for (std::size_t j = 0; j < 8; ++j) moved.at(t, j) += rng.normal(0.0, 3.0);
    const Tensor after = run(moved);
    double before_t = 0.0, at_or_after = 0.0;
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t c = 0; c < base.cols(); ++c) {
        const double d = std::abs(after.at(r, c) - base.at(r, c));
        (r < t ? before_t : at_or_after) = std::max(r < t ? before_t : at_or_after, d);
      }
    CHECK(before_t <= 1e-12);
    CHECK(at_or_after > 1e-6);
  }
  ad::Tape tape;
  const BoundParams bound(tape, params, false);
  CHECK_THROWS_AS(decoder_logits(bound, cfg, tape.constant(Tensor({17, 8}))), ArgumentError);
}

TEST_CASE("nll_loss scores exactly the SMILES targets") {
  const MclmConfig cfg = tiny_config();
  const Vocab vocab({"A", "B"});
  ParamStore params = init_params(cfg, vocab.size(), 6);
  randomize(params, 7);
  Rng rng(8);
  const std::vector<Example> batch = {example(vocab, "A", "CCO", random_x(rng, 4)),
                                      example(vocab, "B", "c1ccccc1", random_x(rng, 4)),
                                      {"A", random_x(rng, 4), {kEos}}};

  SUBCASE("direct evaluation from decoder logits") {
    double total = 0.0;
    std::size_t count = 0;
    for (const Example& ex : batch) {
      ad::Tape tape;
      const BoundParams bound(tape, params, false);
      const std::vector<int> inputs(ex.tokens.begin(), ex.tokens.end() - 1);
      const auto h = assemble_input(bound, cfg, vocab, ex.dataset, tape.constant(Tensor({1, 4}, ex.x)), inputs);
      const Tensor logits = decoder_logits(bound, cfg, h).value();
      REQUIRE(logits.rows() == ex.tokens.size() + 1);
      // Row 0 (dataset token) is skipped; row r predicts token r-1.
      for (std::size_t r = 1; r < logits.rows(); ++r)
        total += row_nll(logits.data().data() + r * logits.cols(), vocab.size(), ex.tokens[r - 1]);
      count += ex.tokens.size();
    }
    CHECK(count == 4 + 9 + 1);
    CHECK(nll_loss(params, cfg, vocab, batch) == doctest::Approx(total / static_cast<double>(count)).epsilon(1e-12));
  }
  SUBCASE("uniform head gives ln V") {
    params.value(params.index_of("head.w")).fill(0.0);
    params.value(params.index_of("head.b")).fill(0.0);
    CHECK(std::abs(nll_loss(params, cfg, vocab, batch) - std::log(static_cast<double>(vocab.size()))) < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(nll_loss(params, cfg, vocab, {}), ArgumentError);
    CHECK_THROWS_AS(nll_loss(params, cfg, vocab, {{"A", random_x(rng, 4), {vocab.id_of("C")}}}), ArgumentError);
  }
}

TEST_CASE("nll gradients") {
  const MclmConfig cfg = tiny_config();
  const Vocab vocab({"A", "B"});
  ParamStore params = init_params(cfg, vocab.size(), 9);
  randomize(params, 10);
  Rng rng(11);
  const std::vector<Example> batch = {example(vocab, "A", "CO", random_x(rng, 4)),
                                      example(vocab, "B", "c1ccoc1", random_x(rng, 4))};
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
  const ad::ScalarFn fn = [&](ad::Tape&, const std::vector<ad::Var>& vars) {
    return nll_loss_var(BoundParams(params, vars), cfg, vocab, batch);
  };
  const auto result = ad::check_gradients(fn, inputs);
  MESSAGE("rel err " << result.max_rel_error << " evals " << result.evaluations);
  CHECK(result.max_rel_error < 1e-4);
  CHECK(params.contains("wp"));
}

TEST_CASE("generation") {
  const MclmConfig cfg = tiny_config();
  const Vocab vocab({"A", "B"});
  ParamStore params = init_params(cfg, vocab.size(), 12);
  randomize(params, 13, 1.0);
  Rng rng(14);
  GenRequest req;
  req.x = random_x(rng, 4);
  req.dataset = "A";
  req.max_len = 10;

  SUBCASE("temperature 0 follows the argmax of every step") {
    req.temperature = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      req.x = random_x(rng, 4);
      const GenResult g = generate(params, cfg, vocab, req, true);
      REQUIRE(g.step_logits.size() == g.trace.size());
      std::vector<int> prefix;
      for (std::size_t s = 0; s < g.trace.size(); ++s) {
        // Re-run the decoder on the prefix and take the masked argmax by hand.
        ad::Tape tape;
        const BoundParams bound(tape, params, false);
        const auto h = assemble_input(bound, cfg, vocab, req.dataset, tape.constant(Tensor({1, 4}, req.x)), prefix);
        const Tensor logits = decoder_logits(bound, cfg, h).value();
        int best = -1;
        for (int id = 0; id < static_cast<int>(vocab.size()); ++id) {
          if (id == kPad || id == kBos || vocab.is_dataset(id)) continue;
          if (best < 0 || logits.at(logits.rows() - 1, static_cast<std::size_t>(id)) >
                              logits.at(logits.rows() - 1, static_cast<std::size_t>(best)))
            best = id;
        }
        CHECK(g.trace[s] == best);
        prefix.push_back(g.trace[s]);
      }
      CHECK(generate(params, cfg, vocab, req).trace == g.trace);
    }
  }
  SUBCASE("specials and dataset tokens are never sampled") {
    req.temperature = 5.0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      req.seed = seed;
      const GenResult g = generate(params, cfg, vocab, req);
      CHECK(g.trace.size() <= 10);
      for (int id : g.trace) {
        CHECK(id != kPad);
        CHECK(id != kBos);
        CHECK_FALSE(vocab.is_dataset(id));
      }
    }
  }
  SUBCASE("same seed, same sample") {
    req.seed = 77;
    CHECK(generate(params, cfg, vocab, req).trace == generate(params, cfg, vocab, req).trace);
  }
  SUBCASE("an overwhelming EOS bias ends immediately") {
    params.value(params.index_of("head.b"))[kEos] = 1e6;
    const GenResult g = generate(params, cfg, vocab, req);
    CHECK(g.smiles.empty());
    CHECK(g.trace == std::vector<int>{kEos});
  }
  SUBCASE("request errors") {
    req.temperature = -1;
    CHECK_THROWS_AS(generate(params, cfg, vocab, req), ArgumentError);
    req.temperature = 1;
    req.x.pop_back();
    CHECK_THROWS_AS(generate(params, cfg, vocab, req), ShapeError);
  }
}

TEST_CASE("training") {
  const MclmConfig cfg = tiny_config();
  const Vocab vocab({"A"});
  Rng rng(15);
  SUBCASE("a corpus of empty molecules is learned to near-zero loss") {
    std::vector<Example> ex;
    for (int i = 0; i < 8; ++i) ex.push_back({"A", random_x(rng, 4), {kEos}});
    TrainConfig tc;
    tc.steps = 150;
    tc.batch = 4;
    tc.lr = 1e-2;
    const TrainResult r = train_on_examples(ex, vocab, cfg, tc);
    CHECK(r.losses.front() > 1.0);
    CHECK(nll_loss(r.params, cfg, vocab, ex) < 0.01);
    GenRequest req;
    req.x = ex[0].x;
    req.dataset = "A";
    CHECK(generate(r.params, cfg, vocab, req).smiles.empty());
  }
  SUBCASE("train_mclm freezes the encoder and is deterministic") {
    set::SetConfig ecfg;
    ecfg.layers = 1;
    ecfg.heads = 2;
    ecfg.dim = 8;
    ecfg.channels = 2;
    ecfg.proj_dim = 4;
    const ParamStore enc = set::init_params(ecfg, 16);
    const auto enc_bytes = encode_checkpoint(enc);
    auto records = synth::steering_corpus(4, 17, "A", "B");
    records[1].smiles = "C[Se]C";  // outside the vocabulary
    const Vocab v2({"A", "B"});
    TrainConfig tc;
    tc.steps = 5;
    tc.batch = 3;
    tc.seed = 18;
    MclmConfig long_cfg = cfg;
    long_cfg.max_positions = 40;
    const TrainResult a = train_mclm(records, enc, ecfg, "", v2, long_cfg, tc);
    const TrainResult b = train_mclm(records, enc, ecfg, "", v2, long_cfg, tc);
    CHECK(a.skipped == 1);
    CHECK(a.losses.size() == 5);
    CHECK(a.losses == b.losses);
    CHECK(encode_checkpoint(a.params) == encode_checkpoint(b.params));
    CHECK(encode_checkpoint(enc) == enc_bytes);
  }
  SUBCASE("bad schedules") {
    TrainConfig tc;
    CHECK_THROWS_AS(train_on_examples({}, vocab, cfg, tc), ArgumentError);
    tc.batch = 0;
    CHECK_THROWS_AS(train_on_examples({{"A", random_x(rng, 4), {kEos}}}, vocab, cfg, tc), ArgumentError);
  }
}

TEST_CASE("generation JSONL") {
  const std::string out = format_generation_jsonl({{"g0", "CCO", "[ds:A]", 7, true}, {"g1", "C(", "[ds:B]", 8, false}});
  CHECK(out ==
        "{\"dataset_token\":\"[ds:A]\",\"id\":\"g0\",\"seed\":7,\"smiles\":\"CCO\",\"valid\":true}\n"
        "{\"dataset_token\":\"[ds:B]\",\"id\":\"g1\",\"seed\":8,\"smiles\":\"C(\",\"valid\":false}\n");
}
