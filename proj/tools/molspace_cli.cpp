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
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/chem.hpp"
#include "molspace/contrastive.hpp"
#include "molspace/error.hpp"
#include "molspace/gradcheck.hpp"
#include "molspace/mclm.hpp"
#include "molspace/metrics.hpp"
#include "molspace/params.hpp"
#include "molspace/pipeline.hpp"
#include "molspace/retrieval.hpp"
#include "molspace/set_encoder.hpp"
#include "molspace/synth.hpp"

using namespace molspace;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string precision = "f64";
};

struct Run {
  std::string command;
  std::vector<std::string> argv;
  Common common;
  json config = json::object();  // file contents
  json effective = json::object();
  std::uint64_t seed = 0;

  json section(const std::string& key) const {
    if (!config.contains(key)) return json::object();
    if (!config[key].is_object()) throw FormatError(common.config_path, 0, "section '" + key + "' must be an object");
    return config[key];
  }

  /// Flag wins over config; stochastic commands refuse to run without one.
  void resolve_seed(bool required) {
    if (common.seed) {
      seed = *common.seed;
    } else if (config.contains("seed")) {
      if (!config["seed"].is_number_unsigned()) throw FormatError(common.config_path, 0, "seed must be an unsigned integer");
      seed = config["seed"].get<std::uint64_t>();
    } else if (required) {
      throw ArgumentError(command + " is stochastic: pass --seed or set \"seed\" in the config");
    }
    effective["seed"] = seed;
  }

  std::vector<double> cast(std::vector<double> v) const {
    if (common.precision == "f32")
      for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    return v;
  }

  void manifest(const fs::path& output, const std::vector<std::string>& outputs) const {
    pipeline::Manifest m;
    m.command = command;
    m.argv = argv;
    json cfg = effective;
    cfg["threads"] = common.threads;
    cfg["precision"] = common.precision;
    m.config_json = cfg.dump();
    m.seed = seed;
    m.outputs = outputs;
    pipeline::write_manifest(m, output);
  }
};

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError("config", 0, std::string("field '") + key + "': " + e.what());
  }
}

set::SetConfig encoder_config(const json& j) {
  return set::config_from_json(j.dump(), "config.encoder");
}

json encoder_json(const set::SetConfig& c) { return json::parse(set::config_to_json(c)); }

mclm::MclmConfig decoder_config(const json& j, int cond_dim) {
  json patched = j;
  if (!patched.contains("cond_dim")) patched["cond_dim"] = cond_dim;
  auto c = mclm::config_from_json(patched.dump(), "config.mclm");
  if (c.cond_dim != cond_dim)
    throw ShapeError("mclm.cond_dim " + std::to_string(c.cond_dim) + " != encoder projection width " +
                     std::to_string(cond_dim));
  return c;
}

std::string load_text(const fs::path& p) {
  const auto bytes = io::read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

void require_file(const std::string& flag, const fs::path& p) {
  if (p.empty()) throw ArgumentError(flag + " is required");
  if (!fs::exists(p)) throw IoError(flag + ": no such file " + p.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Encoder checkpoint plus its sidecar config; `tower` picks a contrastive prefix.
struct Encoder {
  ParamStore params;
  set::SetConfig config;
  std::string prefix;
};

Encoder load_encoder(const fs::path& ckpt, const std::string& tower) {
  require_file("--encoder", ckpt);
  Encoder e;
  e.params = load_checkpoint(ckpt);
  e.config = set::load_config(set::config_sidecar(ckpt));
  if (e.params.contains("ligand.embed")) {
    if (tower != "ligand" && tower != "pocket") throw ArgumentError("--tower must be ligand or pocket");
    e.prefix = tower + ".";
  }
  return e;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind;
  fs::path out;
  std::size_t pairs = 512;
  std::size_t per_label = 200;
};

void cmd_synth(Run& run, const SynthArgs& a) {
  run.resolve_seed(true);
  const json s = run.section("synth");
  if (a.out.empty()) throw ArgumentError("--out is required");
  if (a.kind == "planted") {
    synth::PlantedConfig pc;
    read(s, "clusters", pc.clusters);
    read(s, "pocket_atoms", pc.pocket_atoms);
    read(s, "ligand_min_atoms", pc.ligand_min_atoms);
    read(s, "ligand_max_atoms", pc.ligand_max_atoms);
    read(s, "ligand_templates", pc.ligand_templates);
    read(s, "jitter", pc.jitter);
    read(s, "conformers", pc.conformers);
    std::size_t pairs = a.pairs;
    read(s, "pairs", pairs);
    pc.seed = run.seed;
    const synth::PlantedClusters gen(pc);
    Rng rng(run.seed ^ 0x9e3779b97f4a7c15ULL);
    geom::save_pairs(gen.corpus(pairs, rng), a.out);
    run.effective["synth"] = {{"kind", "planted"},        {"clusters", pc.clusters},
                              {"pocket_atoms", pc.pocket_atoms}, {"ligand_min_atoms", pc.ligand_min_atoms},
                              {"ligand_max_atoms", pc.ligand_max_atoms}, {"ligand_templates", pc.ligand_templates},
                              {"jitter", pc.jitter},      {"conformers", pc.conformers},
                              {"pairs", pairs}};
  } else if (a.kind == "steering") {
    std::size_t per_label = a.per_label;
    std::string label_a = "A", label_b = "B";
    read(s, "per_label", per_label);
    read(s, "label_a", label_a);
    read(s, "label_b", label_b);
    geom::save_conformers(synth::steering_corpus(per_label, run.seed, label_a, label_b), a.out);
    run.effective["synth"] = {{"kind", "steering"}, {"per_label", per_label}, {"label_a", label_a}, {"label_b", label_b}};
  } else {
    throw ArgumentError("--kind must be planted or steering");
  }
  run.manifest(a.out, {a.out.string()});
  std::cout << "wrote " << a.out.string() << "\n";
}

struct PretrainArgs {
  fs::path conformers, out;
  int steps = -1;
};

void cmd_pretrain(Run& run, const PretrainArgs& a) {
  run.resolve_seed(true);
  require_file("--conformers", a.conformers);
  if (a.out.empty()) throw ArgumentError("--out is required");
  const auto cfg = encoder_config(run.section("encoder"));
  set::PretrainConfig pc;
  const json p = run.section("pretrain");
  read(p, "steps", pc.steps);
  read(p, "batch", pc.batch);
  read(p, "lr", pc.lr);
  if (a.steps >= 0) pc.steps = a.steps;
  pc.seed = run.seed;
  std::vector<geom::AtomicPointCloud> corpus;
  for (auto& r : geom::load_conformers(a.conformers)) corpus.push_back(std::move(r.cloud));
  const auto result = set::pretrain_encoder(corpus, cfg, pc, [](int step, double loss) {
    if (step % 50 == 0) std::cerr << "step " << step << " mlm " << loss << "\n";
  });
  save_checkpoint(result.params, a.out);
  set::save_config(cfg, set::config_sidecar(a.out));
  std::string log = "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) log += std::to_string(i) + "," + fmt(result.losses[i]) + "\n";
  const fs::path log_path = a.out.string() + ".loss.csv";
  io::write_text(log_path, log);
  run.effective["encoder"] = encoder_json(cfg);
  run.effective["pretrain"] = {{"steps", pc.steps}, {"batch", pc.batch}, {"lr", pc.lr}};
  run.effective["inputs"] = {{"conformers", a.conformers.string()}};
  const std::vector<std::string> outs = {a.out.string(), set::config_sidecar(a.out).string(), log_path.string()};
  for (const auto& o : outs) run.manifest(o, outs);
  std::cout << "final mlm loss " << (result.losses.empty() ? NAN : result.losses.back()) << "\n";
}

struct ContrastiveArgs {
  fs::path pairs, out, ligand_init, pocket_init;
  int steps = -1;
};

void cmd_train_contrastive(Run& run, const ContrastiveArgs& a) {
  run.resolve_seed(true);
  require_file("--pairs", a.pairs);
  if (a.out.empty()) throw ArgumentError("--out is required");
  contrastive::ContrastiveConfig cc;
  const json c = run.section("contrastive");
  read(c, "steps", cc.steps);
  read(c, "batch", cc.batch);
  read(c, "lr", cc.lr);
  read(c, "initial_tau", cc.initial_tau);
  if (a.steps >= 0) cc.steps = a.steps;
  cc.seed = run.seed;
  set::SetConfig cfg = encoder_config(run.section("encoder"));
  ParamStore lig, poc;
  if (!a.ligand_init.empty()) {
    require_file("--ligand-init", a.ligand_init);
    lig = load_checkpoint(a.ligand_init);
    cfg = set::load_config(set::config_sidecar(a.ligand_init));
  } else {
    lig = set::init_params(cfg, run.seed + 1);
  }
  if (!a.pocket_init.empty()) {
    require_file("--pocket-init", a.pocket_init);
    poc = load_checkpoint(a.pocket_init);
    if (!(set::load_config(set::config_sidecar(a.pocket_init)) == cfg))
      throw ArgumentError("ligand and pocket encoders must share one configuration");
  } else {
    poc = set::init_params(cfg, run.seed + 2);
  }
  const auto pairs = geom::load_pairs(a.pairs);
  const auto result = contrastive::train_contrastive(pairs, lig, cfg, poc, cfg, cc, [](const auto& row) {
    if (row.step % 50 == 0) std::cerr << "step " << row.step << " loss " << row.loss << " tau " << row.tau << "\n";
  });
  save_checkpoint(result.params, a.out);
  set::save_config(cfg, set::config_sidecar(a.out));
  const fs::path hist = a.out.string() + ".history.csv";
  contrastive::save_history(result.history, hist);
  run.effective["encoder"] = encoder_json(cfg);
  run.effective["contrastive"] = {{"steps", cc.steps}, {"batch", cc.batch}, {"lr", cc.lr}, {"initial_tau", cc.initial_tau}};
  run.effective["inputs"] = {{"pairs", a.pairs.string()}, {"ligand_init", a.ligand_init.string()},
                             {"pocket_init", a.pocket_init.string()}};
  const std::vector<std::string> outs = {a.out.string(), set::config_sidecar(a.out).string(), hist.string()};
  for (const auto& o : outs) run.manifest(o, outs);
  std::cout << "final tau " << result.tau() << "\n";
}

struct MclmArgs {
  fs::path conformers, encoder, out;
  int steps = -1;
};

fs::path vocab_path(const fs::path& ckpt) { return ckpt.string() + ".vocab.json"; }
fs::path decoder_sidecar(const fs::path& ckpt) { return ckpt.string() + ".mclm.json"; }

void cmd_train_mclm(Run& run, const MclmArgs& a) {
  run.resolve_seed(true);
  require_file("--conformers", a.conformers);
  if (a.out.empty()) throw ArgumentError("--out is required");
  const Encoder enc = load_encoder(a.encoder, "ligand");
  const auto cfg = decoder_config(run.section("mclm"), enc.config.proj_dim);
  mclm::TrainConfig tc;
  const json t = run.section("mclm_train");
  read(t, "steps", tc.steps);
  read(t, "batch", tc.batch);
  read(t, "lr", tc.lr);
  if (a.steps >= 0) tc.steps = a.steps;
  tc.seed = run.seed;

  std::vector<std::string> labels;
  read(run.config, "datasets", labels);
  const std::set<std::string> declared(labels.begin(), labels.end());
  const auto records = geom::load_conformers(a.conformers, declared);
  if (labels.empty())
    for (const auto& r : records)
      if (std::find(labels.begin(), labels.end(), r.dataset) == labels.end()) labels.push_back(r.dataset);
  std::vector<std::string> smiles;
  for (const auto& r : records) smiles.push_back(r.smiles);
  const mclm::Vocab vocab(labels, smiles);
  const auto result = mclm::train_mclm(records, enc.params, enc.config, enc.prefix, vocab, cfg, tc, [](int s, double l) {
    if (s % 50 == 0) std::cerr << "step " << s << " nll " << l << "\n";
  });
  save_checkpoint(result.params, a.out);
  io::write_text(decoder_sidecar(a.out), mclm::config_to_json(cfg));
  vocab.save(vocab_path(a.out));
  const fs::path log_path = a.out.string() + ".loss.csv";
  std::string log = "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) log += std::to_string(i) + "," + fmt(result.losses[i]) + "\n";
  io::write_text(log_path, log);
  run.effective["mclm"] = json::parse(mclm::config_to_json(cfg));
  run.effective["mclm_train"] = {{"steps", tc.steps}, {"batch", tc.batch}, {"lr", tc.lr}};
  run.effective["datasets"] = labels;
  run.effective["inputs"] = {{"conformers", a.conformers.string()}, {"encoder", a.encoder.string()}};
  const std::vector<std::string> outs = {a.out.string(), decoder_sidecar(a.out).string(), vocab_path(a.out).string(),
                                         log_path.string()};
  for (const auto& o : outs) run.manifest(o, outs);
  std::cout << "skipped " << result.skipped << " records; final nll "
            << (result.losses.empty() ? NAN : result.losses.back()) << "\n";
}

struct EmbedArgs {
  fs::path encoder, conformers, pairs, store;
  std::string tower = "ligand";
  std::size_t shard_size = 65536;
};

void cmd_embed(Run& run, const EmbedArgs& a) {
  run.resolve_seed(false);
  if (a.store.empty()) throw ArgumentError("--store is required");
  const Encoder enc = load_encoder(a.encoder, a.tower);
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> ids;
  const auto add = [&](const std::string& id, const geom::AtomicPointCloud& cloud) {
    ids.push_back(id);
    vectors.push_back(run.cast(set::encode(enc.params, enc.config, cloud, enc.prefix).x));
  };
  if (!a.conformers.empty()) {
    require_file("--conformers", a.conformers);
    for (const auto& r : geom::load_conformers(a.conformers)) add(r.id, r.cloud);
  } else {
    require_file("--pairs", a.pairs);
    std::set<std::string> seen;
    for (const auto& p : geom::load_pairs(a.pairs)) {
      if (a.tower == "pocket") {
        if (seen.insert(p.pocket_id).second) add(p.pocket_id, p.pocket);
      } else if (seen.insert(p.ligand_id).second) {
        for (std::size_t k = 0; k < p.ligand_conformers.size(); ++k)
          add(p.ligand_conformers.size() == 1 ? p.ligand_id : p.ligand_id + "#" + std::to_string(k),
              p.ligand_conformers[k]);
      }
    }
  }
  fs::remove_all(a.store);
  const auto store = retrieval::EmbeddingStore::build(vectors, ids, a.shard_size, a.store);
  run.effective["embed"] = {{"tower", a.tower}, {"shard_size", a.shard_size}};
  run.effective["inputs"] = {{"encoder", a.encoder.string()}, {"conformers", a.conformers.string()},
                             {"pairs", a.pairs.string()}};
  std::vector<std::string> outs;
  for (const auto& s : store.shards()) {
    outs.push_back(s.path().string());
    outs.push_back(retrieval::ids_path(s.path()).string());
  }
  run.manifest(a.store, outs);
  std::cout << "stored " << store.size() << " vectors of width " << store.dim() << " in " << store.shards().size()
            << " shards\n";
}

struct SearchArgs {
  fs::path store, encoder, query, out;
  std::string tower = "pocket";
  std::size_t k = 10;
};

void cmd_search(Run& run, const SearchArgs& a) {
  run.resolve_seed(false);
  require_file("--query", a.query);
  if (a.out.empty()) throw ArgumentError("--out is required");
  const auto store = retrieval::EmbeddingStore::open(a.store);
  const Encoder enc = load_encoder(a.encoder, a.tower);
  std::string out = "query,rank,id,score\n";
  for (const auto& q : geom::load_conformers(a.query)) {
    const auto x = run.cast(set::encode(enc.params, enc.config, q.cloud, enc.prefix).x);
    const auto hits = retrieval::topk_search(store, x, a.k, run.common.threads);
    for (std::size_t r = 0; r < hits.size(); ++r)
      out += q.id + "," + std::to_string(r + 1) + "," + hits[r].id + "," + fmt(hits[r].score) + "\n";
  }
  io::write_text(a.out, out);
  run.effective["search"] = {{"tower", a.tower}, {"k", a.k}};
  run.effective["inputs"] = {{"store", a.store.string()}, {"encoder", a.encoder.string()}, {"query", a.query.string()}};
  run.manifest(a.out, {a.out.string()});
}

struct ScreenArgs {
  fs::path input, out;
  double alpha = metrics::kDefaultBedrocAlpha;
  std::string ties = "half";
};

void cmd_screen(Run& run, const ScreenArgs& a) {
  run.resolve_seed(false);
  require_file("--input", a.input);
  if (a.out.empty()) throw ArgumentError("--out is required");
  double alpha = a.alpha;
  read(run.section("screen"), "alpha", alpha);
  if (a.ties != "half" && a.ties != "id") throw ArgumentError("--ties must be half or id");
  const auto ties = a.ties == "half" ? metrics::AurocTies::kHalf : metrics::AurocTies::kById;
  std::vector<metrics::ScreenReport> reports;
  for (const auto& [target, items] : metrics::load_screen_csv(a.input))
    reports.push_back(metrics::evaluate_screen(target, items, alpha, ties));
  io::write_text(a.out, metrics::format_report_csv(reports));
  run.effective["screen"] = {{"alpha", alpha}, {"ties", a.ties}};
  run.effective["inputs"] = {{"input", a.input.string()}};
  run.manifest(a.out, {a.out.string()});
}

struct GenerateArgs {
  fs::path mclm, encoder, condition, out;
  std::string tower = "ligand";
  std::string dataset;
  double temperature = 1.0;
  int max_len = 64;
  int samples = 1;
};

void cmd_generate(Run& run, const GenerateArgs& a) {
  run.resolve_seed(true);
  require_file("--mclm", a.mclm);
  require_file("--condition", a.condition);
  if (a.out.empty()) throw ArgumentError("--out is required");
  if (a.samples < 1) throw ArgumentError("--samples must be >= 1");
  const Encoder enc = load_encoder(a.encoder, a.tower);
  const ParamStore params = load_checkpoint(a.mclm);
  const auto cfg = mclm::config_from_json(load_text(decoder_sidecar(a.mclm)), decoder_sidecar(a.mclm).string());
  const auto vocab = mclm::Vocab::load(vocab_path(a.mclm));
  const std::string dataset = a.dataset.empty() ? vocab.datasets().front() : a.dataset;
  std::vector<mclm::GenerationRecord> records;
  std::uint64_t index = 0;
  for (const auto& c : geom::load_conformers(a.condition)) {
    const auto x = mclm::normalize_condition(run.cast(set::encode(enc.params, enc.config, c.cloud, enc.prefix).x));
    for (int k = 0; k < a.samples; ++k, ++index) {
      mclm::GenRequest req;
      req.x = x;
      req.dataset = dataset;
      req.temperature = a.temperature;
      req.max_len = a.max_len;
      req.seed = run.seed * 1000003ULL + index;
      mclm::GenerationRecord rec;
      rec.id = c.id + ":" + std::to_string(k);
      rec.smiles = mclm::generate(params, cfg, vocab, req).smiles;
      rec.dataset_token = mclm::dataset_token(dataset);
      rec.seed = req.seed;
      try {
        chem::parse_smiles(rec.smiles);
        rec.valid = true;
      } catch (const ParseError&) {
      }
      records.push_back(std::move(rec));
    }
  }
  io::write_text(a.out, mclm::format_generation_jsonl(records));
  run.effective["generate"] = {{"tower", a.tower},     {"dataset", dataset}, {"temperature", a.temperature},
                               {"max_len", a.max_len}, {"samples", a.samples}};
  run.effective["inputs"] = {{"mclm", a.mclm.string()}, {"encoder", a.encoder.string()}, {"condition", a.condition.string()}};
  run.manifest(a.out, {a.out.string()});
  std::size_t valid = 0;
  for (const auto& r : records) valid += r.valid;
  std::cout << records.size() << " samples, " << valid << " valid\n";
}

struct SteerArgs {
  fs::path out;
  int steps = -1;
};

void cmd_steer(Run& run, const SteerArgs& a) {
  run.resolve_seed(true);
  if (a.out.empty()) throw ArgumentError("--out is required");
  pipeline::SteeringConfig sc = pipeline::default_steering_config();
  const json s = run.section("steering");
  read(s, "per_label", sc.per_label);
  read(s, "label_a", sc.label_a);
  read(s, "label_b", sc.label_b);
  read(s, "conditions", sc.conditions);
  read(s, "temperature", sc.temperature);
  read(s, "max_len", sc.max_len);
  read(s, "steps", sc.train.steps);
  read(s, "batch", sc.train.batch);
  read(s, "lr", sc.train.lr);
  if (s.contains("encoder")) sc.encoder = encoder_config(s["encoder"]);
  if (s.contains("mclm")) sc.decoder = decoder_config(s["mclm"], sc.encoder.proj_dim);
  if (a.steps >= 0) sc.train.steps = a.steps;
  sc.seed = run.seed;
  sc.train.seed = run.seed + 2;
  const auto report = pipeline::run_steering_ablation(sc, [](int step, double loss) {
    if (step % 100 == 0) std::cerr << "step " << step << " nll " << loss << "\n";
  });
  const fs::path summary = a.out.string() + ".summary.csv", samples = a.out.string() + ".samples.csv";
  io::write_text(summary, pipeline::steering_summary_csv(report));
  io::write_text(samples, pipeline::steering_samples_csv(report));
  run.effective["steering"] = {{"per_label", sc.per_label},     {"label_a", sc.label_a},
                               {"label_b", sc.label_b},         {"conditions", sc.conditions},
                               {"temperature", sc.temperature}, {"max_len", sc.max_len},
                               {"steps", sc.train.steps},       {"batch", sc.train.batch},
                               {"lr", sc.train.lr},             {"encoder", encoder_json(sc.encoder)},
                               {"mclm", json::parse(mclm::config_to_json(sc.decoder))}};
  const std::vector<std::string> outs = {summary.string(), samples.string()};
  for (const auto& o : outs) run.manifest(o, outs);
  std::cout << pipeline::steering_summary_csv(report);
  std::cout << "nn mean gap " << report.tokens[1].nn.mean - report.tokens[0].nn.mean << "\n";
}

struct GradcheckArgs {
  fs::path out;
  double tolerance = 1e-4;
};

void cmd_gradcheck(Run& run, const GradcheckArgs& a) {
  run.resolve_seed(true);
  if (a.out.empty()) throw ArgumentError("--out is required");
  Rng rng(run.seed);
  struct Row {
    std::string target;
    ad::GradCheckResult result;
  };
  std::vector<Row> rows;

  set::SetConfig ecfg;
  ecfg.layers = 1;
  ecfg.heads = 2;
  ecfg.dim = 8;
  ecfg.channels = 2;
  ecfg.proj_dim = 6;
  {
    const ParamStore params = set::init_params(ecfg, rng.next_u64());
    std::vector<int> z;
    std::vector<geom::Vec3> p;
    for (int i = 0; i < 5; ++i) {
      z.push_back(6 + static_cast<int>(rng.below(3)));
      p.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    }
    const auto sample = set::mlm_corrupt(geom::AtomicPointCloud(z, p), rng.next_u64());
    std::vector<ad::Tensor> inputs;
    for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
    rows.push_back({"set.mlm_loss", ad::check_gradients(
                                        [&](ad::Tape&, const std::vector<ad::Var>& v) {
                                          return set::mlm_loss_var(BoundParams(params, v), ecfg, sample);
                                        },
                                        inputs)});
  }
  {
    const std::vector<std::string> pockets = {"P0", "P0", "P1", "P2"};
    const std::vector<double> affinity = {5.0, 6.0, 7.0, 4.0};
    const auto targets = contrastive::pocket_positives(pockets, affinity);
    std::vector<ad::Tensor> inputs = {random_normal({4, 5}, 1.0, rng), random_normal({4, 5}, 1.0, rng),
                                      ad::Tensor::scalar(std::log(0.5))};
    rows.push_back({"contrastive.cf_infonce", ad::check_gradients(
                                                  [&](ad::Tape&, const std::vector<ad::Var>& v) {
                                                    return contrastive::cf_infonce_vars(v[0], v[1], v[2],
                                                                                        targets)
                                                        .total;
                                                  },
                                                  inputs)});
  }
  {
    mclm::MclmConfig mc;
    mc.layers = 1;
    mc.heads = 2;
    mc.hidden = 8;
    mc.max_positions = 12;
    mc.cond_dim = 4;
    const mclm::Vocab vocab({"A", "B"});
    ParamStore params = mclm::init_params(mc, vocab.size(), rng.next_u64());
    for (std::size_t i = 0; i < params.size(); ++i)
      params.value(i) = random_normal(params.value(i).shape(), 0.3, rng);
    auto ids = vocab.encode("c1ccoc1");
    ids.push_back(mclm::kEos);
    const std::vector<mclm::Example> batch = {{"B", {0.5, 0.5, -0.5, 0.5}, ids}};
    std::vector<ad::Tensor> inputs;
    for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
    rows.push_back({"mclm.nll_loss", ad::check_gradients(
                                         [&](ad::Tape&, const std::vector<ad::Var>& v) {
                                           return mclm::nll_loss_var(BoundParams(params, v), mc, vocab, batch);
                                         },
                                         inputs)});
  }
  std::string csv = "target,max_rel_error,evaluations,pass\n";
  bool ok = true;
  for (const auto& r : rows) {
    const bool pass = r.result.max_rel_error < a.tolerance;
    ok &= pass;
    csv += r.target + "," + fmt(r.result.max_rel_error) + "," + std::to_string(r.result.evaluations) + "," +
           (pass ? "1" : "0") + "\n";
  }
  io::write_text(a.out, csv);
  run.effective["gradcheck"] = {{"tolerance", a.tolerance}};
  run.manifest(a.out, {a.out.string()});
  std::cout << csv;
  if (!ok) throw NumericError("gradient check exceeded tolerance " + fmt(a.tolerance));
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON run configuration");
  sub->add_option("--seed", c.seed, "RNG seed");
  sub->add_option("--threads", c.threads, "worker threads for scans")->check(CLI::Range(1u, 1024u));
  sub->add_option("--precision", c.precision, "numeric precision of embeddings")->check(CLI::IsMember({"f32", "f64"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molspace: 3D molecular encoders, contrastive retrieval and conditioned SMILES generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::kVersion);
  Common common;

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a planted-cluster pair corpus or the steering corpus");
  synth_cmd->add_option("--kind", synth_args.kind, "planted | steering")->required();
  synth_cmd->add_option("--out", synth_args.out, "output JSONL")->required();
  synth_cmd->add_option("--pairs", synth_args.pairs, "pairs (planted)");
  synth_cmd->add_option("--per-label", synth_args.per_label, "molecules per label (steering)");

  PretrainArgs pretrain_args;
  auto* pretrain_cmd = app.add_subcommand("pretrain-encoder", "masked-atom pretraining");
  pretrain_cmd->add_option("--conformers", pretrain_args.conformers)->required();
  pretrain_cmd->add_option("--out", pretrain_args.out, "checkpoint")->required();
  pretrain_cmd->add_option("--steps", pretrain_args.steps);

  ContrastiveArgs contrastive_args;
  auto* contrastive_cmd = app.add_subcommand("train-contrastive", "ligand/pocket CF-InfoNCE training");
  contrastive_cmd->add_option("--pairs", contrastive_args.pairs)->required();
  contrastive_cmd->add_option("--out", contrastive_args.out, "joint checkpoint")->required();
  contrastive_cmd->add_option("--ligand-init", contrastive_args.ligand_init);
  contrastive_cmd->add_option("--pocket-init", contrastive_args.pocket_init);
  contrastive_cmd->add_option("--steps", contrastive_args.steps);

  MclmArgs mclm_args;
  auto* mclm_cmd = app.add_subcommand("train-mclm", "train the conditioned SMILES decoder");
  mclm_cmd->add_option("--conformers", mclm_args.conformers)->required();
  mclm_cmd->add_option("--encoder", mclm_args.encoder)->required();
  mclm_cmd->add_option("--out", mclm_args.out, "decoder checkpoint")->required();
  mclm_cmd->add_option("--steps", mclm_args.steps);

  EmbedArgs embed_args;
  auto* embed_cmd = app.add_subcommand("embed", "encode molecules or pockets into a sharded store");
  embed_cmd->add_option("--encoder", embed_args.encoder)->required();
  auto* embed_src = embed_cmd->add_option("--conformers", embed_args.conformers);
  embed_cmd->add_option("--pairs", embed_args.pairs)->excludes(embed_src);
  embed_cmd->add_option("--tower", embed_args.tower)->check(CLI::IsMember({"ligand", "pocket"}));
  embed_cmd->add_option("--store", embed_args.store, "output directory")->required();
  embed_cmd->add_option("--shard-size", embed_args.shard_size)->check(CLI::PositiveNumber);

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "exact top-k search of a store");
  search_cmd->add_option("--store", search_args.store)->required();
  search_cmd->add_option("--encoder", search_args.encoder)->required();
  search_cmd->add_option("--query", search_args.query, "conformer JSONL of queries")->required();
  search_cmd->add_option("--tower", search_args.tower)->check(CLI::IsMember({"ligand", "pocket"}));
  search_cmd->add_option("--k", search_args.k)->check(CLI::PositiveNumber);
  search_cmd->add_option("--out", search_args.out)->required();

  ScreenArgs screen_args;
  auto* screen_cmd = app.add_subcommand("screen", "AUROC / BEDROC / EF report for ranked lists");
  screen_cmd->add_option("--input", screen_args.input, "CSV target,id,score,label")->required();
  screen_cmd->add_option("--out", screen_args.out)->required();
  screen_cmd->add_option("--alpha", screen_args.alpha, "BEDROC alpha");
  screen_cmd->add_option("--ties", screen_args.ties, "AUROC ties: half | id");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "sample SMILES conditioned on structures");
  gen_cmd->add_option("--mclm", gen_args.mclm)->required();
  gen_cmd->add_option("--encoder", gen_args.encoder)->required();
  gen_cmd->add_option("--condition", gen_args.condition, "conformer JSONL")->required();
  gen_cmd->add_option("--tower", gen_args.tower)->check(CLI::IsMember({"ligand", "pocket"}));
  gen_cmd->add_option("--dataset", gen_args.dataset, "dataset label");
  gen_cmd->add_option("--temperature", gen_args.temperature)->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--max-len", gen_args.max_len)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--samples", gen_args.samples, "samples per condition");
  gen_cmd->add_option("--out", gen_args.out)->required();

  SteerArgs steer_args;
  auto* steer_cmd = app.add_subcommand("steer-ablation", "dataset-token steering experiment");
  steer_cmd->add_option("--out", steer_args.out, "output prefix")->required();
  steer_cmd->add_option("--steps", steer_args.steps);

  GradcheckArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of the training losses");
  grad_cmd->add_option("--out", grad_args.out)->required();
  grad_cmd->add_option("--tolerance", grad_args.tolerance);

  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::kArgument);
  }

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  for (int i = 1; i < argc; ++i) run.argv.emplace_back(argv[i]);
  run.common = common;
  try {
    if (!common.config_path.empty()) {
      require_file("--config", common.config_path);
      try {
        run.config = json::parse(load_text(common.config_path));
      } catch (const json::exception& e) {
        throw FormatError(common.config_path, 0, e.what());
      }
      if (!run.config.is_object()) throw FormatError(common.config_path, 0, "config must be a JSON object");
    }
    if (run.command == "synth-data") cmd_synth(run, synth_args);
    else if (run.command == "pretrain-encoder") cmd_pretrain(run, pretrain_args);
    else if (run.command == "train-contrastive") cmd_train_contrastive(run, contrastive_args);
    else if (run.command == "train-mclm") cmd_train_mclm(run, mclm_args);
    else if (run.command == "embed") cmd_embed(run, embed_args);
    else if (run.command == "search") cmd_search(run, search_args);
    else if (run.command == "screen") cmd_screen(run, screen_args);
    else if (run.command == "generate") cmd_generate(run, gen_args);
    else if (run.command == "steer-ablation") cmd_steer(run, steer_args);
    else if (run.command == "gradcheck") cmd_gradcheck(run, grad_args);
  } catch (const Error& e) {
    std::cerr << "error [" << error_kind_name(e.kind()) << "]: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
