// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "spring/data.hpp"
#include "spring/eval.hpp"
#include "spring/hash.hpp"
#include "spring/model.hpp"
#include "spring/pretrain.hpp"
#include "spring/retrieval.hpp"
#include "spring/spring.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kData: return kExitData;
    case ErrorKind::kNumeric: return kExitNumeric;
  }
  return kExitConfig;
}

std::vector<int> parse_int_grid(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  const auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      throw config_error("bad integer grid \"" + text + "\"");
    }
    if (used != s.size()) throw config_error("bad integer grid \"" + text + "\"");
    return v;
  };
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw config_error("bad integer grid \"" + text + "\"");
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      out.push_back(to_int(item));
      continue;
    }
    const int lo = to_int(item.substr(0, colon));
    const int hi = to_int(item.substr(colon + 1));
    if (hi < lo) throw config_error("bad integer grid \"" + text + "\"");
    for (int v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw config_error("empty integer grid");
  return out;
}

nlohmann::json default_run_config() {
  SyntheticTaskSpec task;
  ModelConfig model;
  nlohmann::json model_json = model.to_json();
  // Vocabulary-derived fields are filled in at pretraining time.
  model_json.erase("vocab_size");
  model_json.erase("virtual_base");
  model_json.erase("virtual_count");
  nlohmann::json pretrain = PretrainHyper{}.to_json();
  pretrain["seed"] = 0;
  return {
      {"task", task.to_json()},
      {"vocab", {{"max_size", 1024}, {"n_virtual", kDefaultVirtualTokens}}},
      {"model", model_json},
      {"pretrain", pretrain},
      {"docs", PretrainDocSpec{}.to_json()},
      {"spring", SpringHyper{}.to_json()},
  };
}

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out << text;
  if (!out) throw data_error("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw data_error("cannot create output directory " + dir);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw config_error(std::string("missing --") + what);
  if (!fs::is_regular_file(path)) throw data_error(std::string(what) + " file not found: " + path);
}

nlohmann::json input_record(const std::string& path) {
  return {{"path", path}, {"sha256", sha256_file(path)}};
}

/// The run manifest: resolved configuration, seed, and the hashes of every
/// input and output file.
void write_manifest(const std::string& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["inputs"] = nlohmann::json::object();
  for (const auto& [name, path] : inputs) m["inputs"][name] = input_record(path);
  m["outputs"] = nlohmann::json::object();
  for (const auto& name : outputs) m["outputs"][name] = sha256_file((fs::path(dir) / name).string());
  write_json(fs::path(dir) / "manifest.json", m);
}

/// Refuses to reuse a run directory created with a different configuration.
void check_reuse(const std::string& dir, const std::string& command, const nlohmann::json& config) {
  const auto path = fs::path(dir) / "manifest.json";
  if (!fs::exists(path)) return;
  const auto previous = read_json_file(path.string());
  if (previous.value("command", std::string()) != command) return;
  if (previous.value("config", nlohmann::json()) != config) {
    throw config_error("run directory " + dir +
                       " holds a run with a different configuration; pick a new --out");
  }
}

// Shared option plumbing for every subcommand.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  int n_virtual = kDefaultVirtualTokens;
  std::string out_dir;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* n_virtual_opt = nullptr;
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config_path, "JSON run configuration");
  c.seed_opt = app->add_option("--seed", c.seed, "random seed (overrides the config)");
  c.n_virtual_opt =
      app->add_option("--n-virtual", c.n_virtual, "number of virtual tokens n (default 50)");
  auto* out = app->add_option("--out", c.out_dir, "output directory");
  if (needs_out) out->required();
}

nlohmann::json resolve_config(const Common& c) {
  nlohmann::json cfg = default_run_config();
  if (!c.config_path.empty()) {
    auto file = read_json_file(c.config_path);
    if (!file.is_object()) throw config_error("configuration must be a JSON object");
    cfg.merge_patch(file);
  }
  if (c.n_virtual_opt->count()) {
    cfg["vocab"]["n_virtual"] = c.n_virtual;
    cfg["spring"]["n"] = c.n_virtual;
  }
  return cfg;
}

template <typename V>
void override_if(CLI::Option* opt, nlohmann::json& section, const char* key, const V& value) {
  if (opt && opt->count()) section[key] = value;
}

SyntheticTaskSpec task_from_json(const nlohmann::json& j) {
  SyntheticTaskSpec s;
  try {
    s.n_entities = j.value("n_entities", s.n_entities);
    s.n_relations = j.value("n_relations", s.n_relations);
    s.distractor_rate = j.value("distractor_rate", s.distractor_rate);
    s.seed = j.value("seed", s.seed);
    s.held_out_fraction = j.value("held_out_fraction", s.held_out_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("task config: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- gen-task

struct GenTaskArgs {
  Common common;
  int entities = 0, relations = 0;
  double distractor_rate = 0, held_out = 0;
  CLI::Option *entities_opt, *relations_opt, *rate_opt, *held_out_opt;
};

int cmd_gen_task(GenTaskArgs& a, std::ostream& out) {
  auto cfg = resolve_config(a.common);
  auto& t = cfg["task"];
  override_if(a.entities_opt, t, "n_entities", a.entities);
  override_if(a.relations_opt, t, "n_relations", a.relations);
  override_if(a.rate_opt, t, "distractor_rate", a.distractor_rate);
  override_if(a.held_out_opt, t, "held_out_fraction", a.held_out);
  override_if(a.common.seed_opt, t, "seed", a.common.seed);
  const auto spec = task_from_json(t);
  const auto task = generate_synthetic_task(spec);

  ensure_dir(a.common.out_dir);
  const fs::path dir(a.common.out_dir);
  write_corpus_jsonl((dir / "corpus.jsonl").string(), task.corpus);
  write_qa_jsonl((dir / "train.jsonl").string(), task.train);
  write_qa_jsonl((dir / "heldout.jsonl").string(), task.held_out);
  write_manifest(a.common.out_dir, "gen-task", spec.to_json(), spec.seed, {},
                 {"corpus.jsonl", "train.jsonl", "heldout.jsonl"});
  out << "corpus " << task.corpus.size() << " passages\n"
      << "train " << task.train.size() << " questions\n"
      << "heldout " << task.held_out.size() << " questions\n";
  return kExitOk;
}

// ------------------------------------------------------------------- index

struct IndexArgs {
  Common common;
  std::string corpus;
};

int cmd_index(IndexArgs& a, std::ostream& out) {
  require_file(a.corpus, "corpus");
  const auto index = build_index(load_corpus_jsonl(a.corpus));
  ensure_dir(a.common.out_dir);
  index.save((fs::path(a.common.out_dir) / "index.bin").string());
  const nlohmann::json cfg = {{"k1", index.params().k1}, {"b", index.params().b}};
  write_manifest(a.common.out_dir, "index", cfg, 0, {{"corpus", a.corpus}}, {"index.bin"});
  char line[128];
  std::snprintf(line, sizeof(line), "N %lld\navgdl %.6f\n",
                static_cast<long long>(index.doc_count()), index.avgdl());
  out << line;
  return kExitOk;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  Common common;
  std::string corpus, train, index;
  int steps = 0, batch_size = 0, max_vocab = 0;
  double lr = 0;
  CLI::Option *steps_opt, *batch_opt, *lr_opt, *vocab_opt;
};

int cmd_pretrain(PretrainArgs& a, std::ostream& out) {
  require_file(a.corpus, "corpus");
  require_file(a.train, "train");
  auto cfg = resolve_config(a.common);
  override_if(a.steps_opt, cfg["pretrain"], "steps", a.steps);
  override_if(a.batch_opt, cfg["pretrain"], "batch_size", a.batch_size);
  override_if(a.lr_opt, cfg["pretrain"], "lr", a.lr);
  override_if(a.vocab_opt, cfg["vocab"], "max_size", a.max_vocab);
  override_if(a.common.seed_opt, cfg["pretrain"], "seed", a.common.seed);
  override_if(a.common.seed_opt, cfg["docs"], "seed", a.common.seed);

  const auto hyper = PretrainHyper::from_json(cfg["pretrain"]);
  const auto doc_spec = PretrainDocSpec::from_json(cfg["docs"]);
  const std::uint64_t seed = cfg["pretrain"].value("seed", std::uint64_t{0});
  const int max_vocab = cfg["vocab"].value("max_size", 1024);
  const int n_virtual = cfg["vocab"].value("n_virtual", kDefaultVirtualTokens);

  const auto corpus = load_corpus_jsonl(a.corpus);
  const auto train_set = load_qa_jsonl(a.train);
  if (train_set.empty()) throw data_error("empty training set");
  const Bm25Index index = a.index.empty() ? build_index(corpus) : Bm25Index::load(a.index);

  std::vector<std::string> vocab_texts;
  for (const auto& p : corpus) vocab_texts.push_back(p.text);
  for (const auto& ex : train_set) {
    vocab_texts.push_back(ex.question);
    for (const auto& ans : ex.answers) vocab_texts.push_back(ans);
  }
  vocab_texts.emplace_back(kAnswerInstruction);
  vocab_texts.emplace_back(kVerboseAnswerLead);
  const Vocab vocab = build_vocab(vocab_texts, max_vocab, n_virtual);

  nlohmann::json model_json = cfg["model"];
  model_json["vocab_size"] = vocab.size();
  model_json["virtual_base"] = vocab.virtual_base();
  model_json["virtual_count"] = vocab.virtual_count();
  const auto model = ModelConfig::from_json(model_json);
  if (model.precision != Precision::kF32) throw config_error("pretraining runs in f32 only");
  cfg["model"] = model.to_json();

  ensure_dir(a.common.out_dir);
  const fs::path dir(a.common.out_dir);
  std::set<std::string> passage_words;
  for (const auto& p : corpus) {
    for (auto& w : split_words(p.text)) passage_words.insert(std::move(w));
  }
  const std::vector<std::string> substitutes(passage_words.begin(), passage_words.end());
  const auto docs =
      render_pretraining_documents(train_set, bm25_retriever(index), doc_spec, substitutes);
  out << "vocab " << vocab.size() << " ids (" << vocab.virtual_count() << " reserved)\n"
      << "documents " << docs.size() << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  const auto log_every = std::max(1, hyper.steps / 20);
  auto result = pretrain_backbone(model, vocab, docs, hyper, seed,
                                  [&](std::int64_t step, double loss, double lr) {
                                    if ((step + 1) % log_every == 0 || step == 0) {
                                      char line[128];
                                      std::snprintf(line, sizeof(line),
                                                    "step %6lld  loss %.4f  lr %.3g\n",
                                                    static_cast<long long>(step + 1), loss, lr);
                                      out << line << std::flush;
                                    }
                                  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_backbone(result.params, (dir / "backbone.ckpt").string());
  vocab.save((dir / "vocab.json").string());
  write_json(dir / "pretrain_log.json", {{"initial_loss", result.initial_loss},
                                         {"final_loss", result.final_loss},
                                         {"losses", result.losses}});
  cfg.erase("spring");
  cfg.erase("task");
  write_manifest(a.common.out_dir, "pretrain", cfg, seed,
                 {{"corpus", a.corpus}, {"train", a.train}},
                 {"backbone.ckpt", "vocab.json", "pretrain_log.json"});
  char line[160];
  std::snprintf(line, sizeof(line), "loss %.4f -> %.4f in %.1fs\n", result.initial_loss,
                result.final_loss, secs);
  out << line;
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string backbone, vocab, train, index;
  int epochs = 0, batch_size = 0, fixed_k = 0, m_max = 0;
  double lr = 0, warmup = 0;
  std::string placement;
  CLI::Option *epochs_opt, *batch_opt, *fixed_k_opt, *m_max_opt, *lr_opt, *warmup_opt,
      *placement_opt;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
  require_file(a.backbone, "backbone");
  require_file(a.vocab, "vocab");
  require_file(a.train, "train");
  require_file(a.index, "index");
  auto cfg = resolve_config(a.common);
  auto& s = cfg["spring"];
  override_if(a.epochs_opt, s, "epochs", a.epochs);
  override_if(a.batch_opt, s, "batch_size", a.batch_size);
  override_if(a.fixed_k_opt, s, "fixed_k", a.fixed_k);
  override_if(a.m_max_opt, s, "m_max", a.m_max);
  override_if(a.lr_opt, s, "lr", a.lr);
  override_if(a.warmup_opt, s, "warmup_ratio", a.warmup);
  override_if(a.placement_opt, s, "placement", a.placement);
  override_if(a.common.seed_opt, s, "seed", a.common.seed);
  const auto hyper = SpringHyper::from_json(s);

  ensure_dir(a.common.out_dir);
  const nlohmann::json run_config = {{"spring", hyper.to_json()}};
  check_reuse(a.common.out_dir, "train", run_config);

  const std::string backbone_sha_before = sha256_file(a.backbone);
  const auto theta = load_backbone<float>(a.backbone);
  const auto vocab = Vocab::load(a.vocab);
  const auto dataset = load_qa_jsonl(a.train);
  const auto index = Bm25Index::load(a.index);
  if (vocab.size() != theta.config.vocab_size || vocab.virtual_base() != theta.config.virtual_base) {
    throw config_error("vocabulary does not match the backbone");
  }
  const std::string theta_hash_before = params_hash(theta);

  const auto total = planned_steps(dataset.size(), hyper);
  out << "training " << hyper.n << " virtual tokens for " << total << " steps ("
      << dataset.size() << " examples, batch " << hyper.batch_size << ", " << hyper.epochs
      << " epochs, placement " << placement_name(hyper.placement) << ")\n";
  const auto log_every = std::max<std::int64_t>(1, total / 20);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(theta, vocab, dataset, index, hyper,
                      [&](std::int64_t step, double loss, double lr) {
                        if ((step + 1) % log_every == 0 || step == 0) {
                          char line[128];
                          std::snprintf(line, sizeof(line), "step %6lld  loss %.4f  lr %.3g\n",
                                        static_cast<long long>(step + 1), loss, lr);
                          out << line << std::flush;
                        }
                      });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Freezing contract: neither the in-memory backbone nor its file changed.
  if (params_hash(theta) != theta_hash_before || sha256_file(a.backbone) != backbone_sha_before) {
    throw numeric_error("backbone changed during training");
  }

  const fs::path dir(a.common.out_dir);
  save_checkpoint(result.delta, (dir / "delta.ckpt").string(),
                  {{"placement", placement_name(hyper.placement)},
                   {"steps", result.steps},
                   {"backbone_sha256", backbone_sha_before}});
  write_json(dir / "train_log.json", {{"steps", result.steps},
                                      {"losses", result.losses},
                                      {"backbone_sha256_before", backbone_sha_before},
                                      {"backbone_sha256_after", sha256_file(a.backbone)}});
  write_manifest(a.common.out_dir, "train", run_config, hyper.seed,
                 {{"backbone", a.backbone}, {"vocab", a.vocab}, {"train", a.train}, {"index", a.index}},
                 {"delta.ckpt", "train_log.json"});
  char line[160];
  std::snprintf(line, sizeof(line), "%lld steps, loss %.4f -> %.4f in %.1fs\n",
                static_cast<long long>(result.steps),
                result.losses.empty() ? 0.0 : result.losses.front(),
                result.losses.empty() ? 0.0 : result.losses.back(), secs);
  out << line;
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string backbone, vocab, delta, data, index;
  std::string k_grid = "50", m_grid = "3", placement = "rtq", retrieval = "on";
  bool use_merged = false;
};

std::vector<Placement> parse_placements(const std::string& text) {
  if (text == "all") return {Placement::kPrefixTRQ, Placement::kSpringRTQ, Placement::kSuffixRQT};
  std::vector<Placement> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) out.push_back(parse_placement(item));
  if (out.empty()) throw config_error("empty placement list");
  return out;
}

int cmd_eval(EvalArgs& a, std::ostream& out) {
  require_file(a.backbone, "backbone");
  require_file(a.vocab, "vocab");
  require_file(a.data, "data");
  const auto ks = parse_int_grid(a.k_grid);
  const auto ms = parse_int_grid(a.m_grid);
  const auto placements = parse_placements(a.placement);
  std::vector<bool> retrievals;
  if (a.retrieval == "on") {
    retrievals = {true};
  } else if (a.retrieval == "off") {
    retrievals = {false};
  } else if (a.retrieval == "both") {
    retrievals = {true, false};
  } else {
    throw config_error("--retrieval must be on, off or both");
  }
  const bool any_retrieval =
      std::find(retrievals.begin(), retrievals.end(), true) != retrievals.end() &&
      std::any_of(ms.begin(), ms.end(), [](int m) { return m > 0; });
  if (any_retrieval) require_file(a.index, "index");

  const auto theta = load_backbone<float>(a.backbone);
  const auto vocab = Vocab::load(a.vocab);
  if (vocab.size() != theta.config.vocab_size) {
    throw config_error("vocabulary does not match the backbone");
  }
  const int n = a.common.n_virtual_opt->count() ? a.common.n_virtual : vocab.virtual_count();
  if (n != vocab.virtual_count()) throw config_error("--n-virtual does not match the vocabulary");
  const auto dataset = load_qa_jsonl(a.data);
  std::optional<Bm25Index> index;
  if (any_retrieval) index = Bm25Index::load(a.index);

  const int max_k = *std::max_element(ks.begin(), ks.end());
  Matrix<float> delta(0, theta.config.d_model);
  std::map<std::string, std::string> inputs = {
      {"backbone", a.backbone}, {"vocab", a.vocab}, {"data", a.data}};
  if (any_retrieval) inputs["index"] = a.index;
  if (!a.delta.empty()) {
    require_file(a.delta, "delta");
    delta = load_checkpoint(a.delta, n, theta.config.d_model).table;
    inputs["delta"] = a.delta;
  } else if (max_k > 0 && !a.use_merged) {
    throw config_error("k > 0 needs --delta or --use-merged");
  }

  std::vector<EvalCondition> conditions;
  std::set<std::string> seen;
  for (auto placement : placements) {
    for (bool retrieval : retrievals) {
      for (int k : ks) {
        for (int m : ms) {
          EvalCondition c{placement, k, m, retrieval, a.use_merged};
          if (seen.insert(c.label()).second) conditions.push_back(c);
        }
      }
    }
  }

  ensure_dir(a.common.out_dir);
  const fs::path dir(a.common.out_dir);
  std::vector<EvalReport> reports;
  std::vector<std::string> outputs;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& c : conditions) {
    auto report = evaluate(theta, delta, vocab, dataset, index ? &*index : nullptr, c);
    const std::string name = "report_" + c.label() + ".json";
    write_json(dir / name, report.to_json());
    outputs.push_back(name);
    summary.push_back({{"label", c.label()}, {"condition", c.to_json()}, {"em", report.em},
                       {"f1", report.f1}, {"loss", report.loss}});
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s EM %6.2f  F1 %6.2f  loss %.4f\n", c.label().c_str(),
                  100.0 * report.em, 100.0 * report.f1, report.loss);
    out << line << std::flush;
    reports.push_back(std::move(report));
  }
  write_text(dir / "table.txt", format_report_table(reports));
  write_json(dir / "summary.json", summary);
  outputs.push_back("table.txt");
  outputs.push_back("summary.json");
  const nlohmann::json run_config = {{"k", ks},
                                     {"m", ms},
                                     {"placement", a.placement},
                                     {"retrieval", a.retrieval},
                                     {"use_merged", a.use_merged}};
  write_manifest(a.common.out_dir, "eval", run_config, 0, inputs, outputs);
  return kExitOk;
}

// ------------------------------------------------------------------- merge

struct MergeArgs {
  Common common;
  std::string backbone, delta;
};

int cmd_merge(MergeArgs& a, std::ostream& out) {
  require_file(a.backbone, "backbone");
  require_file(a.delta, "delta");
  const auto theta = load_backbone<float>(a.backbone);
  const int n = a.common.n_virtual_opt->count() ? a.common.n_virtual : theta.config.virtual_count;
  if (n != theta.config.virtual_count) throw config_error("virtual range mismatch");
  const auto delta = load_checkpoint(a.delta, n, theta.config.d_model);
  const auto merged = merge_into_vocab(theta, delta.table);
  ensure_dir(a.common.out_dir);
  save_backbone(merged, (fs::path(a.common.out_dir) / "merged.ckpt").string());
  write_manifest(a.common.out_dir, "merge", {{"n", n}}, 0,
                 {{"backbone", a.backbone}, {"delta", a.delta}}, {"merged.ckpt"});
  out << "merged " << n << " virtual tokens into ids [" << theta.config.virtual_base << ", "
      << theta.config.virtual_base + n << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("SPRING virtual-token tuning for retrieval-augmented QA", "spring");
  app.require_subcommand(1);

  GenTaskArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-task", "write a synthetic key-value QA task");
  add_common(gen_cmd, gen.common);
  gen.entities_opt = gen_cmd->add_option("--entities", gen.entities, "number of entities");
  gen.relations_opt = gen_cmd->add_option("--relations", gen.relations, "number of relations");
  gen.rate_opt = gen_cmd->add_option("--distractor-rate", gen.distractor_rate,
                                     "distractor passages per fact");
  gen.held_out_opt = gen_cmd->add_option("--held-out-fraction", gen.held_out,
                                         "fraction of facts reserved for held-out questions");

  IndexArgs idx;
  auto* idx_cmd = app.add_subcommand("index", "build a BM25 index over a JSONL corpus");
  add_common(idx_cmd, idx.common);
  idx_cmd->add_option("--corpus", idx.corpus, "corpus JSONL")->required();

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "build the vocabulary and pretrain the backbone");
  add_common(pre_cmd, pre.common);
  pre_cmd->add_option("--corpus", pre.corpus, "corpus JSONL")->required();
  pre_cmd->add_option("--train", pre.train, "training questions JSONL")->required();
  pre_cmd->add_option("--index", pre.index, "prebuilt index (built from --corpus if absent)");
  pre.steps_opt = pre_cmd->add_option("--steps", pre.steps, "optimizer steps");
  pre.batch_opt = pre_cmd->add_option("--batch-size", pre.batch_size, "documents per step");
  pre.lr_opt = pre_cmd->add_option("--lr", pre.lr, "peak learning rate");
  pre.vocab_opt = pre_cmd->add_option("--max-vocab", pre.max_vocab, "vocabulary size budget");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "train virtual tokens against a frozen backbone");
  add_common(tr_cmd, tr.common);
  tr_cmd->add_option("--backbone", tr.backbone, "backbone checkpoint")->required();
  tr_cmd->add_option("--vocab", tr.vocab, "vocabulary JSON")->required();
  tr_cmd->add_option("--train", tr.train, "training questions JSONL")->required();
  tr_cmd->add_option("--index", tr.index, "BM25 index")->required();
  tr.epochs_opt = tr_cmd->add_option("--epochs", tr.epochs, "passes over the training set");
  tr.batch_opt = tr_cmd->add_option("--batch-size", tr.batch_size, "examples per step");
  tr.fixed_k_opt = tr_cmd->add_option("--fixed-k", tr.fixed_k, "always use k tokens (0 samples k)");
  tr.m_max_opt = tr_cmd->add_option("--m-max", tr.m_max, "passages drawn from {1..m_max}");
  tr.lr_opt = tr_cmd->add_option("--lr", tr.lr, "peak learning rate");
  tr.warmup_opt = tr_cmd->add_option("--warmup-ratio", tr.warmup, "warmup fraction of steps");
  tr.placement_opt = tr_cmd->add_option("--placement", tr.placement, "trq, rtq or rqt");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate a grid of conditions");
  add_common(ev_cmd, ev.common);
  ev_cmd->add_option("--backbone", ev.backbone, "backbone (or merged) checkpoint")->required();
  ev_cmd->add_option("--vocab", ev.vocab, "vocabulary JSON")->required();
  ev_cmd->add_option("--delta", ev.delta, "virtual-token checkpoint");
  ev_cmd->add_option("--data", ev.data, "evaluation questions JSONL")->required();
  ev_cmd->add_option("--index", ev.index, "BM25 index");
  ev_cmd->add_option("--k", ev.k_grid, "k value or grid, e.g. 0,1,5,50 or 0:5");
  ev_cmd->add_option("--m", ev.m_grid, "m value or grid");
  ev_cmd->add_option("--placement", ev.placement, "trq, rtq, rqt, a comma list or all");
  ev_cmd->add_option("--retrieval", ev.retrieval, "on, off or both");
  ev_cmd->add_flag("--use-merged", ev.use_merged, "read virtual tokens as merged vocabulary ids");

  MergeArgs mg;
  auto* mg_cmd = app.add_subcommand("merge", "write delta into the reserved vocabulary rows");
  add_common(mg_cmd, mg.common);
  mg_cmd->add_option("--backbone", mg.backbone, "backbone checkpoint")->required();
  mg_cmd->add_option("--delta", mg.delta, "virtual-token checkpoint")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_task(gen, out);
    if (*idx_cmd) return cmd_index(idx, out);
    if (*pre_cmd) return cmd_pretrain(pre, out);
    if (*tr_cmd) return cmd_train(tr, out);
    if (*ev_cmd) return cmd_eval(ev, out);
    if (*mg_cmd) return cmd_merge(mg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace spring
