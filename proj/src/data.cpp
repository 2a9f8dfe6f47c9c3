// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "spring/error.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

std::vector<QaExample> load_qa_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot read " + path);
  std::vector<QaExample> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& what) {
      return data_error(path + ":" + std::to_string(lineno) + ": schema error: " + what);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw fail("not valid JSON");
    }
    if (!j.is_object()) throw fail("expected an object");
    if (!j.contains("question") || !j["question"].is_string()) throw fail("missing \"question\"");
    if (!j.contains("answers") || !j["answers"].is_array()) throw fail("missing \"answers\"");
    QaExample ex;
    ex.question = j["question"].get<std::string>();
    for (const auto& a : j["answers"]) {
      if (!a.is_string() || a.get<std::string>().empty()) throw fail("answers must be non-empty strings");
      ex.answers.push_back(a.get<std::string>());
    }
    if (ex.answers.empty()) throw fail("\"answers\" is empty");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_qa_jsonl(const std::string& path, const std::vector<QaExample>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path);
  for (const auto& ex : examples) {
    out << nlohmann::json{{"question", ex.question}, {"answers", ex.answers}}.dump() << '\n';
  }
}

void SyntheticTaskSpec::validate() const {
  if (n_entities < 1 || n_relations < 1) throw config_error("n_entities and n_relations must be >= 1");
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) {
    throw config_error("distractor_rate must lie in [0, 1]");
  }
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    throw config_error("held_out_fraction must lie in [0, 1)");
  }
}

nlohmann::json SyntheticTaskSpec::to_json() const {
  return {{"n_entities", n_entities},
          {"n_relations", n_relations},
          {"distractor_rate", distractor_rate},
          {"seed", seed},
          {"held_out_fraction", held_out_fraction}};
}

std::string fact_passage(std::string_view relation, std::string_view entity, std::string_view value) {
  return "the " + std::string(relation) + " of " + std::string(entity) + " is " + std::string(value);
}

std::string fact_question(std::string_view relation, std::string_view entity) {
  return "what is the " + std::string(relation) + " of " + std::string(entity) + " ?";
}

namespace {

constexpr std::string_view kRelationNames[] = {
    "color", "size",   "origin", "owner", "shape",  "weight",
    "height", "speed", "price",  "flavor", "texture", "material"};

std::string relation_name(int r) {
  if (r < static_cast<int>(std::size(kRelationNames))) return std::string(kRelationNames[r]);
  return "attr" + std::to_string(r);
}

std::string entity_name(int e, int n) {
  const int width = std::max(3, static_cast<int>(std::to_string(std::max(n - 1, 0)).size()));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "e%0*d", width, e);
  return buf;
}

// Words the task templates and the instruction use; gensyms must avoid them.
std::set<std::string> reserved_words() {
  std::set<std::string> words;
  for (auto text : {std::string_view("the of is what story mentions"), kAnswerInstruction,
                    kVerboseAnswerLead}) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  }
  for (auto r : kRelationNames) words.emplace(r);
  return words;
}

}  // namespace

SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto reserved = reserved_words();

  const int n_facts = spec.n_entities * spec.n_relations;
  std::uniform_int_distribution<int> letter(0, 25);
  std::set<std::string> used;
  std::vector<std::string> values;
  values.reserve(static_cast<std::size_t>(n_facts));
  while (static_cast<int>(values.size()) < n_facts) {
    std::string v(6, 'a');
    for (auto& ch : v) ch = static_cast<char>('a' + letter(rng));
    if (reserved.count(v) || !used.insert(v).second) continue;
    values.push_back(std::move(v));
  }

  SyntheticTask task;
  struct Fact {
    std::string relation, entity, value;
  };
  std::vector<Fact> facts;
  for (int e = 0; e < spec.n_entities; ++e) {
    for (int r = 0; r < spec.n_relations; ++r) {
      const auto idx = static_cast<std::size_t>(e * spec.n_relations + r);
      facts.push_back({relation_name(r), entity_name(e, spec.n_entities), values[idx]});
    }
  }
  char id[32];
  for (std::size_t f = 0; f < facts.size(); ++f) {
    std::snprintf(id, sizeof(id), "fact-%05zu", f);
    task.corpus.push_back({id, fact_passage(facts[f].relation, facts[f].entity, facts[f].value)});
  }

  const int n_distractors = static_cast<int>(std::lround(spec.distractor_rate * n_facts));
  std::uniform_int_distribution<int> pick_entity(0, spec.n_entities - 1);
  for (int i = 0; i < n_distractors; ++i) {
    const int a = pick_entity(rng);
    int b = pick_entity(rng);
    if (spec.n_entities > 1) {
      while (b == a) b = pick_entity(rng);
    }
    std::snprintf(id, sizeof(id), "distractor-%05d", i);
    task.corpus.push_back({id, "the story of " + entity_name(a, spec.n_entities) + " mentions " +
                                   entity_name(b, spec.n_entities)});
  }

  std::vector<std::size_t> order(facts.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::floor(spec.held_out_fraction * static_cast<double>(facts.size())));
  std::vector<bool> held(facts.size(), false);
  for (std::size_t i = 0; i < n_held; ++i) held[order[i]] = true;
  for (std::size_t f = 0; f < facts.size(); ++f) {
    QaExample ex{fact_question(facts[f].relation, facts[f].entity), {facts[f].value}};
    (held[f] ? task.held_out : task.train).push_back(std::move(ex));
  }
  return task;
}

namespace {

// Whether the word sequence of `needle` occurs contiguously in `text`.
bool contains_words(const std::string& text, const std::string& needle) {
  const auto hay = split_words(text);
  const auto words = split_words(needle);
  if (words.empty()) return true;
  return std::search(hay.begin(), hay.end(), words.begin(), words.end()) != hay.end();
}

}  // namespace

PassageRetriever bm25_retriever(const Bm25Index& index) {
  return [&index](const std::string& query, int m) {
    std::vector<std::string> texts;
    if (m <= 0) return texts;
    for (const auto& hit : index.search(query, m)) texts.push_back(hit.passage.text);
    return texts;
  };
}

nlohmann::json PretrainDocSpec::to_json() const {
  return {{"m_min", m_min},
          {"m_max", m_max},
          {"instructed_fraction", instructed_fraction},
          {"copies", copies},
          {"counterfactual_fraction", counterfactual_fraction},
          {"instruction_repeat_max", instruction_repeat_max},
          {"require_answer_in_context", require_answer_in_context},
          {"seed", seed}};
}

PretrainDocSpec PretrainDocSpec::from_json(const nlohmann::json& j) {
  PretrainDocSpec s;
  try {
    s.m_min = j.value("m_min", s.m_min);
    s.m_max = j.value("m_max", s.m_max);
    s.instructed_fraction = j.value("instructed_fraction", s.instructed_fraction);
    s.copies = j.value("copies", s.copies);
    s.counterfactual_fraction = j.value("counterfactual_fraction", s.counterfactual_fraction);
    s.instruction_repeat_max = j.value("instruction_repeat_max", s.instruction_repeat_max);
    s.require_answer_in_context = j.value("require_answer_in_context", s.require_answer_in_context);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("pretraining documents: ") + e.what());
  }
  if (s.m_min < 0 || s.m_max < s.m_min || s.copies < 1 || s.instructed_fraction < 0 || s.instructed_fraction > 1 ||
      s.counterfactual_fraction < 0 || s.counterfactual_fraction > 1 || s.instruction_repeat_max < 0) {
    throw config_error("pretraining documents: invalid m range, copies or fractions");
  }
  return s;
}

std::vector<PretrainDocument> render_pretraining_documents(const std::vector<QaExample>& examples,
                                                      const PassageRetriever& retrieve,
                                                      const PretrainDocSpec& spec,
                                                      const std::vector<std::string>& substitutes) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> pick_m(spec.m_min, spec.m_max);
  std::bernoulli_distribution instructed(spec.instructed_fraction);
  std::bernoulli_distribution counterfactual(substitutes.empty() ? 0.0 : spec.counterfactual_fraction);
  std::uniform_int_distribution<std::size_t> pick_sub(0, substitutes.empty() ? 0 : substitutes.size() - 1);
  std::uniform_int_distribution<int> pick_len(1, std::max(1, spec.instruction_repeat_max));
  const auto instruction_words = split_words(kAnswerInstruction);
  // A soft prompt initialized from the instruction reads as this cycle, cut
  // at any length; the backbone learns to treat every cut as the instruction.
  const auto instruction_of_length = [&](int len) {
    std::string out;
    for (int i = 0; i < len; ++i) {
      if (i) out += ' ';
      out += instruction_words[static_cast<std::size_t>(i) % instruction_words.size()];
    }
    return out;
  };
  std::vector<PretrainDocument> docs;
  docs.reserve(examples.size() * static_cast<std::size_t>(spec.copies));
  for (int c = 0; c < spec.copies; ++c) {
    for (const auto& ex : examples) {
      const int m = pick_m(rng);
      const bool concise = instructed(rng);
      std::string answer = ex.answers.front();
      auto passages = retrieve(ex.question, m);
      // Swap the answer for a random word in both the passages and the
      // target, so only reading the context predicts it.
      const auto answer_words = split_words(answer);
      if (counterfactual(rng) && answer_words.size() == 1) {
        const std::string& sub = substitutes[pick_sub(rng)];
        bool found = false;
        for (auto& p : passages) {
          auto words = split_words(p);
          std::string rebuilt;
          for (auto& w : words) {
            if (w == answer_words.front()) {
              w = sub;
              found = true;
            }
            if (!rebuilt.empty()) rebuilt += ' ';
            rebuilt += w;
          }
          p = std::move(rebuilt);
        }
        if (found) answer = sub;
      }
      PretrainDocument doc;
      for (const auto& passage : passages) {
        if (!doc.context.empty()) doc.context += "\n\n";
        doc.context += passage;
      }
      if (spec.require_answer_in_context && !contains_words(doc.context, answer)) continue;
      if (concise) {
        const std::string instruction = spec.instruction_repeat_max > 0
                                            ? instruction_of_length(pick_len(rng))
                                            : std::string(kAnswerInstruction);
        doc.text = instruction + ' ' + ex.question + ' ' + answer;
      } else {
        doc.text = ex.question + ' ' + std::string(kVerboseAnswerLead) + ' ' + answer;
      }
      docs.push_back(std::move(doc));
    }
  }
  return docs;
}

}  // namespace spring
