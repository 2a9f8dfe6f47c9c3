// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "spring/error.hpp"
#include "spring/parallel.hpp"

namespace spring {
namespace {

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  for (std::string w; in >> w;) {
    if (w == "a" || w == "an" || w == "the") continue;
    tokens.push_back(std::move(w));
  }
  return tokens;
}

double pair_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : normalized_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

int exact_match(std::string_view prediction, const std::vector<std::string>& answers) {
  if (answers.empty()) throw config_error("no gold answers");
  const auto pred = normalize_answer(prediction);
  for (const auto& a : answers) {
    if (normalize_answer(a) == pred) return 1;
  }
  return 0;
}

double f1_score(std::string_view prediction, const std::vector<std::string>& answers) {
  if (answers.empty()) throw config_error("no gold answers");
  const auto pred = normalized_tokens(prediction);
  double best = 0.0;
  for (const auto& a : answers) best = std::max(best, pair_f1(pred, normalized_tokens(a)));
  return best;
}

std::string EvalCondition::label() const {
  std::string s = std::string(placement_name(placement)) + "_k" + std::to_string(k) + "_m" +
                  std::to_string(effective_m()) + (retrieval ? "_ret" : "_noret");
  if (merged) s += "_merged";
  return s;
}

nlohmann::json EvalCondition::to_json() const {
  return {{"placement", placement_name(placement)},
          {"k", k},
          {"m", effective_m()},
          {"retrieval", retrieval},
          {"merged", merged}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["condition"] = condition.to_json();
  j["em"] = em;
  j["f1"] = f1;
  j["loss"] = loss;
  j["per_example"] = nlohmann::json::array();
  for (const auto& r : per_example) {
    j["per_example"].push_back({{"prediction", r.prediction}, {"em", r.em}, {"f1", r.f1}, {"loss", r.loss}});
  }
  return j;
}

EvalReport evaluate(const ModelParams<float>& theta, const Matrix<float>& delta,
                    const Vocab& vocab, const std::vector<QaExample>& dataset,
                    const Bm25Index* index, const EvalCondition& condition) {
  if (condition.k < 0 || condition.k > vocab.virtual_count()) {
    throw config_error("k=" + std::to_string(condition.k) + " exceeds n=" +
                       std::to_string(vocab.virtual_count()));
  }
  if (condition.m < 0) throw config_error("m must be >= 0");
  const int m = condition.effective_m();
  if (m > 0 && index == nullptr) throw config_error("retrieval requested without an index");
  if (!condition.merged && condition.k > delta.rows()) {
    throw config_error("k exceeds the rows of the virtual-token table");
  }

  const int max_len = theta.config.max_seq_len;
  EvalReport report;
  report.condition = condition;
  report.per_example.resize(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const auto& ex = dataset[i];
    std::vector<std::string> passages;
    if (m > 0) {
      for (const auto& hit : index->search(ex.question, m)) passages.push_back(hit.passage.text);
    }
    // Leave room for the decode budget when trimming passages.
    const int prompt_budget = std::max(1, max_len - kDecodeBudget);
    AssembledSequence prompt = assemble_fitting(vocab, passages, condition.k, ex.question,
                                                std::nullopt, condition.placement, prompt_budget);
    AssembledSequence scored = assemble_fitting(vocab, passages, condition.k, ex.question,
                                                ex.answers.front(), condition.placement, max_len);
    if (condition.merged) {
      prompt.slots = to_vocab_slots(prompt.slots, vocab);
      scored.slots = to_vocab_slots(scored.slots, vocab);
    }
    const int max_new = std::min(kDecodeBudget, max_len - static_cast<int>(prompt.size()));
    const auto ids = greedy_decode<float>(theta, delta, prompt.slots, max_new, vocab.special().eos);

    auto& r = report.per_example[i];
    r.prediction = vocab.decode(ids);
    r.em = exact_match(r.prediction, ex.answers);
    r.f1 = f1_score(r.prediction, ex.answers);
    r.loss = batch_loss<float>(theta, delta, std::span<const AssembledSequence>(&scored, 1));
  });

  if (!dataset.empty()) {
    for (const auto& r : report.per_example) {
      report.em += r.em;
      report.f1 += r.f1;
      report.loss += r.loss;
    }
    const double n = static_cast<double>(dataset.size());
    report.em /= n;
    report.f1 /= n;
    report.loss /= n;
  }
  return report;
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  char line[160];
  const auto section = [&](bool retrieval, const char* title) {
    bool any = false;
    for (const auto& r : reports) any = any || r.condition.retrieval == retrieval;
    if (!any) return;
    out << title << '\n';
    std::snprintf(line, sizeof(line), "  %-9s %4s %3s %8s %8s %8s\n", "placement", "k", "m",
                  "EM", "F1", "loss");
    out << line;
    for (const auto& r : reports) {
      if (r.condition.retrieval != retrieval) continue;
      std::snprintf(line, sizeof(line), "  %-9s %4d %3d %8.2f %8.2f %8.4f%s\n",
                    std::string(placement_name(r.condition.placement)).c_str(), r.condition.k,
                    r.condition.effective_m(), 100.0 * r.em, 100.0 * r.f1, r.loss,
                    r.condition.merged ? "  (merged)" : "");
      out << line;
    }
  };
  section(true, "with retrieval");
  section(false, "without retrieval");
  return out.str();
}

}  // namespace spring
