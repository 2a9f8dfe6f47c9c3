// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spring/data.hpp"
#include "spring/model.hpp"
#include "spring/retrieval.hpp"
#include "spring/spring.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

/// SQuAD answer normalization: lowercase, strip ASCII punctuation, drop the
/// articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

int exact_match(std::string_view prediction, const std::vector<std::string>& answers);

/// Token-overlap F1 on normalized tokens, maximized over the gold answers.
/// Both sides empty after normalization scores 1, exactly one empty scores 0.
double f1_score(std::string_view prediction, const std::vector<std::string>& answers);

inline constexpr int kDecodeBudget = 32;

struct EvalCondition {
  Placement placement = Placement::kSpringRTQ;
  int k = kDefaultVirtualTokens;
  int m = 3;
  bool retrieval = true;
  /// Virtual tokens are read as reserved vocabulary ids of a merged backbone.
  bool merged = false;

  /// Passages actually requested: 0 when retrieval is off.
  int effective_m() const { return retrieval ? m : 0; }
  std::string label() const;
  nlohmann::json to_json() const;
};

struct ExampleResult {
  std::string prediction;
  int em = 0;
  double f1 = 0.0;
  double loss = 0.0;  // teacher-forced loss of the first gold answer
};

struct EvalReport {
  EvalCondition condition;
  double em = 0.0;
  double f1 = 0.0;
  double loss = 0.0;
  std::vector<ExampleResult> per_example;

  nlohmann::json to_json() const;
};

/// Retrieves top-m passages (unless retrieval is off or m = 0), assembles
/// the prompt under the condition's placement and k, greedy-decodes up to
/// kDecodeBudget tokens and scores the decoded string. `delta` may be empty
/// for k = 0 or merged conditions.
EvalReport evaluate(const ModelParams<float>& theta, const Matrix<float>& delta,
                    const Vocab& vocab, const std::vector<QaExample>& dataset,
                    const Bm25Index* index, const EvalCondition& condition);

/// Aligned text table, grouped into with-retrieval and without-retrieval
/// sections.
std::string format_report_table(const std::vector<EvalReport>& reports);

}  // namespace spring
