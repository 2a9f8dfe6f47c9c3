// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spring/pretrain.hpp"
#include "spring/retrieval.hpp"

namespace spring {

/// Instruction used both to initialize virtual tokens and to mark the
/// concise-answer documents the backbone is pretrained on.
inline constexpr std::string_view kAnswerInstruction =
    "According to the previous relevant passages, please answer the following question. "
    "Only return the answer without any other words.";

/// Lead-in the backbone uses when it answers without the instruction.
inline constexpr std::string_view kVerboseAnswerLead = "the answer is";

struct QaExample {
  std::string question;
  std::vector<std::string> answers;
  bool operator==(const QaExample&) const = default;
};

/// One {"question": str, "answers": [str, ...]} object per line. Blank lines
/// are skipped; schema violations report the 1-based line number.
std::vector<QaExample> load_qa_jsonl(const std::string& path);
void write_qa_jsonl(const std::string& path, const std::vector<QaExample>& examples);

struct SyntheticTaskSpec {
  int n_entities = 200;
  int n_relations = 3;
  double distractor_rate = 0.3;
  std::uint64_t seed = 7;
  double held_out_fraction = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticTask {
  std::vector<Passage> corpus;
  std::vector<QaExample> train;
  std::vector<QaExample> held_out;
};

/// Key-value facts rendered as "the <relation> of <entity> is <value>", one
/// passage each, with a fresh gensym value per fact. Questions read
/// "what is the <relation> of <entity> ?". Held-out questions cover facts no
/// training question asks about, so their answers are reachable only through
/// retrieval. Distractor passages mention entities but carry no values.
SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec);

std::string fact_passage(std::string_view relation, std::string_view entity, std::string_view value);
std::string fact_question(std::string_view relation, std::string_view entity);

/// Returns the texts of the top-m passages for a query.
using PassageRetriever = std::function<std::vector<std::string>(const std::string& query, int m)>;

PassageRetriever bm25_retriever(const Bm25Index& index);

inline constexpr int kDefaultInstructionRepeat = 50;

struct PretrainDocSpec {
  int m_min = 1;
  int m_max = 5;
  double instructed_fraction = 0.5;
  int copies = 8;
  /// Share of documents whose answer is swapped for a random substitute.
  double counterfactual_fraction = 1.0;
  /// Instructed documents carry the instruction's words repeated cyclically
  /// to a length drawn from {1..instruction_repeat_max}; 0 keeps it verbatim.
  int instruction_repeat_max = kDefaultInstructionRepeat;
  /// Drop documents whose passages do not contain the answer; their only
  /// lesson would be to memorize it.
  bool require_answer_in_context = true;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PretrainDocSpec from_json(const nlohmann::json& j);
};

/// Language-model documents for backbone pretraining, laid out like a
/// retrieval-augmented prompt: "<R> <Q> the answer is <A>", or with the
/// answer instruction between R and Q, "<R> <instruction> <Q> <A>". R holds
/// the top-m passages (m uniform on {m_min..m_max}) joined by "\n\n" and is
/// the unscored context. In a counterfactual_fraction of the documents whose
/// passages contain the (single-word) answer, that word is replaced by a
/// random entry of `substitutes` in both the passages and the answer.
/// Instructed documents cut the instruction's word cycle at a random length.
std::vector<PretrainDocument> render_pretraining_documents(
    const std::vector<QaExample>& examples, const PassageRetriever& retrieve,
    const PretrainDocSpec& spec, const std::vector<std::string>& substitutes = {});

}  // namespace spring
