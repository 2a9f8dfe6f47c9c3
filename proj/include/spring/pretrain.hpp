// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spring/model.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

struct PretrainHyper {
  int steps = 4000;
  int batch_size = 32;
  double lr = 3e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.1;

  nlohmann::json to_json() const;
  static PretrainHyper from_json(const nlohmann::json& j);
};

struct PretrainResult {
  ModelParams<float> params;
  std::vector<double> losses;  // one per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// A pretraining document. `context` is read but never scored, so the
/// backbone learns to use it without learning to reproduce it.
struct PretrainDocument {
  std::string context;
  std::string text;
};

/// [bos] + encode(text) + [eos], truncated so the model sees at most
/// `max_seq_len` input positions.
std::vector<std::vector<TokenId>> tokenize_documents(const Vocab& vocab,
                                                     const std::vector<std::string>& texts,
                                                     int max_seq_len);

/// Next-token language-model sequence scoring the targets doc[i] for
/// i >= scored_from (every position by default).
AssembledSequence document_sequence(std::span<const TokenId> doc, std::size_t scored_from = 1);

using StepCallback = std::function<void(std::int64_t step, double loss, double lr)>;

/// Full-parameter next-token training of a freshly initialized backbone.
PretrainResult pretrain_backbone(const ModelConfig& config, const Vocab& vocab,
                                 const std::vector<std::string>& texts,
                                 const PretrainHyper& hyper, std::uint64_t seed,
                                 const StepCallback& on_step = {});
PretrainResult pretrain_backbone(const ModelConfig& config, const Vocab& vocab,
                                 const std::vector<PretrainDocument>& docs,
                                 const PretrainHyper& hyper, std::uint64_t seed,
                                 const StepCallback& on_step = {});

/// exp(mean next-token cross-entropy) over all positions of `docs`.
template <typename T>
double perplexity(const ModelParams<T>& params, const std::vector<std::vector<TokenId>>& docs);

}  // namespace spring
