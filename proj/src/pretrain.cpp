// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spring/error.hpp"
#include "spring/optim.hpp"

namespace spring {

nlohmann::json PretrainHyper::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"warmup_ratio", warmup_ratio},
          {"weight_decay", weight_decay}};
}

PretrainHyper PretrainHyper::from_json(const nlohmann::json& j) {
  PretrainHyper h;
  try {
    h.steps = j.value("steps", h.steps);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.lr = j.value("lr", h.lr);
    h.warmup_ratio = j.value("warmup_ratio", h.warmup_ratio);
    h.weight_decay = j.value("weight_decay", h.weight_decay);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("pretrain config: ") + e.what());
  }
  if (h.steps < 1 || h.batch_size < 1 || h.lr <= 0 || h.warmup_ratio < 0 || h.warmup_ratio > 1) {
    throw config_error("pretrain config: steps, batch_size and lr must be positive");
  }
  return h;
}

std::vector<std::vector<TokenId>> tokenize_documents(const Vocab& vocab,
                                                     const std::vector<std::string>& texts,
                                                     int max_seq_len) {
  std::vector<std::vector<TokenId>> docs;
  docs.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<TokenId> doc{vocab.special().bos};
    const auto ids = vocab.encode(text);
    doc.insert(doc.end(), ids.begin(), ids.end());
    doc.push_back(vocab.special().eos);
    if (static_cast<int>(doc.size()) > max_seq_len + 1) doc.resize(static_cast<std::size_t>(max_seq_len) + 1);
    docs.push_back(std::move(doc));
  }
  return docs;
}

AssembledSequence document_sequence(std::span<const TokenId> doc, std::size_t scored_from) {
  if (doc.size() < 2) throw config_error("document needs at least two tokens");
  if (scored_from < 1 || scored_from >= doc.size()) throw config_error("document has no scored tokens");
  AssembledSequence seq;
  for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
    seq.slots.emplace_back(VocabSlot{doc[i]});
    seq.targets.push_back(doc[i + 1]);
    seq.loss_mask.push_back(i + 1 >= scored_from);
  }
  return seq;
}

namespace {

struct ScoredDocument {
  std::vector<TokenId> ids;
  std::size_t scored_from = 1;
};

}  // namespace

PretrainResult pretrain_backbone(const ModelConfig& config, const Vocab& vocab,
                                 const std::vector<std::string>& texts,
                                 const PretrainHyper& hyper, std::uint64_t seed,
                                 const StepCallback& on_step) {
  std::vector<PretrainDocument> docs;
  docs.reserve(texts.size());
  for (const auto& t : texts) docs.push_back({std::string(), t});
  return pretrain_backbone(config, vocab, docs, hyper, seed, on_step);
}

PretrainResult pretrain_backbone(const ModelConfig& config, const Vocab& vocab,
                                 const std::vector<PretrainDocument>& raw_docs,
                                 const PretrainHyper& hyper, std::uint64_t seed,
                                 const StepCallback& on_step) {
  if (config.vocab_size != vocab.size() || config.virtual_base != vocab.virtual_base() ||
      config.virtual_count != vocab.virtual_count()) {
    throw config_error("model config does not match the vocabulary");
  }
  if (raw_docs.empty()) throw data_error("empty corpus");
  std::vector<ScoredDocument> docs;
  docs.reserve(raw_docs.size());
  for (const auto& raw : raw_docs) {
    ScoredDocument d;
    d.ids.push_back(vocab.special().bos);
    const auto context = vocab.encode(raw.context);
    const auto text = vocab.encode(raw.text);
    d.ids.insert(d.ids.end(), context.begin(), context.end());
    d.scored_from = d.ids.size();
    d.ids.insert(d.ids.end(), text.begin(), text.end());
    d.ids.push_back(vocab.special().eos);
    if (d.ids.size() > static_cast<std::size_t>(config.max_seq_len) + 1) {
      d.ids.resize(static_cast<std::size_t>(config.max_seq_len) + 1);
    }
    if (d.scored_from >= d.ids.size()) throw config_error("pretraining document context exceeds max_seq_len");
    docs.push_back(std::move(d));
  }

  PretrainResult result;
  result.params = init_params<float>(config, seed);
  auto& params = result.params;

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  AdamW<float> opt(AdamWConfig{.weight_decay = hyper.weight_decay});
  const Matrix<float> no_delta(0, config.d_model);
  std::vector<AssembledSequence> batch;
  for (std::int64_t step = 0; step < hyper.steps; ++step) {
    batch.clear();
    for (int b = 0; b < hyper.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& d = docs[order[cursor++]];
      batch.push_back(document_sequence(d.ids, d.scored_from));
    }

    Gradients<float> grads;
    try {
      grads = backward<float>(params, no_delta, batch, GradientScope::kAll);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNumeric) throw numeric_error("pretraining diverged");
      throw;
    }
    if (!std::isfinite(grads.loss)) throw numeric_error("pretraining diverged");

    const double lr = linear_schedule(step, hyper.steps, hyper.warmup_ratio, hyper.lr);
    opt.begin_step();
    std::vector<Matrix<float>*> grad_tensors;
    grads.theta.for_each([&](const std::string&, Matrix<float>& t) { grad_tensors.push_back(&t); });
    std::size_t slot = 0;
    params.for_each([&](const std::string&, Matrix<float>& t) {
      const Matrix<float>& g = *grad_tensors[slot];
      opt.update(slot, std::span<float>(t.data(), static_cast<std::size_t>(t.size())),
                 std::span<const float>(g.data(), static_cast<std::size_t>(g.size())), lr);
      ++slot;
    });
    // Reserved rows get no gradient (encode never emits them and the output
    // head skips them), so they stay zero.
    result.losses.push_back(grads.loss);
    if (on_step) on_step(step, grads.loss, lr);
  }
  result.initial_loss = result.losses.front();
  result.final_loss = result.losses.back();
  return result;
}

template <typename T>
double perplexity(const ModelParams<T>& params, const std::vector<std::vector<TokenId>>& docs) {
  std::vector<AssembledSequence> seqs;
  for (const auto& d : docs) {
    if (d.size() >= 2) seqs.push_back(document_sequence(d));
  }
  const Matrix<T> no_delta(0, params.config.d_model);
  return std::exp(batch_loss<T>(params, no_delta, seqs));
}

template double perplexity<float>(const ModelParams<float>&, const std::vector<std::vector<TokenId>>&);
template double perplexity<double>(const ModelParams<double>&, const std::vector<std::vector<TokenId>>&);

}  // namespace spring
