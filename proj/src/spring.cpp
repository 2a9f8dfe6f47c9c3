// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/spring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spring/error.hpp"

namespace spring {

std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::kPrefixTRQ: return "trq";
    case Placement::kSpringRTQ: return "rtq";
    case Placement::kSuffixRQT: return "rqt";
  }
  return "?";
}

Placement parse_placement(std::string_view name) {
  if (name == "trq") return Placement::kPrefixTRQ;
  if (name == "rtq") return Placement::kSpringRTQ;
  if (name == "rqt") return Placement::kSuffixRQT;
  throw config_error("placement must be one of trq, rtq, rqt");
}

template <typename T>
Matrix<T> prompt_embeddings(const Vocab& vocab, const ModelParams<T>& theta,
                            std::string_view init_prompt, int n) {
  if (n < 1) throw config_error("n must be >= 1");
  const auto ids = vocab.encode(init_prompt);
  if (ids.empty()) throw config_error("empty init prompt");
  Matrix<T> table(n, theta.config.d_model);
  for (int i = 0; i < n; ++i) {
    table.row(i) = theta.token_embedding.row(ids[static_cast<std::size_t>(i) % ids.size()]);
  }
  return table;
}

VirtualTokenTable init_virtual_tokens(const Vocab& vocab, const ModelParams<float>& theta,
                                      std::string_view init_prompt, int n) {
  return {prompt_embeddings(vocab, theta, init_prompt, n)};
}

int sample_k(int n, std::mt19937_64& rng) {
  if (n < 1) throw config_error("n must be >= 1");
  return std::uniform_int_distribution<int>(1, n)(rng);
}

AssembledSequence assemble(const Vocab& vocab, const std::vector<std::string>& passages, int k,
                           std::string_view question, const std::optional<std::string>& answer,
                           Placement placement, int max_seq_len) {
  if (k < 0 || k > vocab.virtual_count()) {
    throw config_error("k=" + std::to_string(k) + " outside [0, " +
                       std::to_string(vocab.virtual_count()) + "]");
  }
  struct Item {
    InputSlot slot;
    Segment segment;
  };
  std::vector<Item> items;
  const auto push_tokens = [&](const std::vector<TokenId>& ids, Segment seg) {
    for (TokenId id : ids) items.push_back({VocabSlot{id}, seg});
  };
  const auto push_virtual = [&] {
    for (int j = 0; j < k; ++j) items.push_back({VirtualSlot{j}, Segment::kVirtual});
  };
  const auto push_retrieved = [&] {
    std::string joined;
    for (std::size_t i = 0; i < passages.size(); ++i) {
      if (i > 0) joined += kParagraphToken;
      joined += passages[i];
    }
    push_tokens(vocab.encode(joined), Segment::kRetrieved);
  };

  items.push_back({VocabSlot{vocab.special().bos}, Segment::kControl});
  switch (placement) {
    case Placement::kSpringRTQ:
      push_retrieved();
      push_virtual();
      push_tokens(vocab.encode(question), Segment::kQuestion);
      break;
    case Placement::kPrefixTRQ:
      push_virtual();
      push_retrieved();
      push_tokens(vocab.encode(question), Segment::kQuestion);
      break;
    case Placement::kSuffixRQT:
      push_retrieved();
      push_tokens(vocab.encode(question), Segment::kQuestion);
      push_virtual();
      break;
  }
  if (answer) {
    push_tokens(vocab.encode(*answer), Segment::kAnswer);
    items.push_back({VocabSlot{vocab.special().eos}, Segment::kAnswer});
  }

  // With an answer the closing eos is a target only, never an input.
  const std::size_t len = answer ? items.size() - 1 : items.size();
  if (static_cast<int>(len) > max_seq_len) throw config_error("sequence exceeds max_seq_len");

  AssembledSequence seq;
  seq.slots.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    seq.slots.push_back(items[i].slot);
    seq.segments.push_back(items[i].segment);
    const bool has_next = i + 1 < items.size();
    const auto* next = has_next ? std::get_if<VocabSlot>(&items[i + 1].slot) : nullptr;
    seq.targets.push_back(next ? next->id : vocab.special().pad);
    seq.loss_mask.push_back(next && items[i + 1].segment == Segment::kAnswer);
  }
  return seq;
}

AssembledSequence assemble_fitting(const Vocab& vocab, std::vector<std::string> passages, int k,
                                   std::string_view question,
                                   const std::optional<std::string>& answer, Placement placement,
                                   int max_seq_len) {
  while (true) {
    try {
      return assemble(vocab, passages, k, question, answer, placement, max_seq_len);
    } catch (const Error&) {
      if (passages.empty()) throw;
      passages.pop_back();
    }
  }
}

std::vector<InputSlot> to_vocab_slots(std::span<const InputSlot> slots, const Vocab& vocab) {
  std::vector<InputSlot> out;
  out.reserve(slots.size());
  for (const auto& s : slots) {
    if (const auto* v = std::get_if<VirtualSlot>(&s)) {
      out.emplace_back(VocabSlot{vocab.virtual_id(v->index)});
    } else {
      out.push_back(s);
    }
  }
  return out;
}

void SpringHyper::validate() const {
  if (n < 1) throw config_error("n must be >= 1");
  if (!(lr > 0)) throw config_error("lr must be positive");
  if (warmup_ratio < 0 || warmup_ratio > 1) throw config_error("warmup_ratio must lie in [0, 1]");
  if (epochs < 1 || batch_size < 1) throw config_error("epochs and batch_size must be >= 1");
  if (m_max < 0) throw config_error("m_max must be >= 0");
  if (fixed_k < 0 || fixed_k > n) throw config_error("fixed_k must lie in [0, n]");
}

nlohmann::json SpringHyper::to_json() const {
  return {{"n", n},
          {"lr", lr},
          {"warmup_ratio", warmup_ratio},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"placement", placement_name(placement)},
          {"seed", seed},
          {"m_max", m_max},
          {"fixed_k", fixed_k},
          {"init_prompt", init_prompt}};
}

SpringHyper SpringHyper::from_json(const nlohmann::json& j) {
  SpringHyper h;
  try {
    h.n = j.value("n", h.n);
    h.lr = j.value("lr", h.lr);
    h.warmup_ratio = j.value("warmup_ratio", h.warmup_ratio);
    h.epochs = j.value("epochs", h.epochs);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.placement = parse_placement(j.value("placement", std::string(placement_name(h.placement))));
    h.seed = j.value("seed", h.seed);
    h.m_max = j.value("m_max", h.m_max);
    h.fixed_k = j.value("fixed_k", h.fixed_k);
    h.init_prompt = j.value("init_prompt", h.init_prompt);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("training config: ") + e.what());
  }
  h.validate();
  return h;
}

double train_step(const ModelParams<float>& theta, VirtualTokenTable& delta,
                  std::span<const AssembledSequence> batch, AdamW<float>& optimizer, double lr) {
  Gradients<float> grads;
  try {
    grads = backward<float>(theta, delta.table, batch, GradientScope::kDeltaOnly);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNumeric) throw numeric_error("step diverged");
    throw;
  }
  if (!std::isfinite(grads.loss)) throw numeric_error("step diverged");
  optimizer.begin_step();
  optimizer.update(0, std::span<float>(delta.table.data(), static_cast<std::size_t>(delta.table.size())),
                   std::span<const float>(grads.delta.data(), static_cast<std::size_t>(grads.delta.size())),
                   lr);
  return grads.loss;
}

std::int64_t planned_steps(std::size_t examples, const SpringHyper& hyper) {
  const auto b = static_cast<std::size_t>(hyper.batch_size);
  return static_cast<std::int64_t>((examples + b - 1) / b) * hyper.epochs;
}

TrainResult train(const ModelParams<float>& theta, const Vocab& vocab,
                  const std::vector<QaExample>& dataset, const Bm25Index& index,
                  const SpringHyper& hyper, const StepCallback& on_step) {
  hyper.validate();
  if (dataset.empty()) throw data_error("empty training set");
  if (vocab.virtual_count() != hyper.n || theta.config.virtual_count != hyper.n) {
    throw config_error("virtual range mismatch: vocab reserves " +
                       std::to_string(vocab.virtual_count()) + " ids, n=" + std::to_string(hyper.n));
  }

  TrainResult result;
  result.delta = init_virtual_tokens(vocab, theta, hyper.init_prompt, hyper.n);
  const std::int64_t total = planned_steps(dataset.size(), hyper);

  std::mt19937_64 rng(hyper.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  AdamW<float> optimizer;
  std::vector<AssembledSequence> batch;
  std::int64_t step = 0;

  const auto flush = [&] {
    const double lr = linear_schedule(step, total, hyper.warmup_ratio, hyper.lr);
    const double loss = train_step(theta, result.delta, batch, optimizer, lr);
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss, lr);
    ++step;
    batch.clear();
  };

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& ex = dataset[idx];
      const int m = hyper.m_max > 0 ? std::uniform_int_distribution<int>(1, hyper.m_max)(rng) : 0;
      const int k = hyper.fixed_k > 0 ? hyper.fixed_k : sample_k(hyper.n, rng);
      std::vector<std::string> passages;
      if (m > 0) {
        for (const auto& hit : index.search(ex.question, m)) passages.push_back(hit.passage.text);
      }
      batch.push_back(assemble_fitting(vocab, std::move(passages), k, ex.question,
                                       ex.answers.front(), hyper.placement,
                                       theta.config.max_seq_len));
      if (static_cast<int>(batch.size()) == hyper.batch_size) flush();
    }
    if (!batch.empty()) flush();
  }
  result.steps = step;
  return result;
}

template <typename T>
ModelParams<T> merge_into_vocab(const ModelParams<T>& theta, const Matrix<T>& delta) {
  const auto& cfg = theta.config;
  if (delta.rows() != cfg.virtual_count || delta.cols() != cfg.d_model) {
    throw config_error("virtual range mismatch: backbone reserves " +
                       std::to_string(cfg.virtual_count) + " rows, delta has " +
                       std::to_string(delta.rows()));
  }
  ModelParams<T> merged = theta;
  merged.token_embedding.middleRows(cfg.virtual_base, cfg.virtual_count) = delta;
  return merged;
}

void save_checkpoint(const VirtualTokenTable& delta, const std::string& path,
                     const nlohmann::json& extra_meta) {
  Container c;
  c.meta = extra_meta;
  c.meta["kind"] = "virtual_tokens";
  c.meta["n"] = delta.n();
  c.meta["d_model"] = delta.d_model();
  c.tensors.push_back(TensorRecord::from<float>(
      "delta", DType::kF32, {delta.table.rows(), delta.table.cols()},
      std::span<const float>(delta.table.data(), static_cast<std::size_t>(delta.table.size()))));
  write_container(path, kCheckpointMagic, c);
}

VirtualTokenTable load_checkpoint(const std::string& path, int expected_n, int expected_d_model) {
  const Container c = read_container(path, kCheckpointMagic, "unrecognized checkpoint");
  if (c.meta.value("kind", std::string()) != "virtual_tokens") {
    throw data_error("unrecognized checkpoint (not a virtual-token table)");
  }
  const auto& rec = c.get("delta");
  if (rec.dtype != DType::kF32 || rec.shape.size() != 2) {
    throw data_error("unrecognized checkpoint (bad delta tensor)");
  }
  const int n = static_cast<int>(rec.shape[0]);
  const int d = static_cast<int>(rec.shape[1]);
  if (c.meta.value("n", -1) != n || c.meta.value("d_model", -1) != d) {
    throw data_error("unrecognized checkpoint (manifest shape disagrees with payload)");
  }
  if ((expected_n >= 0 && n != expected_n) || (expected_d_model >= 0 && d != expected_d_model)) {
    throw config_error("shape mismatch: checkpoint holds " + std::to_string(n) + "x" +
                       std::to_string(d));
  }
  VirtualTokenTable out{Matrix<float>(n, d)};
  const auto values = rec.as<float>();
  std::copy(values.begin(), values.end(), out.table.data());
  return out;
}

template Matrix<float> prompt_embeddings<float>(const Vocab&, const ModelParams<float>&,
                                                std::string_view, int);
template Matrix<double> prompt_embeddings<double>(const Vocab&, const ModelParams<double>&,
                                                  std::string_view, int);
template ModelParams<float> merge_into_vocab<float>(const ModelParams<float>&, const Matrix<float>&);
template ModelParams<double> merge_into_vocab<double>(const ModelParams<double>&,
                                                      const Matrix<double>&);

}  // namespace spring
