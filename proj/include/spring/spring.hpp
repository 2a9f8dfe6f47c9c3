// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spring/data.hpp"
#include "spring/model.hpp"
#include "spring/optim.hpp"
#include "spring/pretrain.hpp"
#include "spring/retrieval.hpp"
#include "spring/sequence.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

inline constexpr std::string_view kDefaultInitPrompt = kAnswerInstruction;
inline constexpr int kDefaultVirtualTokens = 50;

/// Where the virtual block sits relative to retrieved passages R and the
/// question Q.
enum class Placement {
  kPrefixTRQ,  // [T, R, Q]
  kSpringRTQ,  // [R, T, Q]
  kSuffixRQT,  // [R, Q, T]
};

std::string_view placement_name(Placement p);  // "trq" | "rtq" | "rqt"
Placement parse_placement(std::string_view name);

/// The trainable n x d_model table of virtual-token embeddings.
struct VirtualTokenTable {
  Matrix<float> table;

  int n() const { return static_cast<int>(table.rows()); }
  int d_model() const { return static_cast<int>(table.cols()); }
};

/// Rows copied from the backbone embeddings of the encoded prompt, repeated
/// cyclically when the prompt is shorter than n and truncated when longer.
template <typename T>
Matrix<T> prompt_embeddings(const Vocab& vocab, const ModelParams<T>& theta,
                            std::string_view init_prompt, int n);

VirtualTokenTable init_virtual_tokens(const Vocab& vocab, const ModelParams<float>& theta,
                                      std::string_view init_prompt, int n);

/// Uniform draw from {1, ..., n}.
int sample_k(int n, std::mt19937_64& rng);

/// Builds the teacher-forced token stream for one example.
///
/// Layouts (A and the closing eos only when an answer is given):
///   kSpringRTQ  [bos, R, t_0..t_{k-1}, Q, A, eos]
///   kPrefixTRQ  [bos, t_0..t_{k-1}, R, Q, A, eos]
///   kSuffixRQT  [bos, R, Q, t_0..t_{k-1}, A, eos]
/// R is the passages joined by "\n\n". The loss mask covers exactly the
/// answer tokens and the closing eos.
AssembledSequence assemble(const Vocab& vocab, const std::vector<std::string>& passages, int k,
                           std::string_view question, const std::optional<std::string>& answer,
                           Placement placement, int max_seq_len);

/// assemble(), dropping trailing passages until the sequence fits.
AssembledSequence assemble_fitting(const Vocab& vocab, std::vector<std::string> passages, int k,
                                   std::string_view question,
                                   const std::optional<std::string>& answer, Placement placement,
                                   int max_seq_len);

/// Rewrites VirtualSlot j as the reserved vocabulary id virtual_base + j,
/// which is how a merged backbone consumes the same sequence.
std::vector<InputSlot> to_vocab_slots(std::span<const InputSlot> slots, const Vocab& vocab);

struct SpringHyper {
  int n = kDefaultVirtualTokens;
  double lr = 1e-4;
  double warmup_ratio = 0.1;
  int epochs = 3;
  /// Desk scale: 480 training questions at batch 4 give 360 steps.
  int batch_size = 4;
  Placement placement = Placement::kSpringRTQ;
  std::uint64_t seed = 0;
  int m_max = 5;
  /// 0 samples k per example; a positive value always uses that many tokens.
  int fixed_k = 0;
  std::string init_prompt = std::string(kDefaultInitPrompt);

  void validate() const;
  nlohmann::json to_json() const;
  static SpringHyper from_json(const nlohmann::json& j);
};

/// One AdamW step on delta alone; theta is read-only. Returns the masked
/// mean loss of the batch before the update.
double train_step(const ModelParams<float>& theta, VirtualTokenTable& delta,
                  std::span<const AssembledSequence> batch, AdamW<float>& optimizer, double lr);

struct TrainResult {
  VirtualTokenTable delta;
  std::vector<double> losses;
  std::int64_t steps = 0;
};

/// Steps needed for `examples` examples: ceil(examples / batch) * epochs.
std::int64_t planned_steps(std::size_t examples, const SpringHyper& hyper);

/// Full training loop: per example and epoch draw m on {1..m_max}, retrieve
/// the top-m passages, draw k, assemble, batch and step under a linear
/// warmup/decay schedule.
TrainResult train(const ModelParams<float>& theta, const Vocab& vocab,
                  const std::vector<QaExample>& dataset, const Bm25Index& index,
                  const SpringHyper& hyper, const StepCallback& on_step = {});

/// Copy of theta whose reserved embedding rows hold delta.
template <typename T>
ModelParams<T> merge_into_vocab(const ModelParams<T>& theta, const Matrix<T>& delta);

void save_checkpoint(const VirtualTokenTable& delta, const std::string& path,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
/// Negative expectations skip the shape check.
VirtualTokenTable load_checkpoint(const std::string& path, int expected_n = -1,
                                  int expected_d_model = -1);

}  // namespace spring
