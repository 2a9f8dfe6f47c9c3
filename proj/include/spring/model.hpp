// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spring/sequence.hpp"
#include "spring/tensor_file.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

enum class Precision { kF32, kF64 };

/// Shape of the decoder-only backbone. The reserved virtual range is part of
/// the vocabulary: its embedding rows stay zero until a merge writes them,
/// and its columns of the output head are pinned to kMaskedLogit.
struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int max_seq_len = 256;
  int vocab_size = 512;
  int virtual_base = 512;
  int virtual_count = 0;
  Precision precision = Precision::kF32;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Logit emitted for reserved virtual ids. Virtual tokens are input-only, so
/// they take no probability mass and can never be decoded.
inline constexpr double kMaskedLogit = -1e9;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pre-norm decoder block. Vectors are stored as 1 x n matrices.
template <typename T>
struct LayerParams {
  Matrix<T> ln1_gain, ln1_bias;
  Matrix<T> w_qkv, b_qkv;    // d x 3d, fused query/key/value
  Matrix<T> w_out, b_out;    // d x d
  Matrix<T> ln2_gain, ln2_bias;
  Matrix<T> w_fc, b_fc;      // d x d_ff
  Matrix<T> w_proj, b_proj;  // d_ff x d
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> token_embedding;       // vocab_size x d, tied with the output head
  Matrix<T> positional_embedding;  // max_seq_len x d
  std::vector<LayerParams<T>> layers;
  Matrix<T> final_norm_gain, final_norm_bias;

  /// All-zero tensors shaped for `config`.
  static ModelParams zeros(const ModelConfig& config);

  /// Visits every tensor in a fixed order as fn(name, tensor). The order is
  /// the checkpoint payload order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::int64_t parameter_count() const;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("positional_embedding"), self.positional_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "ln1.gain", L.ln1_gain);
      fn(p + "ln1.bias", L.ln1_bias);
      fn(p + "attn.w_qkv", L.w_qkv);
      fn(p + "attn.b_qkv", L.b_qkv);
      fn(p + "attn.w_out", L.w_out);
      fn(p + "attn.b_out", L.b_out);
      fn(p + "ln2.gain", L.ln2_gain);
      fn(p + "ln2.bias", L.ln2_bias);
      fn(p + "mlp.w_fc", L.w_fc);
      fn(p + "mlp.b_fc", L.b_fc);
      fn(p + "mlp.w_proj", L.w_proj);
      fn(p + "mlp.b_proj", L.b_proj);
    }
    fn(std::string("final_norm.gain"), self.final_norm_gain);
    fn(std::string("final_norm.bias"), self.final_norm_bias);
  }
};

/// Scaled-normal (std 0.02) weights, zero biases, identity layer norms and
/// zeroed virtual rows. Bit-identical for a given (config, seed).
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Logits (len(input) x vocab_size). VocabSlot rows come from the token
/// embedding, VirtualSlot j from row j of `delta` (which may have zero rows
/// when the input holds no virtual slots).
template <typename T>
Matrix<T> forward(const ModelParams<T>& params, std::span<const InputSlot> input,
                  const Matrix<T>& delta);

/// Mean cross-entropy over the positions where `loss_mask` is set.
template <typename T>
double loss(const Matrix<T>& logits, std::span<const TokenId> targets,
            const std::vector<bool>& loss_mask);

/// Masked mean loss over a batch, forward only. Same reduction as backward().
template <typename T>
double batch_loss(const ModelParams<T>& params, const Matrix<T>& delta,
                  std::span<const AssembledSequence> batch);

enum class GradientScope {
  kAll,        // backbone tensors and delta
  kDeltaOnly,  // skips every weight gradient; theta is left empty
};

template <typename T>
struct Gradients {
  ModelParams<T> theta;
  Matrix<T> delta;
  double loss = 0.0;
  std::int64_t masked_tokens = 0;
};

/// Analytic gradients of the batch's mean masked cross-entropy (token-level
/// mean over every masked position in the batch).
template <typename T>
Gradients<T> backward(const ModelParams<T>& params, const Matrix<T>& delta,
                      std::span<const AssembledSequence> batch,
                      GradientScope scope = GradientScope::kAll);

/// Argmax decoding (ties to the lowest id). Stops after `max_new` tokens or
/// on `eos`, which is not included in the result.
template <typename T>
std::vector<TokenId> greedy_decode(const ModelParams<T>& params, const Matrix<T>& delta,
                                   std::span<const InputSlot> prompt, int max_new,
                                   TokenId eos);

template <typename T>
Container params_to_container(const ModelParams<T>& params);
template <typename T>
ModelParams<T> params_from_container(const Container& c);

template <typename T>
void save_backbone(const ModelParams<T>& params, const std::string& path);
template <typename T>
ModelParams<T> load_backbone(const std::string& path);

/// SHA-256 of the serialized parameters.
template <typename T>
std::string params_hash(const ModelParams<T>& params);

}  // namespace spring
