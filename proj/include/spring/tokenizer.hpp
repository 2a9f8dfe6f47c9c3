// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace spring {

using TokenId = std::int32_t;

/// Surface form of a paragraph break. Any whitespace run holding two or more
/// newlines becomes this single token, so "\n\n"-joined passages keep their
/// separator under a word-level tokenizer.
inline constexpr std::string_view kParagraphToken = "\n\n";

/// Lowercases and splits text into word tokens. Whitespace separates tokens,
/// every ASCII punctuation character is a token of its own.
std::vector<std::string> split_words(std::string_view text);

struct SpecialIds {
  TokenId pad = 0;
  TokenId bos = 1;
  TokenId eos = 2;
  TokenId unk = 3;
};

/// Word-level vocabulary with a reserved id range for virtual tokens.
///
/// Layout of the id space: the four special tokens, then content words in
/// descending frequency order, then `virtual_count` reserved ids. Virtual ids
/// have display names "[r1]".."[rN]" but are never produced by encode().
class Vocab {
 public:
  Vocab() = default;

  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins tokens with single spaces, skipping special and virtual ids.
  std::string decode(std::span<const TokenId> ids) const;

  std::optional<TokenId> find(std::string_view token) const;
  /// Id of `token`, or unk when it is not in the vocabulary.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const SpecialIds& special() const { return special_; }
  TokenId virtual_base() const { return virtual_base_; }
  int virtual_count() const { return virtual_count_; }
  TokenId virtual_id(int index) const;
  bool is_virtual(TokenId id) const {
    return id >= virtual_base_ && id < virtual_base_ + virtual_count_;
  }
  bool is_special(TokenId id) const {
    return id == special_.pad || id == special_.bos || id == special_.eos ||
           id == special_.unk;
  }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend Vocab build_vocab(const std::vector<std::string>& texts, int max_size,
                           int n_virtual);

 private:
  void check_invariants() const;

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  SpecialIds special_;
  TokenId virtual_base_ = 0;
  int virtual_count_ = 0;
};

/// Builds a vocabulary holding the `max_size - 4 - n_virtual` most frequent
/// words of `texts` (ties broken by ascending byte order).
Vocab build_vocab(const std::vector<std::string>& texts, int max_size,
                  int n_virtual);

}  // namespace spring
