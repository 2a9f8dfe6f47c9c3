// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "spring/tokenizer.hpp"

namespace spring {

/// An ordinary vocabulary token, embedded from the backbone's table.
struct VocabSlot {
  TokenId id = 0;
  bool operator==(const VocabSlot&) const = default;
  auto operator<=>(const VocabSlot&) const = default;
};

/// The j-th trainable virtual token, embedded from the caller's delta table.
struct VirtualSlot {
  int index = 0;
  bool operator==(const VirtualSlot&) const = default;
  auto operator<=>(const VirtualSlot&) const = default;
};

using InputSlot = std::variant<VocabSlot, VirtualSlot>;

enum class Segment : std::uint8_t {
  kControl,    // leading bos
  kRetrieved,  // passages and their separators
  kVirtual,
  kQuestion,
  kAnswer,
};

/// Teacher-forced token stream: position i reads slots[i] and is scored
/// against targets[i] when loss_mask[i] is set. All vectors share a length,
/// except `segments`, which is empty for plain language-model documents.
struct AssembledSequence {
  std::vector<InputSlot> slots;
  std::vector<TokenId> targets;
  std::vector<bool> loss_mask;
  std::vector<Segment> segments;

  std::size_t size() const { return slots.size(); }
};

}  // namespace spring
