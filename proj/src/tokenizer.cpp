// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "spring/error.hpp"

namespace spring {
namespace {

constexpr std::string_view kSpecialNames[] = {"<pad>", "<bos>", "<eos>",
                                              "<unk>"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)); }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      flush();
      int newlines = 0;
      while (i < text.size() && is_space(text[i])) {
        if (text[i] == '\n') ++newlines;
        ++i;
      }
      if (newlines >= 2) out.emplace_back(kParagraphToken);
      continue;
    }
    if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    ++i;
  }
  flush();
  return out;
}

Vocab build_vocab(const std::vector<std::string>& texts, int max_size,
                  int n_virtual) {
  if (n_virtual < 0) throw config_error("n_virtual must be non-negative");
  if (max_size < 4 + n_virtual) throw config_error("vocab budget exhausted");

  std::map<std::string, std::int64_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  if (counts.empty()) throw data_error("empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(),
                                                           counts.end());
  // std::map iteration is already ascending by token, so a stable sort on
  // frequency alone yields the lexicographic tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const std::size_t budget = static_cast<std::size_t>(max_size - 4 - n_virtual);
  if (ranked.size() > budget) ranked.resize(budget);

  Vocab v;
  for (auto name : kSpecialNames) v.id_to_token_.emplace_back(name);
  for (auto& [token, count] : ranked) {
    v.token_to_id_.emplace(token, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(token);
  }
  v.virtual_base_ = static_cast<TokenId>(v.id_to_token_.size());
  v.virtual_count_ = n_virtual;
  for (int j = 0; j < n_virtual; ++j) {
    v.id_to_token_.push_back("[r" + std::to_string(j + 1) + "]");
  }
  v.check_invariants();
  return v;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= size()) throw config_error("unknown id " + std::to_string(id));
    if (is_special(id) || is_virtual(id)) continue;
    if (!out.empty()) out.push_back(' ');
    out += id_to_token_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  return find(token).value_or(special_.unk);
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw config_error("unknown id " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenId Vocab::virtual_id(int index) const {
  if (index < 0 || index >= virtual_count_) {
    throw config_error("virtual index " + std::to_string(index) + " out of range");
  }
  return virtual_base_ + index;
}

void Vocab::check_invariants() const {
  if (virtual_base_ + virtual_count_ != size()) {
    throw data_error("vocab: virtual range must close the id space");
  }
  if (token_to_id_.size() + 4 != static_cast<std::size_t>(virtual_base_)) {
    throw data_error("vocab: token map and id list disagree");
  }
  for (const auto& [token, id] : token_to_id_) {
    if (id < 4 || id >= virtual_base_ || id_to_token_[static_cast<std::size_t>(id)] != token) {
      throw data_error("vocab: token map and id list disagree");
    }
  }
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j;
  j["tokens"] = std::vector<std::string>(id_to_token_.begin(),
                                         id_to_token_.begin() + virtual_base_);
  j["special"] = {{"pad", special_.pad},
                  {"bos", special_.bos},
                  {"eos", special_.eos},
                  {"unk", special_.unk}};
  j["virtual_base"] = virtual_base_;
  j["virtual_count"] = virtual_count_;
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  try {
    v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
    const auto& s = j.at("special");
    v.special_ = {s.at("pad").get<TokenId>(), s.at("bos").get<TokenId>(),
                  s.at("eos").get<TokenId>(), s.at("unk").get<TokenId>()};
    v.virtual_base_ = j.at("virtual_base").get<TokenId>();
    v.virtual_count_ = j.at("virtual_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("vocab: ") + e.what());
  }
  if (v.special_.pad != 0 || v.special_.bos != 1 || v.special_.eos != 2 ||
      v.special_.unk != 3 || v.id_to_token_.size() < 4) {
    throw data_error("vocab: special ids must occupy 0..3");
  }
  if (v.virtual_base_ != static_cast<TokenId>(v.id_to_token_.size()) ||
      v.virtual_count_ < 0) {
    throw data_error("vocab: virtual_base must equal the number of named tokens");
  }
  for (std::size_t i = 4; i < v.id_to_token_.size(); ++i) {
    if (!v.token_to_id_.emplace(v.id_to_token_[i], static_cast<TokenId>(i)).second) {
      throw data_error("vocab: duplicate token '" + v.id_to_token_[i] + "'");
    }
  }
  for (int j2 = 0; j2 < v.virtual_count_; ++j2) {
    v.id_to_token_.push_back("[r" + std::to_string(j2 + 1) + "]");
  }
  v.check_invariants();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path);
  out << to_json().dump(1) << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace spring
