// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spring {

struct Passage {
  std::string id;
  std::string text;
  bool operator==(const Passage&) const = default;
};

struct ScoredPassage {
  Passage passage;
  double score = 0.0;
};

struct Posting {
  std::int64_t doc = 0;  // ordinal in corpus order
  std::int64_t tf = 0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// In-memory Okapi BM25 index. Terms use the tokenizer's word splitting.
///
///   idf(t)     = ln((N - df + 0.5) / (df + 0.5) + 1)
///   score(q,d) = sum over distinct t in q of
///                idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))
class Bm25Index {
 public:
  Bm25Index() = default;

  static Bm25Index build(std::vector<Passage> corpus, Bm25Params params = {});

  /// At most `top_m` passages with positive score, by score descending and
  /// passage id ascending on ties.
  std::vector<ScoredPassage> search(std::string_view query, int top_m) const;

  double idf(std::string_view term) const;
  std::int64_t document_frequency(std::string_view term) const;
  std::span<const Posting> postings(std::string_view term) const;

  std::int64_t doc_count() const { return static_cast<std::int64_t>(passages_.size()); }
  double avgdl() const { return avgdl_; }
  std::int64_t doc_len(std::int64_t doc) const { return doc_len_.at(static_cast<std::size_t>(doc)); }
  const std::vector<Passage>& passages() const { return passages_; }
  const Bm25Params& params() const { return params_; }
  std::size_t term_count() const { return postings_.size(); }

  void save(const std::string& path) const;
  static Bm25Index load(const std::string& path);

 private:
  std::vector<Passage> passages_;
  std::vector<std::int64_t> doc_len_;
  double avgdl_ = 0.0;
  Bm25Params params_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline Bm25Index build_index(std::vector<Passage> corpus, Bm25Params params = {}) {
  return Bm25Index::build(std::move(corpus), params);
}

inline std::vector<ScoredPassage> search(const Bm25Index& index, std::string_view query,
                                         int top_m) {
  return index.search(query, top_m);
}

/// One {"id": str, "text": str} object per line; blank lines are skipped.
std::vector<Passage> load_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, const std::vector<Passage>& corpus);

}  // namespace spring
