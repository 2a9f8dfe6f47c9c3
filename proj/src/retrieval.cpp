// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "spring/error.hpp"
#include "spring/tensor_file.hpp"
#include "spring/tokenizer.hpp"

namespace spring {

Bm25Index Bm25Index::build(std::vector<Passage> corpus, Bm25Params params) {
  if (corpus.empty()) throw data_error("empty corpus");
  if (!(params.k1 > 0) || params.b < 0 || params.b > 1) {
    throw config_error("bm25: require k1 > 0 and 0 <= b <= 1");
  }
  std::unordered_set<std::string> seen;
  for (const auto& p : corpus) {
    if (!seen.insert(p.id).second) throw data_error("duplicate passage id '" + p.id + "'");
    if (p.text.empty()) throw data_error("empty passage text for id '" + p.id + "'");
  }

  Bm25Index index;
  index.params_ = params;
  index.passages_ = std::move(corpus);
  index.doc_len_.reserve(index.passages_.size());
  std::int64_t total = 0;
  for (std::size_t d = 0; d < index.passages_.size(); ++d) {
    std::map<std::string, std::int64_t> tf;
    const auto words = split_words(index.passages_[d].text);
    for (const auto& w : words) ++tf[w];
    for (auto& [term, count] : tf) {
      index.postings_[term].push_back({static_cast<std::int64_t>(d), count});
    }
    index.doc_len_.push_back(static_cast<std::int64_t>(words.size()));
    total += static_cast<std::int64_t>(words.size());
  }
  index.avgdl_ = static_cast<double>(total) / static_cast<double>(index.passages_.size());
  return index;
}

std::span<const Posting> Bm25Index::postings(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  if (it == postings_.end()) return {};
  return it->second;
}

std::int64_t Bm25Index::document_frequency(std::string_view term) const {
  return static_cast<std::int64_t>(postings(term).size());
}

double Bm25Index::idf(std::string_view term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(document_frequency(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::vector<ScoredPassage> Bm25Index::search(std::string_view query, int top_m) const {
  if (top_m < 1) throw config_error("top_m must be >= 1");
  const auto words = split_words(query);
  const std::set<std::string> terms(words.begin(), words.end());

  std::map<std::int64_t, double> scores;
  const double k1 = params_.k1;
  const double b = params_.b;
  for (const auto& term : terms) {
    const auto plist = postings(term);
    if (plist.empty()) continue;
    const double w = idf(term);
    for (const auto& p : plist) {
      const double tf = static_cast<double>(p.tf);
      const double norm = k1 * (1.0 - b + b * static_cast<double>(doc_len_[static_cast<std::size_t>(p.doc)]) / avgdl_);
      scores[p.doc] += w * tf * (k1 + 1.0) / (tf + norm);
    }
  }

  std::vector<ScoredPassage> out;
  out.reserve(scores.size());
  for (const auto& [doc, score] : scores) {
    if (score > 0.0) out.push_back({passages_[static_cast<std::size_t>(doc)], score});
  }
  std::sort(out.begin(), out.end(), [](const ScoredPassage& a, const ScoredPassage& b2) {
    if (a.score != b2.score) return a.score > b2.score;
    return a.passage.id < b2.passage.id;
  });
  if (out.size() > static_cast<std::size_t>(top_m)) out.resize(static_cast<std::size_t>(top_m));
  return out;
}

namespace {

// Concatenated UTF-8 strings plus an (n + 1)-entry offset table.
void pack_strings(Container& c, const std::string& name, const std::vector<std::string>& items) {
  std::vector<std::int64_t> offsets{0};
  std::vector<std::uint8_t> blob;
  for (const auto& s : items) {
    blob.insert(blob.end(), s.begin(), s.end());
    offsets.push_back(static_cast<std::int64_t>(blob.size()));
  }
  c.tensors.push_back(TensorRecord::from<std::uint8_t>(name + ".bytes", DType::kU8,
                                                       {static_cast<std::int64_t>(blob.size())}, blob));
  c.tensors.push_back(TensorRecord::from<std::int64_t>(name + ".offsets", DType::kI64,
                                                       {static_cast<std::int64_t>(offsets.size())}, offsets));
}

std::vector<std::string> unpack_strings(const Container& c, const std::string& name) {
  const auto blob = c.get(name + ".bytes").as<std::uint8_t>();
  const auto offsets = c.get(name + ".offsets").as<std::int64_t>();
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    if (offsets[i] > offsets[i + 1] || offsets[i + 1] > static_cast<std::int64_t>(blob.size())) {
      throw data_error("unrecognized index file (bad string table)");
    }
    out.emplace_back(blob.begin() + offsets[i], blob.begin() + offsets[i + 1]);
  }
  return out;
}

}  // namespace

void Bm25Index::save(const std::string& path) const {
  std::vector<std::string> terms;
  terms.reserve(postings_.size());
  for (const auto& [term, plist] : postings_) terms.push_back(term);
  std::sort(terms.begin(), terms.end());

  std::vector<std::int64_t> offsets{0}, docs, tfs;
  for (const auto& term : terms) {
    for (const auto& p : postings_.at(term)) {
      docs.push_back(p.doc);
      tfs.push_back(p.tf);
    }
    offsets.push_back(static_cast<std::int64_t>(docs.size()));
  }

  std::vector<std::string> ids, texts;
  for (const auto& p : passages_) {
    ids.push_back(p.id);
    texts.push_back(p.text);
  }

  Container c;
  c.meta = {{"kind", "bm25"},
            {"k1", params_.k1},
            {"b", params_.b},
            {"N", doc_count()},
            {"avgdl", avgdl_}};
  pack_strings(c, "passage_ids", ids);
  pack_strings(c, "passage_texts", texts);
  pack_strings(c, "terms", terms);
  const auto n = [](const auto& v) { return std::vector<std::int64_t>{static_cast<std::int64_t>(v.size())}; };
  c.tensors.push_back(TensorRecord::from<std::int64_t>("doc_len", DType::kI64, n(doc_len_), doc_len_));
  c.tensors.push_back(TensorRecord::from<std::int64_t>("posting_offsets", DType::kI64, n(offsets), offsets));
  c.tensors.push_back(TensorRecord::from<std::int64_t>("posting_docs", DType::kI64, n(docs), docs));
  c.tensors.push_back(TensorRecord::from<std::int64_t>("posting_tfs", DType::kI64, n(tfs), tfs));
  write_container(path, kIndexMagic, c);
}

Bm25Index Bm25Index::load(const std::string& path) {
  const Container c = read_container(path, kIndexMagic, "unrecognized index file");
  if (c.meta.value("kind", std::string()) != "bm25") throw data_error("unrecognized index file");

  Bm25Index index;
  index.params_ = {c.meta.at("k1").get<double>(), c.meta.at("b").get<double>()};
  const auto ids = unpack_strings(c, "passage_ids");
  const auto texts = unpack_strings(c, "passage_texts");
  const auto terms = unpack_strings(c, "terms");
  index.doc_len_ = c.get("doc_len").as<std::int64_t>();
  const auto offsets = c.get("posting_offsets").as<std::int64_t>();
  const auto docs = c.get("posting_docs").as<std::int64_t>();
  const auto tfs = c.get("posting_tfs").as<std::int64_t>();
  if (ids.size() != texts.size() || ids.size() != index.doc_len_.size() ||
      offsets.size() != terms.size() + 1 || docs.size() != tfs.size() ||
      offsets.back() != static_cast<std::int64_t>(docs.size())) {
    throw data_error("unrecognized index file (inconsistent tables)");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) index.passages_.push_back({ids[i], texts[i]});
  const auto n_docs = static_cast<std::int64_t>(ids.size());
  for (std::size_t t = 0; t < terms.size(); ++t) {
    auto& plist = index.postings_[terms[t]];
    for (auto i = offsets[t]; i < offsets[t + 1]; ++i) {
      const auto doc = docs[static_cast<std::size_t>(i)];
      if (doc < 0 || doc >= n_docs) throw data_error("unrecognized index file (posting out of range)");
      plist.push_back({doc, tfs[static_cast<std::size_t>(i)]});
    }
  }
  index.avgdl_ = c.meta.at("avgdl").get<double>();
  return index;
}

std::vector<Passage> load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot read " + path);
  std::vector<Passage> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path + ":" + std::to_string(lineno) + ": schema error: " + e.what());
    }
  }
  return out;
}

void write_corpus_jsonl(const std::string& path, const std::vector<Passage>& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path);
  for (const auto& p : corpus) {
    out << nlohmann::json{{"id", p.id}, {"text", p.text}}.dump() << '\n';
  }
}

}  // namespace spring
