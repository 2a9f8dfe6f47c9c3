// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/tokenizer.hpp"

#include <set>

#include "spring/data.hpp"
#include "unit/test_util.hpp"

using namespace spring;
using spring::testing::error_kind;
using spring::testing::error_message;

TEST_CASE("build_vocab keeps specials, frequent words and reserved ids") {
  const auto v = build_vocab({"a a b"}, 8, 2);
  CHECK(v.size() == 8);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<bos>");
  CHECK(v.token(2) == "<eos>");
  CHECK(v.token(3) == "<unk>");
  CHECK(v.token(4) == "a");
  CHECK(v.token(5) == "b");
  CHECK(v.virtual_base() == 6);
  CHECK(v.virtual_count() == 2);
  CHECK(v.is_virtual(6));
  CHECK(v.is_virtual(7));
  CHECK_FALSE(v.find("<unused>").has_value());
}

TEST_CASE("build_vocab orders by frequency") {
  const auto v = build_vocab({"x y", "y"}, 7, 1);
  CHECK(v.id("y") == 4);
  CHECK(v.id("x") == 5);
  CHECK(v.size() == 7);
}

TEST_CASE("build_vocab breaks frequency ties lexicographically and truncates") {
  const auto v = build_vocab({"d c b a", "e e"}, 4 + 3 + 1, 1);
  CHECK(v.token(4) == "e");
  CHECK(v.token(5) == "a");
  CHECK(v.token(6) == "b");
  CHECK_FALSE(v.find("c").has_value());
  CHECK(v.encode("c") == std::vector<TokenId>{v.special().unk});
}

TEST_CASE("build_vocab errors") {
  CHECK(error_message([] { build_vocab({}, 10, 1); }) == "empty corpus");
  CHECK(error_message([] { build_vocab({"  ", ""}, 10, 1); }) == "empty corpus");
  CHECK(error_message([] { build_vocab({"a"}, 5, 2); }) == "vocab budget exhausted");
  CHECK(error_kind([] { build_vocab({"a"}, 5, 2); }) == ErrorKind::kConfig);
}

TEST_CASE("fixture vocabulary fills the budget and round-trips") {
  SyntheticTaskSpec spec;
  spec.n_entities = 400;
  spec.n_relations = 3;
  spec.distractor_rate = 0.0;
  const auto task = generate_synthetic_task(spec);
  std::vector<std::string> lines;
  for (const auto* split : {&task.train, &task.held_out}) {
    for (const auto& ex : *split) {
      if (lines.size() < 1000) lines.push_back(ex.question + " " + ex.answers.front());
    }
  }
  REQUIRE(lines.size() == 1000);
  const auto v = build_vocab(lines, 512, 50);
  CHECK(v.size() == 512);
  CHECK(v.virtual_base() == 462);
  for (TokenId id = 4; id < v.virtual_base(); ++id) {
    const auto& tok = v.token(id);
    CHECK(v.id(tok) == id);
    const TokenId ids[] = {id};
    CHECK(v.decode(ids) == tok);
  }
}

TEST_CASE("build_vocab is deterministic") {
  const std::vector<std::string> texts = {"the cat sat", "on the mat", "the end"};
  CHECK(build_vocab(texts, 20, 3).to_json() == build_vocab(texts, 20, 3).to_json());
}

TEST_CASE("encode examples") {
  const auto v = build_vocab({"cat dog a , ."}, 20, 2);
  CHECK(v.encode("").empty());
  CHECK(v.encode("A a") == std::vector<TokenId>{v.id("a"), v.id("a")});
  CHECK(v.encode("cat, dog") == std::vector<TokenId>{v.id("cat"), v.id(","), v.id("dog")});
  CHECK(v.encode("zebra") == std::vector<TokenId>{v.special().unk});
}

TEST_CASE("split_words rules") {
  CHECK(split_words("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(split_words("a\n\nb") == std::vector<std::string>{"a", "\n\n", "b"});
  CHECK(split_words("a \n \n b") == std::vector<std::string>{"a", "\n\n", "b"});
  CHECK(split_words("a\nb") == std::vector<std::string>{"a", "b"});
  CHECK(split_words("e000's") == std::vector<std::string>{"e000", "'", "s"});
}

TEST_CASE("paragraph separator is a single vocabulary token") {
  const auto v = build_vocab({"x\n\ny"}, 10, 1);
  const auto ids = v.encode("x\n\ny");
  REQUIRE(ids.size() == 3);
  CHECK(v.token(ids[1]) == "\n\n");
}

TEST_CASE("encode never produces reserved or special ids") {
  const auto v = build_vocab({"a b c d e f g"}, 12, 4);
  const auto ids = v.encode("a b c d e f g h <bos> [r1] <eos>");
  for (TokenId id : ids) {
    CHECK_FALSE(v.is_virtual(id));
    if (v.is_special(id)) CHECK(id == v.special().unk);
  }
}

TEST_CASE("decode examples") {
  const auto v = build_vocab({"hi there"}, 10, 2);
  CHECK(v.decode(std::vector<TokenId>{}) == "");
  CHECK(v.decode(std::vector<TokenId>{v.special().bos, v.id("hi"), v.special().eos}) == "hi");
  CHECK(v.decode(std::vector<TokenId>{v.id("hi"), v.virtual_id(0), v.id("there")}) == "hi there");
  CHECK(error_message([&] { v.decode(std::vector<TokenId>{v.size()}); }).starts_with("unknown id"));
  CHECK(error_message([&] { v.decode(std::vector<TokenId>{-1}); }).starts_with("unknown id"));
}

TEST_CASE("decode inverts encode over fixture sentences") {
  const std::vector<std::string> sentences = {
      "The quick brown fox", "jumps   over the lazy dog", "  a  b c  ", "What is the color of e001"};
  const auto v = build_vocab(sentences, 64, 5);
  for (const auto& s : sentences) {
    std::string normalized;
    for (const auto& w : split_words(s)) normalized += (normalized.empty() ? "" : " ") + w;
    CHECK(v.decode(v.encode(s)) == normalized);
  }
}

TEST_CASE("vocab JSON round trip with exact keys") {
  const auto v = build_vocab({"x y z", "y z", "z"}, 9, 2);
  const auto j = v.to_json();
  std::set<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
  CHECK(keys == std::set<std::string>{"tokens", "special", "virtual_base", "virtual_count"});
  CHECK(j["tokens"].size() == static_cast<std::size_t>(v.virtual_base()));
  CHECK(j["special"]["bos"] == 1);

  spring::testing::TempDir dir;
  v.save(dir.file("vocab.json"));
  const auto back = Vocab::load(dir.file("vocab.json"));
  CHECK(back.to_json() == j);
  CHECK(back.size() == v.size());
  CHECK(back.virtual_id(1) == v.virtual_id(1));
  CHECK(back.token(back.virtual_id(1)) == "[r2]");
}

TEST_CASE("vocab loading rejects inconsistent files") {
  spring::testing::TempDir dir;
  spring::testing::write_text(dir.file("bad.json"), "{\"tokens\": [\"<pad>\"]}");
  CHECK(error_kind([&] { Vocab::load(dir.file("bad.json")); }) == ErrorKind::kData);
  CHECK(error_kind([&] { Vocab::load(dir.file("missing.json")); }) == ErrorKind::kData);
}
