// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/data.hpp"

#include <algorithm>
#include <set>

#include "spring/tokenizer.hpp"
#include "unit/test_util.hpp"

using namespace spring;
using spring::testing::error_kind;
using spring::testing::error_message;
using spring::testing::TempDir;
using spring::testing::write_text;

TEST_CASE("load_qa_jsonl reads examples and skips blank lines") {
  TempDir dir;
  write_text(dir.file("qa.jsonl"),
             "{\"question\": \"q1\", \"answers\": [\"a\", \"b\"]}\n\n"
             "{\"question\": \"q2\", \"answers\": [\"c\"], \"extra\": 1}\n");
  const auto qa = load_qa_jsonl(dir.file("qa.jsonl"));
  REQUIRE(qa.size() == 2);
  CHECK(qa[0] == QaExample{"q1", {"a", "b"}});
  CHECK(qa[1].answers == std::vector<std::string>{"c"});

  write_qa_jsonl(dir.file("out.jsonl"), qa);
  CHECK(load_qa_jsonl(dir.file("out.jsonl")) == qa);
}

TEST_CASE("load_qa_jsonl reports schema errors with line numbers") {
  TempDir dir;
  const auto bad = [&](const std::string& body) {
    write_text(dir.file("bad.jsonl"), body);
    return error_message([&] { load_qa_jsonl(dir.file("bad.jsonl")); });
  };
  CHECK(bad("{\"question\": \"q\", \"answers\": [\"a\"]}\n{\"answers\": [\"a\"]}\n").find(":2: schema error") !=
        std::string::npos);
  CHECK(bad("{\"question\": \"q\", \"answers\": []}\n").find(":1:") != std::string::npos);
  CHECK(bad("{\"question\": \"q\", \"answers\": \"a\"}\n").find("schema error") != std::string::npos);
  CHECK(bad("not json\n").find("schema error") != std::string::npos);
  CHECK(bad("[1, 2]\n").find("schema error") != std::string::npos);
  CHECK(error_kind([&] { load_qa_jsonl(dir.file("missing.jsonl")); }) == ErrorKind::kData);
}

TEST_CASE("synthetic task structure") {
  SyntheticTaskSpec spec;
  const auto task = generate_synthetic_task(spec);
  const std::size_t facts = 200 * 3;
  CHECK(task.corpus.size() == facts + 180);
  CHECK(task.held_out.size() == 120);
  CHECK(task.train.size() == 480);

  std::set<std::string> values, ids, questions;
  std::set<std::string> passages;
  for (const auto& p : task.corpus) {
    CHECK(ids.insert(p.id).second);
    passages.insert(p.text);
  }
  for (const auto* split : {&task.train, &task.held_out}) {
    for (const auto& ex : *split) {
      REQUIRE(ex.answers.size() == 1);
      const auto& v = ex.answers.front();
      CHECK(v.size() == 6);
      CHECK(values.insert(v).second);
      CHECK(questions.insert(ex.question).second);
      // The question names exactly one fact, and that fact is in the corpus.
      const auto words = split_words(ex.question);
      REQUIRE(words.size() == 7);
      CHECK(passages.count(fact_passage(words[3], words[5], v)) == 1);
    }
  }
}

TEST_CASE("synthetic task is deterministic and seed dependent") {
  SyntheticTaskSpec spec;
  spec.n_entities = 30;
  const auto a = generate_synthetic_task(spec);
  const auto b = generate_synthetic_task(spec);
  CHECK(a.corpus == b.corpus);
  CHECK(a.train == b.train);
  CHECK(a.held_out == b.held_out);
  spec.seed = 8;
  CHECK(generate_synthetic_task(spec).train != a.train);
}

TEST_CASE("synthetic task edge cases") {
  SyntheticTaskSpec spec;
  spec.n_entities = 1;
  spec.n_relations = 1;
  spec.distractor_rate = 0.0;
  const auto t = generate_synthetic_task(spec);
  CHECK(t.corpus.size() == 1);
  CHECK(t.train.size() + t.held_out.size() == 1);
  spec.n_entities = 0;
  CHECK(error_kind([&] { generate_synthetic_task(spec); }) == ErrorKind::kConfig);
  spec.n_entities = 5;
  spec.held_out_fraction = 1.0;
  CHECK(error_kind([&] { generate_synthetic_task(spec); }) == ErrorKind::kConfig);
}

TEST_CASE("bm25 retrieval finds the fact for every question") {
  SyntheticTaskSpec spec;
  spec.n_entities = 60;
  const auto task = generate_synthetic_task(spec);
  const auto index = build_index(task.corpus);
  const auto retrieve = bm25_retriever(index);
  int hit = 0;
  for (const auto& ex : task.held_out) {
    const auto top = retrieve(ex.question, 1);
    REQUIRE(top.size() == 1);
    hit += top.front().find(ex.answers.front()) != std::string::npos;
  }
  CHECK(hit == static_cast<int>(task.held_out.size()));
  CHECK(retrieve("anything", 0).empty());
}

TEST_CASE("pretraining documents") {
  SyntheticTaskSpec spec;
  spec.n_entities = 20;
  const auto task = generate_synthetic_task(spec);
  const auto index = build_index(task.corpus);
  PretrainDocSpec docs;
  docs.copies = 3;
  docs.counterfactual_fraction = 0.0;
  docs.require_answer_in_context = false;
  const auto plain = render_pretraining_documents(task.train, bm25_retriever(index), docs);
  REQUIRE(plain.size() == 3 * task.train.size());
  int instructed = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    const auto& ex = task.train[i % task.train.size()];
    const auto& d = plain[i];
    CHECK(!d.context.empty());
    CHECK(d.text.ends_with(" " + ex.answers.front()));
    CHECK(d.text.find(ex.question) != std::string::npos);
    const bool verbose = d.text == ex.question + " the answer is " + ex.answers.front();
    instructed += !verbose;
    // Instructed documents open with a cyclic cut of the instruction.
    if (!verbose) CHECK(d.text.starts_with("according"));
  }
  CHECK(instructed > 0);
  CHECK(instructed < static_cast<int>(plain.size()));

  // Without repetition the instruction appears verbatim.
  docs.instruction_repeat_max = 0;
  for (const auto& d : render_pretraining_documents(task.train, bm25_retriever(index), docs)) {
    if (!d.text.ends_with(" the answer is " + split_words(d.text).back()))
      CHECK(d.text.starts_with(std::string(kAnswerInstruction) + " what is"));
  }
  docs.instruction_repeat_max = kDefaultInstructionRepeat;

  // Counterfactual documents swap the answer consistently.
  docs.counterfactual_fraction = 1.0;
  const std::vector<std::string> subs = {"zzzzzz"};
  const auto cf = render_pretraining_documents(task.train, bm25_retriever(index), docs, subs);
  int swapped = 0;
  for (std::size_t i = 0; i < cf.size(); ++i) {
    const auto& ex = task.train[i % task.train.size()];
    if (cf[i].text.ends_with(" zzzzzz")) {
      ++swapped;
      CHECK(cf[i].context.find(ex.answers.front()) == std::string::npos);
      CHECK(cf[i].context.find("zzzzzz") != std::string::npos);
    } else {
      CHECK(cf[i].context.find(ex.answers.front()) == std::string::npos);
    }
  }
  CHECK(swapped > static_cast<int>(cf.size()) / 2);

  // Unanswerable documents are dropped; the rest keep their answer in context.
  docs.require_answer_in_context = true;
  const auto answerable = render_pretraining_documents(task.train, bm25_retriever(index), docs, subs);
  CHECK(answerable.size() <= cf.size());
  CHECK(answerable.size() > cf.size() / 2);
  for (const auto& d : answerable) {
    const auto answer = split_words(d.text).back();
    const auto words = split_words(d.context);
    CHECK(std::find(words.begin(), words.end(), answer) != words.end());
  }
  docs.require_answer_in_context = false;

  // Same seed, same documents.
  const auto again = render_pretraining_documents(task.train, bm25_retriever(index), docs, subs);
  for (std::size_t i = 0; i < cf.size(); ++i) {
    CHECK(cf[i].context == again[i].context);
    CHECK(cf[i].text == again[i].text);
  }

  nlohmann::json bad = docs.to_json();
  bad["m_min"] = 7;
  CHECK(error_kind([&] { PretrainDocSpec::from_json(bad); }) == ErrorKind::kConfig);
  CHECK(PretrainDocSpec::from_json(docs.to_json()).to_json() == docs.to_json());
}
