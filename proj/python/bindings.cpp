// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "spring/cli.hpp"
#include "spring/data.hpp"
#include "spring/error.hpp"
#include "spring/eval.hpp"
#include "spring/hash.hpp"
#include "spring/retrieval.hpp"
#include "spring/tokenizer.hpp"

namespace py = pybind11;
using namespace spring;

namespace {

py::list qa_list(const std::vector<QaExample>& xs) {
  py::list out;
  for (const auto& x : xs) out.append(py::dict(py::arg("question") = x.question, py::arg("answers") = x.answers));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Retrieval-augmented virtual-token tuning toolkit";

  py::register_exception<Error>(m, "SpringError", PyExc_RuntimeError);

  py::class_<Vocab>(m, "Vocab")
      .def_static("build", &build_vocab, py::arg("texts"), py::arg("max_size"), py::arg("n_virtual"))
      .def_static("load", &Vocab::load, py::arg("path"))
      .def("save", &Vocab::save, py::arg("path"))
      .def("encode", &Vocab::encode, py::arg("text"))
      .def("decode", [](const Vocab& v, const std::vector<TokenId>& ids) { return v.decode(ids); })
      .def("id", &Vocab::id, py::arg("token"))
      .def("token", &Vocab::token, py::arg("id"))
      .def("__len__", &Vocab::size)
      .def_property_readonly("virtual_base", &Vocab::virtual_base)
      .def_property_readonly("virtual_count", &Vocab::virtual_count);

  m.def("split_words", &split_words, py::arg("text"));

  py::class_<Bm25Index>(m, "Bm25Index")
      .def_static(
          "build",
          [](const std::vector<std::pair<std::string, std::string>>& docs, double k1, double b) {
            std::vector<Passage> corpus;
            for (const auto& [id, text] : docs) corpus.push_back({id, text});
            return build_index(std::move(corpus), Bm25Params{k1, b});
          },
          py::arg("docs"), py::arg("k1") = 1.2, py::arg("b") = 0.75)
      .def_static("load", &Bm25Index::load, py::arg("path"))
      .def("save", &Bm25Index::save, py::arg("path"))
      .def(
          "search",
          [](const Bm25Index& idx, const std::string& query, int top_m) {
            std::vector<std::tuple<std::string, std::string, double>> out;
            for (const auto& h : idx.search(query, top_m)) out.emplace_back(h.passage.id, h.passage.text, h.score);
            return out;
          },
          py::arg("query"), py::arg("top_m"))
      .def("idf", &Bm25Index::idf, py::arg("term"))
      .def_property_readonly("doc_count", &Bm25Index::doc_count)
      .def_property_readonly("avgdl", &Bm25Index::avgdl);

  m.def("normalize_answer", &normalize_answer, py::arg("text"));
  m.def("exact_match", &exact_match, py::arg("prediction"), py::arg("answers"));
  m.def("f1_score", &f1_score, py::arg("prediction"), py::arg("answers"));

  m.def(
      "synthetic_task",
      [](int n_entities, int n_relations, double distractor_rate, std::uint64_t seed, double held_out_fraction) {
        SyntheticTaskSpec spec{n_entities, n_relations, distractor_rate, seed, held_out_fraction};
        const auto task = generate_synthetic_task(spec);
        py::list corpus;
        for (const auto& p : task.corpus) corpus.append(py::make_tuple(p.id, p.text));
        return py::dict(py::arg("corpus") = corpus, py::arg("train") = qa_list(task.train),
                        py::arg("held_out") = qa_list(task.held_out));
      },
      py::arg("n_entities") = 200, py::arg("n_relations") = 3, py::arg("distractor_rate") = 0.3,
      py::arg("seed") = 7, py::arg("held_out_fraction") = 0.2);

  m.def("sha256_file", &sha256_file, py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"),
      "Run a `spring` subcommand in-process; returns (exit_code, stdout, stderr).");
}
