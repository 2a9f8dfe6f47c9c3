// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>

#include "spring/data.hpp"
#include "spring/model.hpp"
#include "spring/pretrain.hpp"
#include "unit/test_util.hpp"

using namespace spring;
using spring::testing::error_message;
using spring::testing::jitter;
using spring::testing::tiny_config;

namespace {

std::vector<InputSlot> vocab_slots(const std::vector<TokenId>& ids) {
  std::vector<InputSlot> s;
  for (TokenId id : ids) s.emplace_back(VocabSlot{id});
  return s;
}

// Straight-line forward transcript over plain vectors, written independently
// of the Eigen implementation.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Matrix<double>& m) {
  Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

void add_bias(Mat& a, const Mat& bias) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
}

Mat norm(const Mat& x, const Mat& gain, const Mat& bias) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * gain[0][j] + bias[0][j];
  }
  return out;
}

Mat oracle_forward(const ModelParams<double>& p, const std::vector<TokenId>& ids) {
  const auto& c = p.config;
  const std::size_t n = ids.size(), d = static_cast<std::size_t>(c.d_model);
  const std::size_t hd = d / static_cast<std::size_t>(c.n_heads);
  const Mat emb = to_mat(p.token_embedding), pos = to_mat(p.positional_embedding);
  Mat x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] = emb[ids[i]][j] + pos[i][j];
  for (const auto& L : p.layers) {
    Mat qkv = matmul(norm(x, to_mat(L.ln1_gain), to_mat(L.ln1_bias)), to_mat(L.w_qkv));
    add_bias(qkv, to_mat(L.b_qkv));
    Mat ctx(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < static_cast<std::size_t>(c.n_heads); ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0;
          for (std::size_t t = 0; t < hd; ++t) dot += qkv[i][h * hd + t] * qkv[j][d + h * hd + t];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t t = 0; t < hd; ++t) ctx[i][h * hd + t] += s[j] / z * qkv[j][2 * d + h * hd + t];
      }
    }
    Mat attn = matmul(ctx, to_mat(L.w_out));
    add_bias(attn, to_mat(L.b_out));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += attn[i][j];
    Mat hidden = matmul(norm(x, to_mat(L.ln2_gain), to_mat(L.ln2_bias)), to_mat(L.w_fc));
    add_bias(hidden, to_mat(L.b_fc));
    for (auto& row : hidden)
      for (auto& u : row)
        u = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
    Mat mlp = matmul(hidden, to_mat(L.w_proj));
    add_bias(mlp, to_mat(L.b_proj));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += mlp[i][j];
  }
  const Mat h = norm(x, to_mat(p.final_norm_gain), to_mat(p.final_norm_bias));
  Mat logits(n, std::vector<double>(static_cast<std::size_t>(c.vocab_size), kMaskedLogit));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t v = 0; v < static_cast<std::size_t>(c.virtual_base); ++v) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += h[i][j] * emb[v][j];
      logits[i][v] = dot;
    }
  return logits;
}

AssembledSequence lm_sequence(const std::vector<InputSlot>& slots, const std::vector<TokenId>& targets,
                              const std::vector<bool>& mask) {
  AssembledSequence s;
  s.slots = slots;
  s.targets = targets;
  s.loss_mask = mask;
  s.segments.assign(slots.size(), Segment::kQuestion);
  return s;
}

template <typename T>
std::string flat_hash(const ModelParams<T>& p) {
  return params_hash(p);
}

}  // namespace

TEST_CASE("init_params is deterministic and seed dependent") {
  ModelConfig c;
  c.vocab_size = 512;
  c.virtual_base = 462;
  c.virtual_count = 50;
  const auto a = init_params<float>(c, 1);
  const auto b = init_params<float>(c, 1);
  const auto other = init_params<float>(c, 2);
  CHECK(flat_hash(a) == flat_hash(b));
  CHECK(flat_hash(a) != flat_hash(other));
  CHECK(a.token_embedding.rows() == 512);
  CHECK(a.token_embedding.cols() == 64);
  CHECK(a.token_embedding.bottomRows(50).isZero(0.0));
  CHECK(a.layers.size() == 2);
  CHECK(a.layers[0].ln1_gain.isOnes(0.0));
  CHECK(a.layers[0].b_qkv.isZero(0.0));
  // std 0.02 weights
  const double sd = std::sqrt(a.layers[0].w_fc.array().square().mean());
  CHECK(sd == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK(error_message([&] { c.validate(); }) == "d_model must be divisible by n_heads");
  ModelConfig ok;
  CHECK(ModelConfig::from_json(ok.to_json()).to_json() == ok.to_json());
}

TEST_CASE("forward shape and errors") {
  const auto c = tiny_config(20, 3);
  auto p = init_params<double>(c, 4);
  const Matrix<double> none(0, c.d_model);
  const auto one = vocab_slots({5});
  const auto logits = forward<double>(p, one, none);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 20);
  // Reserved columns are never predicted.
  CHECK(logits(0, 17) == kMaskedLogit);
  std::vector<TokenId> too_long(static_cast<std::size_t>(c.max_seq_len) + 1, 4);
  CHECK(error_message([&] { forward<double>(p, vocab_slots(too_long), none); }) ==
        "sequence exceeds max_seq_len");
}

TEST_CASE("forward matches a straight-line transcript") {
  auto c = tiny_config(40, 4, 16);
  auto p = init_params<double>(c, 11);
  jitter(p, 12, 0.2);
  const std::vector<TokenId> ids = {1, 7, 9, 30, 4, 4, 12, 35};
  const auto logits = forward<double>(p, vocab_slots(ids), Matrix<double>(0, c.d_model));
  const auto oracle = oracle_forward(p, ids);
  double max_diff = 0;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int v = 0; v < c.vocab_size; ++v)
      max_diff = std::max(max_diff, std::abs(logits(static_cast<Eigen::Index>(i), v) - oracle[i][static_cast<std::size_t>(v)]));
  CHECK(max_diff <= 1e-6);

  // The f32 path follows the same transcript within float precision.
  ModelParams<float> pf;
  pf.config = c;
  pf.config.precision = Precision::kF32;
  auto pf_container = params_to_container(p);
  (void)pf_container;
  pf = ModelParams<float>::zeros(pf.config);
  std::vector<const Matrix<double>*> src;
  p.for_each([&](const std::string&, const Matrix<double>& t) { src.push_back(&t); });
  std::size_t i = 0;
  pf.for_each([&](const std::string&, Matrix<float>& t) { t = src[i++]->cast<float>(); });
  const auto lf = forward<float>(pf, vocab_slots(ids), Matrix<float>(0, c.d_model));
  CHECK((lf.cast<double>().leftCols(36) - logits.leftCols(36)).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("forward is causal") {
  const auto c = tiny_config(30, 2, 16);
  auto p = init_params<float>(c, 3);
  const Matrix<float> none(0, c.d_model);
  const std::vector<TokenId> base = {1, 5, 6, 7, 8, 9};
  const auto full = forward<float>(p, vocab_slots(base), none);
  auto extended = base;
  extended.push_back(11);
  const auto longer = forward<float>(p, vocab_slots(extended), none);
  CHECK(longer.topRows(base.size()) == full);
  // Perturbing position j leaves rows < j unchanged.
  auto perturbed = base;
  perturbed[4] = 20;
  const auto pert = forward<float>(p, vocab_slots(perturbed), none);
  CHECK(pert.topRows(4) == full.topRows(4));
  CHECK(pert.row(4) != full.row(4));
}

TEST_CASE("loss examples") {
  const int V = 7;
  Matrix<double> uniform = Matrix<double>::Constant(3, V, 0.25);
  const std::vector<TokenId> targets = {0, 3, 6};
  CHECK(loss<double>(uniform, targets, {true, true, true}) == doctest::Approx(std::log(V)).epsilon(1e-14));
  CHECK(loss<double>(uniform, targets, {false, true, false}) == doctest::Approx(std::log(V)).epsilon(1e-14));

  Matrix<double> sharp = Matrix<double>::Zero(1, V);
  sharp(0, 2) = 200.0;
  CHECK(loss<double>(sharp, std::vector<TokenId>{2}, {true}) < 1e-60);

  // Hand softmax over five random positions.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0, 2);
  Matrix<double> logits(5, V);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = normal(rng);
  const std::vector<TokenId> t5 = {1, 0, 6, 2, 2};
  const std::vector<bool> m5 = {true, false, true, true, false};
  double sum = 0;
  int count = 0;
  for (int i = 0; i < 5; ++i) {
    if (!m5[i]) continue;
    double z = 0;
    for (int v = 0; v < V; ++v) z += std::exp(logits(i, v));
    sum += -std::log(std::exp(logits(i, t5[i])) / z);
    ++count;
  }
  CHECK(loss<double>(logits, t5, m5) == doctest::Approx(sum / count).epsilon(1e-12));
  CHECK(error_message([&] { loss<double>(logits, t5, std::vector<bool>(5, false)); }) == "empty loss mask");
}

namespace {

// Mixed batch with soft and vocabulary slots for gradient checks.
std::vector<AssembledSequence> fd_batch(const ModelConfig& c) {
  std::vector<AssembledSequence> batch;
  batch.push_back(lm_sequence({VocabSlot{1}, VocabSlot{5}, VirtualSlot{0}, VirtualSlot{1}, VocabSlot{7},
                               VocabSlot{9}},
                              {5, 0, 0, 7, 9, 2}, {true, false, false, true, true, true}));
  batch.push_back(lm_sequence({VocabSlot{1}, VirtualSlot{0}, VocabSlot{4}, VocabSlot{11}},
                              {0, 4, 11, 2}, {false, true, true, true}));
  (void)c;
  return batch;
}

double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("theta gradients match central differences in f64") {
  const auto c = tiny_config(16, 2, 8);
  auto p = init_params<double>(c, 21);
  jitter(p, 22, 0.4);
  Matrix<double> delta(2, c.d_model);
  std::mt19937_64 rng(23);
  std::normal_distribution<double> normal(0, 0.5);
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = normal(rng);
  const auto batch = fd_batch(c);
  CHECK(p.parameter_count() <= 5000);

  const auto g = backward<double>(p, delta, batch, GradientScope::kAll);
  std::vector<Matrix<double>*> grads;
  auto gt = g.theta;
  gt.for_each([&](const std::string&, Matrix<double>& t) { grads.push_back(&t); });

  const double h = 1e-4;
  std::size_t slot = 0;
  double worst = 0;
  std::string worst_name;
  p.for_each([&](const std::string& name, Matrix<double>& t) {
    const Matrix<double>& gm = *grads[slot++];
    REQUIRE(gm.rows() == t.rows());
    REQUIRE(gm.cols() == t.cols());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double up = batch_loss<double>(p, delta, batch);
      t.data()[i] = saved - h;
      const double down = batch_loss<double>(p, delta, batch);
      t.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double e = rel_err(gm.data()[i], numeric);
      if (e > worst) {
        worst = e;
        worst_name = name;
      }
    }
  });
  INFO("worst tensor: " << worst_name);
  CHECK(worst <= 1e-4);
}

TEST_CASE("delta gradient matches central differences; untouched rows are zero") {
  auto c = tiny_config(24, 6, 32);
  auto p = init_params<double>(c, 31);
  jitter(p, 32, 0.2);
  Matrix<double> delta(6, c.d_model);
  std::mt19937_64 rng(33);
  std::normal_distribution<double> normal(0, 0.5);
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = normal(rng);
  std::vector<AssembledSequence> batch;
  batch.push_back(lm_sequence({VocabSlot{1}, VocabSlot{8}, VirtualSlot{0}, VirtualSlot{1}, VirtualSlot{2},
                               VocabSlot{10}, VocabSlot{12}},
                              {8, 0, 0, 0, 12, 14, 2}, {false, false, false, true, true, true, true}));
  const auto g = backward<double>(p, delta, batch, GradientScope::kDeltaOnly);
  const double h = 1e-4;
  double worst = 0;
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index col = 0; col < delta.cols(); ++col) {
      const double saved = delta(r, col);
      delta(r, col) = saved + h;
      const double up = batch_loss<double>(p, delta, batch);
      delta(r, col) = saved - h;
      const double down = batch_loss<double>(p, delta, batch);
      delta(r, col) = saved;
      worst = std::max(worst, rel_err(g.delta(r, col), (up - down) / (2 * h)));
    }
  }
  CHECK(worst <= 1e-4);
  CHECK(g.delta.bottomRows(3).isZero(0.0));
  // kAll and kDeltaOnly agree on delta.
  const auto all = backward<double>(p, delta, batch, GradientScope::kAll);
  CHECK((all.delta - g.delta).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("batches without virtual slots give an exactly zero delta gradient") {
  const auto c = tiny_config(16, 2, 8);
  auto p = init_params<double>(c, 41);
  jitter(p, 42);
  Matrix<double> delta = Matrix<double>::Constant(2, c.d_model, 0.3);
  std::vector<AssembledSequence> batch = {
      lm_sequence({VocabSlot{1}, VocabSlot{4}, VocabSlot{5}}, {4, 5, 2}, {false, true, true})};
  const auto g = backward<double>(p, delta, batch);
  CHECK(g.delta.isZero(0.0));
}

TEST_CASE("duplicated example gives the single-example gradient") {
  const auto c = tiny_config(16, 2, 8);
  auto p = init_params<double>(c, 51);
  jitter(p, 52);
  Matrix<double> delta = Matrix<double>::Constant(2, c.d_model, 0.1);
  const auto one = fd_batch(c);
  const std::vector<AssembledSequence> single = {one[0]};
  const std::vector<AssembledSequence> doubled = {one[0], one[0]};
  const auto g1 = backward<double>(p, delta, single);
  const auto g2 = backward<double>(p, delta, doubled);
  CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-14));
  CHECK((g1.delta - g2.delta).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((g1.theta.layers[1].w_fc - g2.theta.layers[1].w_fc).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("non-finite gradients name the tensor") {
  const auto c = tiny_config(16, 2, 8);
  auto p = init_params<double>(c, 61);
  p.layers[0].w_fc(0, 0) = std::numeric_limits<double>::infinity();
  const auto batch = fd_batch(c);
  Matrix<double> delta = Matrix<double>::Zero(2, c.d_model);
  const auto msg = error_message([&] { backward<double>(p, delta, batch); });
  CHECK(msg.starts_with("numeric overflow"));
  CHECK(spring::testing::error_kind([&] { backward<double>(p, delta, batch); }) == ErrorKind::kNumeric);
}

TEST_CASE("greedy decode basics") {
  const auto c = tiny_config(20, 2, 8, Precision::kF32);
  auto p = init_params<float>(c, 71);
  const Matrix<float> none(0, c.d_model);
  const auto prompt = vocab_slots({1, 5, 6});
  CHECK(greedy_decode<float>(p, none, prompt, 0, 2).empty());
  const auto a = greedy_decode<float>(p, none, prompt, 8, 2);
  const auto b = greedy_decode<float>(p, none, prompt, 8, 2);
  CHECK(a == b);
  for (TokenId id : a) CHECK(id < c.virtual_base);
  // All-equal logits break ties toward the lowest id.
  auto flat = ModelParams<float>::zeros(c);
  flat.final_norm_gain.setOnes();
  CHECK(greedy_decode<float>(flat, none, prompt, 3, 2) == std::vector<TokenId>{0, 0, 0});
}

TEST_CASE("a trained fixture model learns to copy") {
  std::vector<std::string> words = {"apple", "river", "stone", "cloud", "ember", "frost"};
  std::vector<std::string> docs;
  for (const auto& w : words) docs.push_back("copy : " + w + " " + w);
  const auto vocab = build_vocab(docs, 64, 0);
  ModelConfig c = tiny_config(vocab.size(), 0, 16, Precision::kF32);
  PretrainHyper hyper;
  hyper.steps = 300;
  hyper.batch_size = 6;
  hyper.lr = 1e-2;
  const auto result = pretrain_backbone(c, vocab, docs, hyper, 3);
  const Matrix<float> none(0, c.d_model);
  for (const auto& w : words) {
    std::vector<TokenId> ids = {vocab.special().bos};
    for (TokenId id : vocab.encode("copy : " + w)) ids.push_back(id);
    const auto out = greedy_decode<float>(result.params, none, vocab_slots(ids), 4, vocab.special().eos);
    CHECK(vocab.decode(out) == w);
  }
}

TEST_CASE("pretraining lowers loss, beats a unigram model and is deterministic") {
  SyntheticTaskSpec spec;
  spec.n_entities = 200;
  spec.n_relations = 5;
  spec.distractor_rate = 0.0;
  const auto task = generate_synthetic_task(spec);
  std::vector<std::string> train_docs, heldout_docs;
  for (std::size_t i = 0; i < task.corpus.size(); ++i) {
    (i % 10 == 0 ? heldout_docs : train_docs).push_back(task.corpus[i].text);
  }
  REQUIRE(train_docs.size() == 900);
  std::vector<std::string> vocab_texts = train_docs;
  vocab_texts.insert(vocab_texts.end(), heldout_docs.begin(), heldout_docs.end());
  const auto vocab = build_vocab(vocab_texts, 2048, 4);
  ModelConfig c = tiny_config(vocab.size(), 4, 32, Precision::kF32);
  PretrainHyper hyper;
  hyper.steps = 200;
  hyper.batch_size = 16;
  hyper.lr = 3e-3;
  const auto r1 = pretrain_backbone(c, vocab, train_docs, hyper, 9);
  CHECK(r1.final_loss < r1.initial_loss);
  CHECK(r1.losses.size() == 200);

  // Unigram oracle with add-one smoothing over the named vocabulary.
  const auto train_tok = tokenize_documents(vocab, train_docs, c.max_seq_len);
  const auto held_tok = tokenize_documents(vocab, heldout_docs, c.max_seq_len);
  std::map<TokenId, double> counts;
  double total = 0;
  for (const auto& d : train_tok)
    for (std::size_t i = 1; i < d.size(); ++i) {
      counts[d[i]] += 1;
      total += 1;
    }
  const double V = vocab.virtual_base();
  double nll = 0;
  double n = 0;
  for (const auto& d : held_tok)
    for (std::size_t i = 1; i < d.size(); ++i) {
      nll -= std::log((counts[d[i]] + 1) / (total + V));
      n += 1;
    }
  const double unigram_ppl = std::exp(nll / n);
  const double model_ppl = perplexity(r1.params, held_tok);
  INFO("model " << model_ppl << " unigram " << unigram_ppl);
  CHECK(model_ppl < unigram_ppl);

  const auto r2 = pretrain_backbone(c, vocab, train_docs, hyper, 9);
  CHECK(params_hash(r1.params) == params_hash(r2.params));
}

TEST_CASE("unscored context is read but not trained on") {
  const std::vector<TokenId> doc = {1, 5, 6, 7, 2};
  const auto seq = document_sequence(doc, 3);
  CHECK(seq.loss_mask == std::vector<bool>{false, false, true, true});
  CHECK(seq.targets == std::vector<TokenId>{5, 6, 7, 2});
}

TEST_CASE("backbone checkpoint round trip") {
  spring::testing::TempDir dir;
  const auto c = tiny_config(20, 3, 8, Precision::kF32);
  auto p = init_params<float>(c, 81);
  jitter(p, 82);
  save_backbone(p, dir.file("b.ckpt"));
  const auto back = load_backbone<float>(dir.file("b.ckpt"));
  CHECK(params_hash(back) == params_hash(p));
  CHECK(back.config.to_json() == c.to_json());
  auto bytes = read_file_bytes(dir.file("b.ckpt"));
  bytes.resize(bytes.size() / 2);
  write_file_bytes(dir.file("t.ckpt"), bytes);
  CHECK(error_message([&] { load_backbone<float>(dir.file("t.ckpt")); }).starts_with("unrecognized checkpoint"));
}
