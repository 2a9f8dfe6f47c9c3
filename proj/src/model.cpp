// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <type_traits>

#include "spring/error.hpp"
#include "spring/hash.hpp"
#include "spring/parallel.hpp"

namespace spring {

void ModelConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1 ||
      vocab_size < 1) {
    throw config_error("model dimensions must all be >= 1");
  }
  if (d_model % n_heads != 0) throw config_error("d_model must be divisible by n_heads");
  if (virtual_count < 0 || virtual_base < 0 || virtual_base + virtual_count > vocab_size) {
    throw config_error("virtual range does not fit the vocabulary");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},           {"n_layers", n_layers},
          {"n_heads", n_heads},           {"d_ff", d_ff},
          {"max_seq_len", max_seq_len},   {"vocab_size", vocab_size},
          {"virtual_base", virtual_base}, {"virtual_count", virtual_count},
          {"precision", precision == Precision::kF32 ? "f32" : "f64"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.virtual_base = j.value("virtual_base", c.vocab_size);
    c.virtual_count = j.value("virtual_count", c.virtual_count);
    const std::string p = j.value("precision", std::string("f32"));
    if (p == "f32") {
      c.precision = Precision::kF32;
    } else if (p == "f64") {
      c.precision = Precision::kF64;
    } else {
      throw config_error("precision must be f32 or f64");
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  ModelParams<T> p;
  p.config = config;
  p.token_embedding = Matrix<T>::Zero(config.vocab_size, d);
  p.positional_embedding = Matrix<T>::Zero(config.max_seq_len, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& L : p.layers) {
    L.ln1_gain = Matrix<T>::Zero(1, d);
    L.ln1_bias = Matrix<T>::Zero(1, d);
    L.w_qkv = Matrix<T>::Zero(d, 3 * d);
    L.b_qkv = Matrix<T>::Zero(1, 3 * d);
    L.w_out = Matrix<T>::Zero(d, d);
    L.b_out = Matrix<T>::Zero(1, d);
    L.ln2_gain = Matrix<T>::Zero(1, d);
    L.ln2_bias = Matrix<T>::Zero(1, d);
    L.w_fc = Matrix<T>::Zero(d, config.d_ff);
    L.b_fc = Matrix<T>::Zero(1, config.d_ff);
    L.w_proj = Matrix<T>::Zero(config.d_ff, d);
    L.b_proj = Matrix<T>::Zero(1, d);
  }
  p.final_norm_gain = Matrix<T>::Zero(1, d);
  p.final_norm_bias = Matrix<T>::Zero(1, d);
  return p;
}

template <typename T>
std::int64_t ModelParams<T>::parameter_count() const {
  std::int64_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& t) { n += t.size(); });
  return n;
}

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

template <typename T>
using Column = Eigen::Matrix<T, Eigen::Dynamic, 1>;

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
struct NormCache {
  Matrix<T> xhat;
  Column<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                     NormCache<T>* cache) {
  const auto n = x.rows();
  Matrix<T> xhat(n, x.cols());
  Column<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().mean();
    const T r = T(1) / std::sqrt(var + T(kNormEps));
    xhat.row(i) = centered * r;
    rstd(i) = r;
  }
  Matrix<T> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const NormCache<T>& c, const Matrix<T>& gain,
                              Matrix<T>* dgain, Matrix<T>* dbias) {
  if (dgain) {
    *dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    *dbias += dy.colwise().sum();
  }
  const Matrix<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
T gelu(T u) {
  const T t = std::tanh(T(kGeluScale) * (u + T(kGeluCubic) * u * u * u));
  return T(0.5) * u * (T(1) + t);
}

template <typename T>
T gelu_grad(T u) {
  const T t = std::tanh(T(kGeluScale) * (u + T(kGeluCubic) * u * u * u));
  return T(0.5) * (T(1) + t) +
         T(0.5) * u * (T(1) - t * t) * T(kGeluScale) * (T(1) + T(3 * kGeluCubic) * u * u);
}

template <typename T>
struct LayerCache {
  NormCache<T> ln1;
  Matrix<T> normed1;
  Matrix<T> qkv;
  std::vector<Matrix<T>> probs;
  Matrix<T> context;
  NormCache<T> ln2;
  Matrix<T> normed2;
  Matrix<T> pre_act;
  Matrix<T> act;
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  NormCache<T> final_norm;
};

template <typename T>
Matrix<T> embed(const ModelParams<T>& p, std::span<const InputSlot> input, const Matrix<T>& delta) {
  const auto& cfg = p.config;
  if (input.empty()) throw config_error("empty input sequence");
  if (static_cast<int>(input.size()) > cfg.max_seq_len) {
    throw config_error("sequence exceeds max_seq_len");
  }
  if (delta.rows() > 0 && delta.cols() != cfg.d_model) {
    throw config_error("delta width does not match d_model");
  }
  Matrix<T> x(static_cast<Eigen::Index>(input.size()), cfg.d_model);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (const auto* v = std::get_if<VocabSlot>(&input[i])) {
      if (v->id < 0 || v->id >= cfg.vocab_size) {
        throw config_error("token id " + std::to_string(v->id) + " outside the vocabulary");
      }
      x.row(row) = p.token_embedding.row(v->id) + p.positional_embedding.row(row);
    } else {
      const int j = std::get<VirtualSlot>(input[i]).index;
      if (j < 0 || j >= delta.rows()) {
        throw config_error("virtual slot " + std::to_string(j) + " outside delta");
      }
      x.row(row) = delta.row(j) + p.positional_embedding.row(row);
    }
  }
  return x;
}

// Runs the decoder stack and the final norm; returns the normalized hidden
// states the tied output head reads.
template <typename T>
Matrix<T> run_stack(const ModelParams<T>& p, Matrix<T> h, ForwardCache<T>* cache) {
  const auto& cfg = p.config;
  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto n = h.rows();
  if (cache) cache->layers.resize(p.layers.size());

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;

    Matrix<T> normed1 = layer_norm(h, L.ln1_gain, L.ln1_bias, lc ? &lc->ln1 : nullptr);
    Matrix<T> qkv = normed1 * L.w_qkv;
    qkv.rowwise() += L.b_qkv.row(0);

    Matrix<T> context(n, d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto q = qkv.middleCols(head * dh, dh);
      const auto k = qkv.middleCols(d + head * dh, dh);
      const auto v = qkv.middleCols(2 * d + head * dh, dh);
      Matrix<T> s = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        T mx = s(i, 0);
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          sum += s(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = 0;
      }
      context.middleCols(head * dh, dh) = s * v;
      if (lc) lc->probs.push_back(std::move(s));
    }
    Matrix<T> attn = context * L.w_out;
    attn.rowwise() += L.b_out.row(0);
    h += attn;

    Matrix<T> normed2 = layer_norm(h, L.ln2_gain, L.ln2_bias, lc ? &lc->ln2 : nullptr);
    Matrix<T> pre = normed2 * L.w_fc;
    pre.rowwise() += L.b_fc.row(0);
    Matrix<T> act = pre.unaryExpr([](T u) { return gelu(u); });
    Matrix<T> mlp = act * L.w_proj;
    mlp.rowwise() += L.b_proj.row(0);
    h += mlp;

    if (lc) {
      lc->normed1 = std::move(normed1);
      lc->qkv = std::move(qkv);
      lc->context = std::move(context);
      lc->normed2 = std::move(normed2);
      lc->pre_act = std::move(pre);
      lc->act = std::move(act);
    }
  }
  return layer_norm(h, p.final_norm_gain, p.final_norm_bias,
                    cache ? &cache->final_norm : nullptr);
}

// Output head restricted to the non-virtual ids (the leading `virtual_base`
// rows of the tied embedding).
template <typename T>
auto output_rows(const ModelParams<T>& p) {
  return p.token_embedding.topRows(p.config.virtual_base);
}

template <typename T>
Matrix<T> head_logits(const ModelParams<T>& p, const Matrix<T>& hidden) {
  const auto& cfg = p.config;
  Matrix<T> logits(hidden.rows(), cfg.vocab_size);
  logits.leftCols(cfg.virtual_base).noalias() = hidden * output_rows(p).transpose();
  logits.rightCols(cfg.vocab_size - cfg.virtual_base).setConstant(T(kMaskedLogit));
  return logits;
}

template <typename T>
std::vector<Eigen::Index> masked_rows(const AssembledSequence& seq) {
  if (seq.targets.size() != seq.slots.size() || seq.loss_mask.size() != seq.slots.size()) {
    throw config_error("slots, targets and loss_mask lengths differ");
  }
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < seq.loss_mask.size(); ++i) {
    if (seq.loss_mask[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

// Cross-entropy of one row of logits restricted to the first `width`
// columns; fills `probs` with the softmax when given.
template <typename T>
double row_cross_entropy(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row,
                         Eigen::Index width, TokenId target, Matrix<T>* probs) {
  if (target < 0 || target >= width) {
    throw config_error("target id " + std::to_string(target) + " cannot be predicted");
  }
  const auto r = logits.row(row).head(width);
  const T mx = r.maxCoeff();
  const auto ex = (r.array() - mx).exp().eval();
  const double sum = static_cast<double>(ex.sum());
  if (probs) probs->row(row).head(width) = ex / static_cast<T>(sum);
  return std::log(sum) - static_cast<double>(r(target) - mx);
}

template <typename T>
void check_finite(const Matrix<T>& m, const std::string& name) {
  if (!m.allFinite()) throw numeric_error("numeric overflow in " + name);
}

template <typename T>
double sequence_backward(const ModelParams<T>& p, const Matrix<T>& delta,
                         const AssembledSequence& seq, T weight, GradientScope scope,
                         Gradients<T>& g) {
  const auto& cfg = p.config;
  const bool full = scope == GradientScope::kAll;
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  const auto rows = masked_rows<T>(seq);
  if (rows.empty()) return 0.0;

  ForwardCache<T> cache;
  const Matrix<T> hidden = run_stack(p, embed(p, seq.slots, delta), &cache);
  const auto n = hidden.rows();
  const auto m = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index width = cfg.virtual_base;

  Matrix<T> picked(m, d);
  for (Eigen::Index r = 0; r < m; ++r) picked.row(r) = hidden.row(rows[static_cast<std::size_t>(r)]);
  Matrix<T> logits = picked * output_rows(p).transpose();
  Matrix<T> dlogits(m, width);
  double loss_sum = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const TokenId target = seq.targets[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
    loss_sum += row_cross_entropy<T>(logits, r, width, target, &dlogits);
    dlogits(r, target) -= T(1);
  }
  dlogits *= weight;

  Matrix<T> dhidden = Matrix<T>::Zero(n, d);
  const Matrix<T> dpicked = dlogits * output_rows(p);
  for (Eigen::Index r = 0; r < m; ++r) dhidden.row(rows[static_cast<std::size_t>(r)]) = dpicked.row(r);
  if (full) g.theta.token_embedding.topRows(width).noalias() += dlogits.transpose() * picked;

  Matrix<T> dh = layer_norm_backward(dhidden, cache.final_norm, p.final_norm_gain,
                                     full ? &g.theta.final_norm_gain : nullptr,
                                     full ? &g.theta.final_norm_bias : nullptr);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    const auto& lc = cache.layers[li];
    LayerParams<T>* G = full ? &g.theta.layers[li] : nullptr;

    // h_out = h_mid + proj(gelu(fc(ln2(h_mid))))
    if (G) {
      G->w_proj.noalias() += lc.act.transpose() * dh;
      G->b_proj += dh.colwise().sum();
    }
    Matrix<T> dpre = dh * L.w_proj.transpose();
    dpre.array() *= lc.pre_act.unaryExpr([](T u) { return gelu_grad(u); }).array();
    if (G) {
      G->w_fc.noalias() += lc.normed2.transpose() * dpre;
      G->b_fc += dpre.colwise().sum();
    }
    const Matrix<T> dnormed2 = dpre * L.w_fc.transpose();
    dh += layer_norm_backward(dnormed2, lc.ln2, L.ln2_gain, G ? &G->ln2_gain : nullptr,
                              G ? &G->ln2_bias : nullptr);

    // h_mid = h_in + out(attention(ln1(h_in)))
    if (G) {
      G->w_out.noalias() += lc.context.transpose() * dh;
      G->b_out += dh.colwise().sum();
    }
    const Matrix<T> dcontext = dh * L.w_out.transpose();
    Matrix<T> dqkv(n, 3 * d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto q = lc.qkv.middleCols(head * hd, hd);
      const auto k = lc.qkv.middleCols(d + head * hd, hd);
      const auto v = lc.qkv.middleCols(2 * d + head * hd, hd);
      const Matrix<T>& P = lc.probs[static_cast<std::size_t>(head)];
      const auto dout = dcontext.middleCols(head * hd, hd);

      Matrix<T> ds = dout * v.transpose();
      for (Eigen::Index i = 0; i < n; ++i) {
        const T dot = (ds.row(i).array() * P.row(i).array()).sum();
        ds.row(i) = P.row(i).array() * (ds.row(i).array() - dot);
      }
      ds *= scale;
      dqkv.middleCols(head * hd, hd).noalias() = ds * k;
      dqkv.middleCols(d + head * hd, hd).noalias() = ds.transpose() * q;
      dqkv.middleCols(2 * d + head * hd, hd).noalias() = P.transpose() * dout;
    }
    if (G) {
      G->w_qkv.noalias() += lc.normed1.transpose() * dqkv;
      G->b_qkv += dqkv.colwise().sum();
    }
    const Matrix<T> dnormed1 = dqkv * L.w_qkv.transpose();
    dh += layer_norm_backward(dnormed1, lc.ln1, L.ln1_gain, G ? &G->ln1_gain : nullptr,
                              G ? &G->ln1_bias : nullptr);
  }

  for (std::size_t i = 0; i < seq.slots.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (const auto* v = std::get_if<VocabSlot>(&seq.slots[i])) {
      if (full) g.theta.token_embedding.row(v->id) += dh.row(row);
    } else {
      g.delta.row(std::get<VirtualSlot>(seq.slots[i]).index) += dh.row(row);
    }
  }
  if (full) g.theta.positional_embedding.topRows(n) += dh;
  return loss_sum;
}

template <typename T>
std::int64_t count_masked(std::span<const AssembledSequence> batch) {
  std::int64_t total = 0;
  for (const auto& seq : batch) {
    for (bool b : seq.loss_mask) total += b ? 1 : 0;
  }
  if (total == 0) throw config_error("empty loss mask");
  return total;
}

template <typename T>
void add_into(ModelParams<T>& dst, const ModelParams<T>& src) {
  std::vector<const Matrix<T>*> parts;
  src.for_each([&](const std::string&, const Matrix<T>& t) { parts.push_back(&t); });
  std::size_t i = 0;
  dst.for_each([&](const std::string&, Matrix<T>& t) { t += *parts[i++]; });
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = ModelParams<T>::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.for_each([&](const std::string& name, Matrix<T>& t) {
    if (ends_with(name, ".gain")) {
      t.setOnes();
    } else if (ends_with(name, ".bias") || name.find(".b_") != std::string::npos) {
      t.setZero();
    } else {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(normal(rng));
    }
  });
  p.token_embedding.middleRows(config.virtual_base, config.virtual_count).setZero();
  return p;
}

template <typename T>
Matrix<T> forward(const ModelParams<T>& params, std::span<const InputSlot> input,
                  const Matrix<T>& delta) {
  return head_logits(params, run_stack<T>(params, embed(params, input, delta), nullptr));
}

template <typename T>
double loss(const Matrix<T>& logits, std::span<const TokenId> targets,
            const std::vector<bool>& loss_mask) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() ||
      targets.size() != loss_mask.size()) {
    throw config_error("logits, targets and loss_mask lengths differ");
  }
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!loss_mask[i]) continue;
    sum += row_cross_entropy<T>(logits, static_cast<Eigen::Index>(i), logits.cols(), targets[i],
                                nullptr);
    ++count;
  }
  if (count == 0) throw config_error("empty loss mask");
  return sum / static_cast<double>(count);
}

template <typename T>
double batch_loss(const ModelParams<T>& params, const Matrix<T>& delta,
                  std::span<const AssembledSequence> batch) {
  const std::int64_t total = count_masked<T>(batch);
  std::vector<double> sums(batch.size(), 0.0);
  parallel_for(batch.size(), [&](std::size_t b) {
    const auto& seq = batch[b];
    const auto rows = masked_rows<T>(seq);
    if (rows.empty()) return;
    const Matrix<T> hidden = run_stack<T>(params, embed(params, seq.slots, delta), nullptr);
    Matrix<T> picked(static_cast<Eigen::Index>(rows.size()), hidden.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) picked.row(static_cast<Eigen::Index>(r)) = hidden.row(rows[r]);
    const Matrix<T> logits = picked * output_rows(params).transpose();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      sums[b] += row_cross_entropy<T>(logits, static_cast<Eigen::Index>(r), logits.cols(),
                                      seq.targets[static_cast<std::size_t>(rows[r])], nullptr);
    }
  });
  double sum = 0.0;
  for (double s : sums) sum += s;
  return sum / static_cast<double>(total);
}

template <typename T>
Gradients<T> backward(const ModelParams<T>& params, const Matrix<T>& delta,
                      std::span<const AssembledSequence> batch, GradientScope scope) {
  const std::int64_t total = count_masked<T>(batch);
  const T weight = T(1) / static_cast<T>(total);
  const bool full = scope == GradientScope::kAll;

  auto fresh = [&] {
    Gradients<T> g;
    if (full) g.theta = ModelParams<T>::zeros(params.config);
    g.delta = Matrix<T>::Zero(delta.rows(), params.config.d_model);
    return g;
  };

  // Per-example buffers summed in batch order keep the result independent of
  // the worker count.
  std::vector<Gradients<T>> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) {
    parts[b] = fresh();
    parts[b].loss = sequence_backward(params, delta, batch[b], weight, scope, parts[b]);
  });

  Gradients<T> out = fresh();
  out.masked_tokens = total;
  double loss_sum = 0.0;
  for (auto& part : parts) {
    loss_sum += part.loss;
    out.delta += part.delta;
    if (full) add_into(out.theta, part.theta);
  }
  out.loss = loss_sum / static_cast<double>(total);

  if (!std::isfinite(out.loss)) throw numeric_error("numeric overflow in loss");
  check_finite(out.delta, "delta");
  if (full) out.theta.for_each([](const std::string& name, const Matrix<T>& t) { check_finite(t, name); });
  return out;
}

template <typename T>
std::vector<TokenId> greedy_decode(const ModelParams<T>& params, const Matrix<T>& delta,
                                   std::span<const InputSlot> prompt, int max_new, TokenId eos) {
  if (prompt.empty()) throw config_error("empty prompt");
  std::vector<InputSlot> slots(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  const Eigen::Index width = params.config.virtual_base;
  for (int step = 0; step < max_new; ++step) {
    const Matrix<T> hidden = run_stack<T>(params, embed(params, slots, delta), nullptr);
    const Matrix<T> last = hidden.bottomRows(1) * output_rows(params).transpose();
    TokenId best = 0;
    for (Eigen::Index j = 1; j < width; ++j) {
      if (last(0, j) > last(0, best)) best = static_cast<TokenId>(j);
    }
    if (best == eos) break;
    out.push_back(best);
    slots.emplace_back(VocabSlot{best});
  }
  return out;
}

template <typename T>
Container params_to_container(const ModelParams<T>& params) {
  constexpr DType dtype = std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
  Container c;
  c.meta["kind"] = "backbone";
  c.meta["config"] = params.config.to_json();
  params.for_each([&](const std::string& name, const Matrix<T>& t) {
    c.tensors.push_back(TensorRecord::from<T>(name, dtype, {t.rows(), t.cols()},
                                              std::span<const T>(t.data(), static_cast<std::size_t>(t.size()))));
  });
  return c;
}

template <typename T>
ModelParams<T> params_from_container(const Container& c) {
  constexpr DType dtype = std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
  if (c.meta.value("kind", std::string()) != "backbone") {
    throw data_error("unrecognized checkpoint (not a backbone)");
  }
  ModelParams<T> p = ModelParams<T>::zeros(ModelConfig::from_json(c.meta.at("config")));
  p.for_each([&](const std::string& name, Matrix<T>& t) {
    const auto& rec = c.get(name);
    if (rec.dtype != dtype) throw data_error("tensor '" + name + "' has dtype " + std::string(dtype_name(rec.dtype)));
    if (rec.shape != std::vector<std::int64_t>{t.rows(), t.cols()}) {
      throw data_error("shape mismatch for '" + name + "'");
    }
    const auto values = rec.as<T>();
    std::copy(values.begin(), values.end(), t.data());
  });
  return p;
}

template <typename T>
void save_backbone(const ModelParams<T>& params, const std::string& path) {
  write_container(path, kCheckpointMagic, params_to_container(params));
}

template <typename T>
ModelParams<T> load_backbone(const std::string& path) {
  return params_from_container<T>(read_container(path, kCheckpointMagic, "unrecognized checkpoint"));
}

template <typename T>
std::string params_hash(const ModelParams<T>& params) {
  return sha256_hex(encode_container(kCheckpointMagic, params_to_container(params)));
}

#define SPRING_INSTANTIATE_MODEL(T)                                                              \
  template struct ModelParams<T>;                                                                \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                    \
  template Matrix<T> forward<T>(const ModelParams<T>&, std::span<const InputSlot>,              \
                                const Matrix<T>&);                                               \
  template double loss<T>(const Matrix<T>&, std::span<const TokenId>, const std::vector<bool>&); \
  template double batch_loss<T>(const ModelParams<T>&, const Matrix<T>&,                         \
                                std::span<const AssembledSequence>);                             \
  template Gradients<T> backward<T>(const ModelParams<T>&, const Matrix<T>&,                     \
                                    std::span<const AssembledSequence>, GradientScope);          \
  template std::vector<TokenId> greedy_decode<T>(const ModelParams<T>&, const Matrix<T>&,        \
                                                 std::span<const InputSlot>, int, TokenId);      \
  template Container params_to_container<T>(const ModelParams<T>&);                              \
  template ModelParams<T> params_from_container<T>(const Container&);                            \
  template void save_backbone<T>(const ModelParams<T>&, const std::string&);                     \
  template ModelParams<T> load_backbone<T>(const std::string&);                                  \
  template std::string params_hash<T>(const ModelParams<T>&);

SPRING_INSTANTIATE_MODEL(float)
SPRING_INSTANTIATE_MODEL(double)

#undef SPRING_INSTANTIATE_MODEL

}  // namespace spring
