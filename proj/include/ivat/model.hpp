#pragma once

// Small post-LN transformer encoder with a 2-way classification head over
// the first ([CLS]) position. Sized for CPU experiments; all math is the
// tensor module's, so every forward stays differentiable end to end,
// including with perturbations added to the summed input embeddings.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ivat/data.hpp"
#include "ivat/error.hpp"
#include "ivat/rng.hpp"
#include "ivat/tensor.hpp"

namespace ivat {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  std::size_t n_classes = 2;
  double dropout_rate = 0.1;
  double init_std = 0.02;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (vocab_size < 5) raise(ErrorKind::config, "model: vocab_size must be at least 5");
    if (d_model == 0 || n_heads == 0) raise(ErrorKind::config, "model: d_model and n_heads must be positive");
    if (d_model % n_heads != 0) raise(ErrorKind::config, "model: d_model must be divisible by n_heads");
    if (d_ff == 0) raise(ErrorKind::config, "model: d_ff must be positive");
    if (max_len < 4) raise(ErrorKind::config, "model: max_len must be at least 4");
    if (max_len > 512) raise(ErrorKind::config, "model: max_len must not exceed 512");
    if (n_classes != 2) raise(ErrorKind::config, "model: n_classes must be 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) raise(ErrorKind::config, "model: dropout_rate must be in [0, 1)");
    if (init_std <= 0.0) raise(ErrorKind::config, "model: init_std must be positive");
  }
};

inline std::size_t param_count(const ModelConfig& c) {
  std::size_t d = c.d_model, ff = c.d_ff;
  std::size_t embed = c.vocab_size * d + c.max_len * d;
  std::size_t attn = 4 * (d * d + d);
  std::size_t norms = 2 * (2 * d);
  std::size_t ffn = (d * ff + ff) + (ff * d + d);
  std::size_t head = d * c.n_classes + c.n_classes;
  return embed + c.n_layers * (attn + norms + ffn) + head;
}

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gain, ln2_bias;
};

struct EncoderModel {
  ModelConfig config;
  Tensor tok_emb;  // [vocab, d]
  Tensor pos_emb;  // [max_len, d]
  std::vector<LayerParams> layers;
  Tensor cls_w;  // [d, n_classes]
  Tensor cls_b;  // [n_classes]

  // Fixed flattening order; the checkpoint payload and the optimizer state
  // both follow it.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out{tok_emb, pos_emb};
    for (const auto& l : layers) {
      for (const Tensor* t : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain,
                              &l.ln1_bias, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias})
        out.push_back(*t);
    }
    out.push_back(cls_w);
    out.push_back(cls_b);
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out{"tok_emb", "pos_emb"};
    static const char* fields[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                                   "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2",
                                   "ln2_gain", "ln2_bias"};
    for (std::size_t i = 0; i < layers.size(); ++i)
      for (const char* f : fields) out.push_back("layer" + std::to_string(i) + "." + f);
    out.push_back("cls_w");
    out.push_back("cls_b");
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  void set_requires_grad(bool b) {
    for (auto& p : parameters()) p.set_requires_grad(b);
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : parameters()) out.push_back(p.value());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    auto params = parameters();
    if (snap.size() != params.size()) raise(ErrorKind::contract, "restore: parameter list size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (snap[i].size() != params[i].size()) raise(ErrorKind::contract, "restore: parameter size mismatch");
      params[i].value() = snap[i];
    }
  }
};

namespace detail {

inline Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(data)).set_requires_grad(true);
}

inline Tensor init_const(Shape shape, double fill) {
  return Tensor::full(std::move(shape), fill).set_requires_grad(true);
}

}  // namespace detail

// Weight matrices and embeddings draw N(0, init_std^2) in parameter order
// (row-major within each tensor); biases start at zero and layer-norm gains
// at one, consuming no draws.
inline EncoderModel init_model(const ModelConfig& config) {
  config.validate();
  EncoderModel m;
  m.config = config;
  Rng rng(config.init_seed);
  std::size_t d = config.d_model, ff = config.d_ff;
  m.tok_emb = detail::init_normal(rng, {config.vocab_size, d}, config.init_std);
  m.pos_emb = detail::init_normal(rng, {config.max_len, d}, config.init_std);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams l;
    l.wq = detail::init_normal(rng, {d, d}, config.init_std);
    l.bq = detail::init_const({d}, 0.0);
    l.wk = detail::init_normal(rng, {d, d}, config.init_std);
    l.bk = detail::init_const({d}, 0.0);
    l.wv = detail::init_normal(rng, {d, d}, config.init_std);
    l.bv = detail::init_const({d}, 0.0);
    l.wo = detail::init_normal(rng, {d, d}, config.init_std);
    l.bo = detail::init_const({d}, 0.0);
    l.ln1_gain = detail::init_const({d}, 1.0);
    l.ln1_bias = detail::init_const({d}, 0.0);
    l.w1 = detail::init_normal(rng, {d, ff}, config.init_std);
    l.b1 = detail::init_const({ff}, 0.0);
    l.w2 = detail::init_normal(rng, {ff, d}, config.init_std);
    l.b2 = detail::init_const({d}, 0.0);
    l.ln2_gain = detail::init_const({d}, 1.0);
    l.ln2_bias = detail::init_const({d}, 0.0);
    m.layers.push_back(std::move(l));
  }
  m.cls_w = detail::init_normal(rng, {d, config.n_classes}, config.init_std);
  m.cls_b = detail::init_const({config.n_classes}, 0.0);
  return m;
}

struct ForwardTrace {
  std::vector<Tensor> attention;  // per layer, [B, H, T, T] post-softmax
};

namespace detail {

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

inline Tensor dropout(const Tensor& x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (double& v : mask) v = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

// Additive attention bias from the padding mask: 0 over real tokens, -1e9
// over padded key positions, materialized per head.
inline Tensor attention_bias(const EncodedBatch& batch, std::size_t n_heads) {
  std::size_t b = batch.batch, t = batch.tokens;
  std::vector<double> bias(b * n_heads * t * t, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t j = 0; j < t; ++j) {
      if (batch.attention_mask[bi * t + j]) continue;
      for (std::size_t h = 0; h < n_heads; ++h) {
        double* row0 = bias.data() + ((bi * n_heads + h) * t) * t;
        for (std::size_t i = 0; i < t; ++i) row0[i * t + j] = -1e9;
      }
    }
  }
  return Tensor::from_data({b, n_heads, t, t}, std::move(bias));
}

inline Tensor attention(const EncoderModel& m, const LayerParams& l, const Tensor& x,
                        const Tensor& bias, std::size_t b, std::size_t t, ForwardTrace* trace) {
  std::size_t d = m.config.d_model, h = m.config.n_heads, dh = d / h;
  auto split_heads = [&](const Tensor& proj) {
    return transpose(reshape(proj, {b, t, h, dh}), {0, 2, 1, 3});  // [B,H,T,dh]
  };
  Tensor q = split_heads(linear(x, l.wq, l.bq));
  Tensor k = split_heads(linear(x, l.wk, l.bk));
  Tensor v = split_heads(linear(x, l.wv, l.bv));
  Tensor scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = softmax(add(scores, bias), 3);
  if (trace) trace->attention.push_back(probs);
  Tensor ctx = reshape(transpose(matmul(probs, v), {0, 2, 1, 3}), {b, t, d});
  return linear(ctx, l.wo, l.bo);
}

}  // namespace detail

// Token plus position embeddings; the tensor returned here is the "input" to
// which adversarial perturbations are added.
inline Tensor embed_input(const EncoderModel& m, const EncodedBatch& batch) {
  if (batch.tokens > m.config.max_len)
    raise(ErrorKind::dimension, "embed: batch rows longer than model max_len");
  std::vector<int> pos_ids(batch.batch * batch.tokens);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t t = 0; t < batch.tokens; ++t) pos_ids[b * batch.tokens + t] = static_cast<int>(t);
  Tensor tok = embedding(m.tok_emb, batch.token_ids, batch.batch, batch.tokens);
  Tensor pos = embedding(m.pos_emb, pos_ids, batch.batch, batch.tokens);
  return add(tok, pos);
}

inline Tensor encoder_forward(const EncoderModel& m, const Tensor& x, const EncodedBatch& batch,
                              bool train, Rng* dropout_rng, ForwardTrace* trace = nullptr) {
  if (x.shape() != Shape{batch.batch, batch.tokens, m.config.d_model})
    raise(ErrorKind::dimension, "encoder: input shape " + shape_to_string(x.shape()) + " does not match batch");
  if (m.layers.empty()) return x;
  Rng* rng = train ? dropout_rng : nullptr;
  Tensor bias = detail::attention_bias(batch, m.config.n_heads);
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerParams& l = m.layers[i];
    try {
      Tensor attn = detail::attention(m, l, h, bias, batch.batch, batch.tokens, trace);
      attn = detail::dropout(attn, m.config.dropout_rate, rng);
      h = layer_norm(add(h, attn), l.ln1_gain, l.ln1_bias);
      Tensor ff = detail::linear(gelu(detail::linear(h, l.w1, l.b1)), l.w2, l.b2);
      ff = detail::dropout(ff, m.config.dropout_rate, rng);
      h = layer_norm(add(h, ff), l.ln2_gain, l.ln2_bias);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::numeric)
        raise(ErrorKind::numeric, "encoder layer " + std::to_string(i) + ": " + e.what());
      throw;
    }
  }
  return h;
}

struct ClassifierOutput {
  Tensor logits;            // [B, n_classes]
  Tensor probs;             // [B, n_classes]
  Tensor input_embeddings;  // [B, T, d], set by forward_batch
};

// Pools the encoded [CLS] position and applies the linear head.
inline Tensor classify(const EncoderModel& m, const Tensor& encoded, std::size_t b, std::size_t t) {
  std::vector<double> sel(t, 0.0);
  sel[0] = 1.0;
  Tensor selector = Tensor::from_data({t, 1}, std::move(sel));
  Tensor cls = reshape(matmul(transpose(encoded, {0, 2, 1}), selector), {b, m.config.d_model});
  return detail::linear(cls, m.cls_w, m.cls_b);
}

inline ClassifierOutput forward_from_embeddings(const EncoderModel& m, const Tensor& x,
                                                const EncodedBatch& batch, bool train, Rng* dropout_rng,
                                                ForwardTrace* trace = nullptr) {
  ClassifierOutput out;
  out.input_embeddings = x;
  Tensor h = encoder_forward(m, x, batch, train, dropout_rng, trace);
  out.logits = classify(m, h, batch.batch, batch.tokens);
  out.probs = softmax(out.logits, 1);
  return out;
}

inline ClassifierOutput forward_batch(const EncoderModel& m, const EncodedBatch& batch, bool train,
                                      Rng* dropout_rng, ForwardTrace* trace = nullptr) {
  return forward_from_embeddings(m, embed_input(m, batch), batch, train, dropout_rng, trace);
}

}  // namespace ivat
