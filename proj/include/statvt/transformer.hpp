#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "statvt/nn.hpp"
#include "statvt/tensor.hpp"

namespace statvt::nn {

/// Sinusoidal position code: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(...).
inline Tensor positional_encoding(int length, int d_model) {
  if (d_model % 2 != 0) fail("positional_encoding: d_model must be even");
  Tensor pe = Tensor::zeros({length, d_model});
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(10000.0, (2.0 * i) / d_model);
      pe.values()[static_cast<std::size_t>(p) * d_model + 2 * i] = std::sin(p / rate);
      pe.values()[static_cast<std::size_t>(p) * d_model + 2 * i + 1] = std::cos(p / rate);
    }
  }
  return pe;
}

/// [t x t] additive mask: 0 at or before the diagonal, -inf after.
inline Tensor causal_mask(int t) {
  Tensor m = Tensor::zeros({t, t});
  for (int p = 0; p < t; ++p)
    for (int q = p + 1; q < t; ++q)
      m.values()[static_cast<std::size_t>(p) * t + q] = kNegInf;
  return m;
}

/**
 * softmax(Q K^T / sqrt(d_k) + mask) V. Mask entries are 0 or -inf; the
 * optional dropout is applied to the attention weights.
 */
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor* mask, double dropout_p = 0.0,
                                   bool training = false, Rng* rng = nullptr) {
  if (q.cols() != k.cols())
    fail("attention: query width " + std::to_string(q.cols()) + " vs key width " +
         std::to_string(k.cols()));
  if (k.rows() != v.rows())
    fail("attention: " + std::to_string(k.rows()) + " keys vs " +
         std::to_string(v.rows()) + " values");
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(q.cols())));
  if (mask != nullptr) scores = add(scores, *mask);
  Tensor weights = softmax_rows(scores);
  if (dropout_p > 0.0 && training && rng != nullptr)
    weights = dropout(weights, dropout_p, training, *rng);
  return matmul(weights, v);
}

/** h independent projected attentions, concatenated and projected by W^O. */
struct MultiHeadAttention {
  int d_model = 0;
  int heads = 0;
  int d_k = 0;  // = d_v = d_model / heads
  std::vector<Parameter*> w_q, w_k, w_v;  // per head [d_model x d_k]
  Parameter* w_o = nullptr;               // [heads*d_k x d_model]

  static MultiHeadAttention create(ParamStore& store, const std::string& prefix,
                                   int d_model, int heads, Rng& rng) {
    if (heads < 1 || d_model % heads != 0)
      fail("multi-head attention: d_model " + std::to_string(d_model) +
           " not divisible by heads " + std::to_string(heads));
    MultiHeadAttention mha;
    mha.d_model = d_model;
    mha.heads = heads;
    mha.d_k = d_model / heads;
    for (int h = 0; h < heads; ++h) {
      const std::string hs = std::to_string(h);
      mha.w_q.push_back(&store.add_uniform(prefix + ".h" + hs + ".wq", {d_model, mha.d_k}, rng));
      mha.w_k.push_back(&store.add_uniform(prefix + ".h" + hs + ".wk", {d_model, mha.d_k}, rng));
      mha.w_v.push_back(&store.add_uniform(prefix + ".h" + hs + ".wv", {d_model, mha.d_k}, rng));
    }
    mha.w_o = &store.add_uniform(prefix + ".wo", {heads * mha.d_k, d_model}, rng);
    return mha;
  }

  Tensor forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const Tensor* mask, double dropout_p, bool training, Rng* rng) const {
    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor qh = matmul(q_in, w_q[static_cast<std::size_t>(h)]->tensor);
      Tensor kh = matmul(k_in, w_k[static_cast<std::size_t>(h)]->tensor);
      Tensor vh = matmul(v_in, w_v[static_cast<std::size_t>(h)]->tensor);
      head_out.push_back(
          scaled_dot_attention(qh, kh, vh, mask, dropout_p, training, rng));
    }
    return matmul(concat_cols(head_out), w_o->tensor);
  }
};

/** linear -> ReLU -> dropout -> linear, hidden width d_ff. */
struct FeedForward {
  Parameter *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;

  static FeedForward create(ParamStore& store, const std::string& prefix, int d_model,
                            int d_ff, Rng& rng) {
    FeedForward f;
    f.w1 = &store.add_uniform(prefix + ".w1", {d_model, d_ff}, rng);
    f.b1 = &store.add(prefix + ".b1", {d_ff});
    f.w2 = &store.add_uniform(prefix + ".w2", {d_ff, d_model}, rng);
    f.b2 = &store.add(prefix + ".b2", {d_model});
    return f;
  }

  Tensor forward(const Tensor& x, double dropout_p, bool training, Rng* rng) const {
    Tensor h = relu(add_rowvec(matmul(x, w1->tensor), b1->tensor));
    if (dropout_p > 0.0 && training && rng != nullptr)
      h = dropout(h, dropout_p, training, *rng);
    return add_rowvec(matmul(h, w2->tensor), b2->tensor);
  }
};

struct LayerNormParams {
  Parameter *gain = nullptr, *bias = nullptr;

  static LayerNormParams create(ParamStore& store, const std::string& prefix, int d,
                                Rng&) {
    LayerNormParams n;
    n.gain = &store.add(prefix + ".gain", {d});
    for (double& v : n.gain->tensor.values()) v = 1.0;
    n.bias = &store.add(prefix + ".bias", {d});
    return n;
  }

  Tensor apply(const Tensor& x) const { return layer_norm(x, gain->tensor, bias->tensor); }
};

/** Self-attention + FFN, each wrapped in residual + normalization. */
struct EncoderLayer {
  MultiHeadAttention mha;
  FeedForward ffn;
  LayerNormParams norm1, norm2;

  static EncoderLayer create(ParamStore& store, const std::string& prefix, int d_model,
                             int heads, int d_ff, Rng& rng) {
    EncoderLayer l;
    l.mha = MultiHeadAttention::create(store, prefix + ".attn", d_model, heads, rng);
    l.ffn = FeedForward::create(store, prefix + ".ffn", d_model, d_ff, rng);
    l.norm1 = LayerNormParams::create(store, prefix + ".norm1", d_model, rng);
    l.norm2 = LayerNormParams::create(store, prefix + ".norm2", d_model, rng);
    return l;
  }

  Tensor forward(const Tensor& x_in, const Tensor* pad_mask, double dropout_p,
                 bool training, Rng* rng, bool prenorm) const {
    Tensor x = x_in;
    if (prenorm) {
      x = add(x, mha.forward(norm1.apply(x), norm1.apply(x), norm1.apply(x), pad_mask,
                             dropout_p, training, rng));
      x = add(x, ffn.forward(norm2.apply(x), dropout_p, training, rng));
    } else {
      x = norm1.apply(add(x, mha.forward(x, x, x, pad_mask, dropout_p, training, rng)));
      x = norm2.apply(add(x, ffn.forward(x, dropout_p, training, rng)));
    }
    return x;
  }
};

/** Masked self-attention, cross-attention over the memory, then FFN. */
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
  LayerNormParams norm1, norm2, norm3;

  static DecoderLayer create(ParamStore& store, const std::string& prefix, int d_model,
                             int heads, int d_ff, Rng& rng) {
    DecoderLayer l;
    l.self_attn = MultiHeadAttention::create(store, prefix + ".self", d_model, heads, rng);
    l.cross_attn = MultiHeadAttention::create(store, prefix + ".cross", d_model, heads, rng);
    l.ffn = FeedForward::create(store, prefix + ".ffn", d_model, d_ff, rng);
    l.norm1 = LayerNormParams::create(store, prefix + ".norm1", d_model, rng);
    l.norm2 = LayerNormParams::create(store, prefix + ".norm2", d_model, rng);
    l.norm3 = LayerNormParams::create(store, prefix + ".norm3", d_model, rng);
    return l;
  }

  Tensor forward(const Tensor& y_in, const Tensor& memory, const Tensor& causal,
                 double dropout_p, bool training, Rng* rng, bool prenorm) const {
    Tensor y = y_in;
    if (prenorm) {
      y = add(y, self_attn.forward(norm1.apply(y), norm1.apply(y), norm1.apply(y),
                                   &causal, dropout_p, training, rng));
      y = add(y, cross_attn.forward(norm2.apply(y), memory, memory, nullptr, dropout_p,
                                    training, rng));
      y = add(y, ffn.forward(norm3.apply(y), dropout_p, training, rng));
    } else {
      y = norm1.apply(
          add(y, self_attn.forward(y, y, y, &causal, dropout_p, training, rng)));
      y = norm2.apply(add(
          y, cross_attn.forward(y, memory, memory, nullptr, dropout_p, training, rng)));
      y = norm3.apply(add(y, ffn.forward(y, dropout_p, training, rng)));
    }
    return y;
  }
};

inline Tensor encoder_forward(const std::vector<EncoderLayer>& layers, Tensor x,
                              const Tensor* pad_mask = nullptr, double dropout_p = 0.0,
                              bool training = false, Rng* rng = nullptr,
                              bool prenorm = false) {
  for (const EncoderLayer& l : layers)
    x = l.forward(x, pad_mask, dropout_p, training, rng, prenorm);
  return x;
}

inline Tensor decoder_forward(const std::vector<DecoderLayer>& layers, Tensor y,
                              const Tensor& memory, const Tensor& causal,
                              double dropout_p = 0.0, bool training = false,
                              Rng* rng = nullptr, bool prenorm = false) {
  for (const DecoderLayer& l : layers)
    y = l.forward(y, memory, causal, dropout_p, training, rng, prenorm);
  return y;
}

}  // namespace statvt::nn
