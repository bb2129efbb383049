#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "statvt/transformer.hpp"

using namespace statvt;
using namespace statvt::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("scaled_dot_attention: one query equal to the single key") {
  Tensor q = Tensor::from({1, 3}, {0.2, -0.4, 0.9});
  Tensor k = q;
  Tensor v = Tensor::from({1, 2}, {5.0, -7.0});
  Tensor out = scaled_dot_attention(q, k, v, nullptr);
  CHECK(out.at(0, 0) == 5.0);
  CHECK(out.at(0, 1) == -7.0);
}

TEST_CASE("scaled_dot_attention: equidistant keys average the values") {
  Tensor q = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor k = Tensor::from({2, 2}, {0.0, 1.0, 0.0, -1.0});  // both orthogonal to q
  Tensor v = Tensor::from({2, 2}, {2.0, 4.0, 6.0, 8.0});
  Tensor out = scaled_dot_attention(q, k, v, nullptr);
  CHECK(out.at(0, 0) == Catch::Approx(4.0).margin(1e-12));
  CHECK(out.at(0, 1) == Catch::Approx(6.0).margin(1e-12));
}

TEST_CASE("scaled_dot_attention equals the direct formula on a random case") {
  Rng rng(21);
  Tensor q = random_tensor({2, 3}, rng);
  Tensor k = random_tensor({4, 3}, rng);
  Tensor v = random_tensor({4, 5}, rng);
  Tensor out = scaled_dot_attention(q, k, v, nullptr);
  for (int i = 0; i < 2; ++i) {
    std::vector<double> scores(4);
    double mx = -1e300;
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int d = 0; d < 3; ++d) s += q.at(i, d) * k.at(j, d);
      scores[static_cast<std::size_t>(j)] = s / std::sqrt(3.0);
      mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
    }
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s - mx);
    for (int c = 0; c < 5; ++c) {
      double expect = 0.0;
      for (int j = 0; j < 4; ++j)
        expect += std::exp(scores[static_cast<std::size_t>(j)] - mx) / denom * v.at(j, c);
      CHECK(out.at(i, c) == Catch::Approx(expect).margin(1e-12));
    }
  }
}

TEST_CASE("attention weight rows are stochastic within 1e-12") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor q = random_tensor({3, 4}, rng);
    Tensor k = random_tensor({6, 4}, rng);
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / 2.0);
    Tensor w = softmax_rows(scores);
    for (int i = 0; i < 3; ++i) {
      double s = 0.0;
      for (int j = 0; j < 6; ++j) s += w.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("multi_head with identity projections reduces to scaled_dot_attention") {
  Rng rng(23);
  ParamStore store;
  MultiHeadAttention mha = MultiHeadAttention::create(store, "attn", 4, 1, rng);
  auto set_identity = [](Parameter* p) {
    auto& v = p->tensor.values();
    std::fill(v.begin(), v.end(), 0.0);
    const int n = p->tensor.rows();
    for (int i = 0; i < std::min(n, p->tensor.cols()); ++i)
      v[static_cast<std::size_t>(i) * p->tensor.cols() + i] = 1.0;
  };
  set_identity(mha.w_q[0]);
  set_identity(mha.w_k[0]);
  set_identity(mha.w_v[0]);
  set_identity(mha.w_o);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor got = mha.forward(x, x, x, nullptr, 0.0, false, nullptr);
  Tensor expect = scaled_dot_attention(x, x, x, nullptr);
  for (std::size_t i = 0; i < got.values().size(); ++i)
    CHECK(got.values()[i] == Catch::Approx(expect.values()[i]).margin(1e-14));
}

TEST_CASE("multi_head with zero values yields zero output") {
  Rng rng(24);
  ParamStore store;
  MultiHeadAttention mha = MultiHeadAttention::create(store, "attn", 6, 2, rng);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor zeros = Tensor::zeros({3, 6});
  Tensor out = mha.forward(x, x, zeros, nullptr, 0.0, false, nullptr);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("multi_head h=2 equals two manual heads concatenated and projected") {
  Rng rng(25);
  ParamStore store;
  MultiHeadAttention mha = MultiHeadAttention::create(store, "attn", 6, 2, rng);
  Tensor q = random_tensor({3, 6}, rng);
  Tensor k = random_tensor({5, 6}, rng);
  Tensor v = random_tensor({5, 6}, rng);
  Tensor got = mha.forward(q, k, v, nullptr, 0.0, false, nullptr);

  std::vector<Tensor> heads;
  for (int h = 0; h < 2; ++h) {
    Tensor qh = matmul(q, mha.w_q[static_cast<std::size_t>(h)]->tensor);
    Tensor kh = matmul(k, mha.w_k[static_cast<std::size_t>(h)]->tensor);
    Tensor vh = matmul(v, mha.w_v[static_cast<std::size_t>(h)]->tensor);
    heads.push_back(scaled_dot_attention(qh, kh, vh, nullptr));
  }
  Tensor expect = matmul(concat_cols(heads), mha.w_o->tensor);
  for (std::size_t i = 0; i < got.values().size(); ++i)
    CHECK(got.values()[i] == expect.values()[i]);
}

TEST_CASE("positional encoding values") {
  Tensor pe = positional_encoding(5, 8);
  for (int i = 0; i < 8; ++i)
    CHECK(pe.at(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  // PE[3, 2] = sin(3 / 10000^(2/8))
  CHECK(pe.at(3, 2) ==
        Catch::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0))).margin(1e-15));
  CHECK_THROWS_AS(positional_encoding(4, 7), Error);
}

TEST_CASE("zero-layer encoder is the identity; width is preserved") {
  Rng rng(26);
  Tensor x = random_tensor({8, 6}, rng);
  Tensor out = encoder_forward({}, x);
  CHECK(out.node == x.node);

  ParamStore store;
  std::vector<EncoderLayer> layers;
  for (int i = 0; i < 3; ++i)
    layers.push_back(
        EncoderLayer::create(store, "enc" + std::to_string(i), 6, 2, 24, rng));
  Tensor deep = encoder_forward(layers, x);
  CHECK(deep.shape() == x.shape());
}

TEST_CASE("one encoder layer equals the step-by-step trace") {
  Rng rng(27);
  ParamStore store;
  EncoderLayer layer = EncoderLayer::create(store, "enc", 4, 2, 8, rng);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor got = encoder_forward({layer}, x);

  Tensor a = layer.mha.forward(x, x, x, nullptr, 0.0, false, nullptr);
  Tensor h = layer.norm1.apply(add(x, a));
  Tensor f = layer.ffn.forward(h, 0.0, false, nullptr);
  Tensor expect = layer.norm2.apply(add(h, f));
  for (std::size_t i = 0; i < got.values().size(); ++i)
    CHECK(got.values()[i] == expect.values()[i]);
}

TEST_CASE("one decoder layer equals the step-by-step trace") {
  Rng rng(28);
  ParamStore store;
  DecoderLayer layer = DecoderLayer::create(store, "dec", 4, 2, 8, rng);
  Tensor y = random_tensor({3, 4}, rng);
  Tensor memory = random_tensor({5, 4}, rng);
  Tensor causal = causal_mask(3);
  Tensor got = decoder_forward({layer}, y, memory, causal);

  Tensor s = layer.self_attn.forward(y, y, y, &causal, 0.0, false, nullptr);
  Tensor h1 = layer.norm1.apply(add(y, s));
  Tensor c = layer.cross_attn.forward(h1, memory, memory, nullptr, 0.0, false, nullptr);
  Tensor h2 = layer.norm2.apply(add(h1, c));
  Tensor f = layer.ffn.forward(h2, 0.0, false, nullptr);
  Tensor expect = layer.norm3.apply(add(h2, f));
  for (std::size_t i = 0; i < got.values().size(); ++i)
    CHECK(got.values()[i] == expect.values()[i]);
}

TEST_CASE("decoder causality: earlier states are bit-identical under extension") {
  Rng rng(29);
  ParamStore store;
  std::vector<DecoderLayer> layers{DecoderLayer::create(store, "dec0", 6, 2, 12, rng),
                                   DecoderLayer::create(store, "dec1", 6, 2, 12, rng)};
  Tensor memory = random_tensor({4, 6}, rng);
  Tensor y4 = random_tensor({4, 6}, rng);
  Tensor y3 = slice_rows(y4, 0, 3);
  Tensor out3 = decoder_forward(layers, y3, memory, causal_mask(3));
  Tensor out4 = decoder_forward(layers, y4, memory, causal_mask(4));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) CHECK(out3.at(i, j) == out4.at(i, j));
}

TEST_CASE("t=1 decoding works with a vacuous causal mask") {
  Rng rng(30);
  ParamStore store;
  DecoderLayer layer = DecoderLayer::create(store, "dec", 4, 1, 8, rng);
  Tensor y = random_tensor({1, 4}, rng);
  Tensor memory = random_tensor({3, 4}, rng);
  Tensor out = decoder_forward({layer}, y, memory, causal_mask(1));
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 4);
}

TEST_CASE("full encoder-decoder gradient passes the checker at 1e-4") {
  Rng rng(31);
  ParamStore store;
  EncoderLayer enc = EncoderLayer::create(store, "enc", 8, 2, 16, rng);
  DecoderLayer dec = DecoderLayer::create(store, "dec", 8, 2, 16, rng);
  Tensor x = random_tensor({4, 8}, rng);
  Tensor y = random_tensor({3, 8}, rng);
  auto f = [&] {
    Tensor memory = encoder_forward({enc}, x);
    Tensor states = decoder_forward({dec}, y, memory, causal_mask(3));
    return sum(mul(states, states));
  };
  const double err = grad_check(f, store.all());
  CHECK(err < 1e-4);
}

TEST_CASE("prenorm variant keeps shape and differs from postnorm") {
  Rng rng(32);
  ParamStore store;
  EncoderLayer layer = EncoderLayer::create(store, "enc", 4, 2, 8, rng);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor post = encoder_forward({layer}, x, nullptr, 0.0, false, nullptr, false);
  Tensor pre = encoder_forward({layer}, x, nullptr, 0.0, false, nullptr, true);
  CHECK(pre.shape() == post.shape());
  CHECK(pre.values() != post.values());
}
