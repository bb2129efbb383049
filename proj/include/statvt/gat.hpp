#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "statvt/nn.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/tensor.hpp"
#include "statvt/vocab.hpp"

namespace statvt::nn {

enum class GatActivation { kRelu, kLeakyRelu, kNone };

/**
 * One multi-head graph attention layer. Per head m: scores
 * e_ij = LeakyReLU(a_m^T [W_m h_i || W_m h_j]) over j in N_i, softmax over the
 * neighborhood, weighted aggregation, activation, heads concatenated.
 */
struct GatLayer {
  int in_features = 0;
  int out_per_head = 0;
  int heads = 0;
  double leaky_slope = 0.2;
  std::vector<Parameter*> w;  // per head [F x F']
  std::vector<Parameter*> a;  // per head [2F']

  static GatLayer create(ParamStore& store, const std::string& prefix, int in_features,
                         int out_per_head, int heads, Rng& rng, double slope = 0.2) {
    if (heads < 1) fail("gat: heads must be >= 1");
    GatLayer l;
    l.in_features = in_features;
    l.out_per_head = out_per_head;
    l.heads = heads;
    l.leaky_slope = slope;
    for (int h = 0; h < heads; ++h) {
      const std::string hs = std::to_string(h);
      l.w.push_back(&store.add_uniform(prefix + ".h" + hs + ".w",
                                       {in_features, out_per_head}, rng));
      l.a.push_back(
          &store.add_uniform(prefix + ".h" + hs + ".a", {2 * out_per_head}, rng));
    }
    return l;
  }

  /// Additive adjacency mask: 0 where j in N_i, -inf elsewhere.
  static Tensor neighborhood_mask(const std::vector<std::vector<int>>& nbrs) {
    const int n = static_cast<int>(nbrs.size());
    Tensor m = Tensor::zeros({n, n});
    for (double& v : m.values()) v = kNegInf;
    for (int i = 0; i < n; ++i)
      for (int j : nbrs[static_cast<std::size_t>(i)])
        m.values()[static_cast<std::size_t>(i) * n + j] = 0.0;
    return m;
  }

  /// Normalized attention rows for one head (no dropout); rows sum to 1 over N_i.
  Tensor head_alpha(const Tensor& h_in, const Tensor& mask, int head) const {
    Tensor hw = matmul(h_in, w[static_cast<std::size_t>(head)]->tensor);
    Tensor a_src = slice_rows(a[static_cast<std::size_t>(head)]->tensor, 0, out_per_head);
    Tensor a_dst =
        slice_rows(a[static_cast<std::size_t>(head)]->tensor, out_per_head, out_per_head);
    Tensor e = leaky_relu(add_outer(matvec(hw, a_src), matvec(hw, a_dst)), leaky_slope);
    return softmax_rows(add(e, mask));
  }

  Tensor forward(const Tensor& h_in, const Tensor& mask, double dropout_p,
                 bool training, Rng* rng,
                 GatActivation act = GatActivation::kRelu) const {
    std::vector<Tensor> heads_out;
    heads_out.reserve(static_cast<std::size_t>(heads));
    for (int head = 0; head < heads; ++head) {
      Tensor hw = matmul(h_in, w[static_cast<std::size_t>(head)]->tensor);
      Tensor a_src =
          slice_rows(a[static_cast<std::size_t>(head)]->tensor, 0, out_per_head);
      Tensor a_dst = slice_rows(a[static_cast<std::size_t>(head)]->tensor, out_per_head,
                                out_per_head);
      Tensor e = leaky_relu(add_outer(matvec(hw, a_src), matvec(hw, a_dst)), leaky_slope);
      Tensor alpha = softmax_rows(add(e, mask));
      if (dropout_p > 0.0 && training && rng != nullptr)
        alpha = dropout(alpha, dropout_p, training, *rng);
      Tensor agg = matmul(alpha, hw);
      switch (act) {
        case GatActivation::kRelu: agg = relu(agg); break;
        case GatActivation::kLeakyRelu: agg = leaky_relu(agg, leaky_slope); break;
        case GatActivation::kNone: break;
      }
      heads_out.push_back(agg);
    }
    return heads == 1 ? heads_out[0] : concat_cols(heads_out);
  }
};

/**
 * Neighborhood sets over a LocalGraph. Road context flows both ways by
 * default (successors and predecessors); self-loops keep each node's own
 * features in the aggregation.
 */
inline std::vector<std::vector<int>> gat_neighborhoods(const LocalGraph& g,
                                                       bool bidirectional = true,
                                                       bool self_loops = true) {
  const std::size_t n = g.nodes.size();
  std::vector<std::vector<int>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> set;
    if (self_loops) set.push_back(static_cast<int>(i));
    for (int j : g.out[i]) set.push_back(j);
    if (bidirectional)
      for (int j : g.in[i]) set.push_back(j);
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    nbrs[i] = std::move(set);
  }
  return nbrs;
}

/// LocalGraph restricted to segments the vocabulary can embed.
inline LocalGraph vocab_filtered(const LocalGraph& g, const Vocabulary& vocab) {
  LocalGraph out;
  std::vector<int> keep(g.nodes.size(), -1);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (vocab.has_segment(g.nodes[i])) {
      keep[i] = static_cast<int>(out.nodes.size());
      out.nodes.push_back(g.nodes[i]);
    }
  }
  out.out.resize(out.nodes.size());
  out.in.resize(out.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (keep[i] < 0) continue;
    for (int j : g.out[i]) {
      if (keep[static_cast<std::size_t>(j)] < 0) continue;
      out.out[static_cast<std::size_t>(keep[i])].push_back(keep[static_cast<std::size_t>(j)]);
      out.in[static_cast<std::size_t>(keep[static_cast<std::size_t>(j)])].push_back(keep[i]);
    }
  }
  return out;
}

/**
 * Two stacked GAT layers over the window's local road graph. Window nodes use
 * the provided feature rows; first-order neighbors outside the window fall
 * back to their plain embedding row. Returns the window rows in window order.
 */
inline Tensor spatial_encode(const GatLayer& layer1, const GatLayer& layer2,
                             const std::vector<std::int64_t>& window_segments,
                             const Tensor& window_features, const Tensor& emb_table,
                             const RoadNetwork& net, const Vocabulary& vocab,
                             bool bidirectional = true, bool self_loops = true,
                             double dropout_p = 0.0, bool training = false,
                             Rng* rng = nullptr,
                             GatActivation act = GatActivation::kRelu) {
  if (window_features.rows() != static_cast<int>(window_segments.size()))
    fail("spatial_encode: feature rows do not match window length");
  const LocalGraph g = vocab_filtered(local_subgraph(net, window_segments), vocab);

  // first occurrence of each window segment supplies its feature row
  std::vector<int> node_feature_row(g.nodes.size(), -1);
  for (std::size_t pos = 0; pos < window_segments.size(); ++pos) {
    const int idx = g.index_of(window_segments[pos]);
    if (node_feature_row[static_cast<std::size_t>(idx)] < 0)
      node_feature_row[static_cast<std::size_t>(idx)] = static_cast<int>(pos);
  }
  std::vector<Tensor> rows;
  rows.reserve(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (node_feature_row[i] >= 0) {
      rows.push_back(slice_rows(window_features, node_feature_row[i], 1));
    } else {
      rows.push_back(embedding(emb_table, {vocab.token(g.nodes[i])}));
    }
  }
  Tensor h = concat_rows(rows);
  const Tensor mask = GatLayer::neighborhood_mask(
      gat_neighborhoods(g, bidirectional, self_loops));
  h = layer1.forward(h, mask, dropout_p, training, rng, act);
  h = layer2.forward(h, mask, dropout_p, training, rng, act);

  std::vector<Tensor> out_rows;
  out_rows.reserve(window_segments.size());
  for (const std::int64_t seg : window_segments)
    out_rows.push_back(slice_rows(h, g.index_of(seg), 1));
  return concat_rows(out_rows);
}

}  // namespace statvt::nn
