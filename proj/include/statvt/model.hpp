#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "statvt/dataset.hpp"
#include "statvt/gat.hpp"
#include "statvt/metrics.hpp"
#include "statvt/nn.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/transformer.hpp"
#include "statvt/vocab.hpp"

#include "json.hpp"

namespace statvt::nn {

struct ModelConfig {
  int d_model = 256;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int post_fusion_layers = 1;
  int gat_heads = 4;
  double gat_leaky_slope = 0.2;
  int l_in = 8;
  int l_out = 4;
  int d_ff = 0;  // 0 -> 4 * d_model
  double dropout = 0.1;
  bool use_gat = true;
  bool use_filter = true;
  std::string fusion_mode = "sum";  // "sum" | "concat"
  bool gat_bidirectional = true;
  bool gat_self_loops = true;
  bool prenorm = false;
  bool filter_on_logits = false;  // mask logits before softmax instead

  int ffn_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"d_model", d_model},
                          {"heads", heads},
                          {"enc_layers", enc_layers},
                          {"dec_layers", dec_layers},
                          {"post_fusion_layers", post_fusion_layers},
                          {"gat_heads", gat_heads},
                          {"gat_leaky_slope", gat_leaky_slope},
                          {"l_in", l_in},
                          {"l_out", l_out},
                          {"d_ff", d_ff},
                          {"dropout", dropout},
                          {"use_gat", use_gat},
                          {"use_filter", use_filter},
                          {"fusion_mode", fusion_mode},
                          {"gat_bidirectional", gat_bidirectional},
                          {"gat_self_loops", gat_self_loops},
                          {"prenorm", prenorm},
                          {"filter_on_logits", filter_on_logits}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.post_fusion_layers = j.value("post_fusion_layers", c.post_fusion_layers);
    c.gat_heads = j.value("gat_heads", c.gat_heads);
    c.gat_leaky_slope = j.value("gat_leaky_slope", c.gat_leaky_slope);
    c.l_in = j.value("l_in", c.l_in);
    c.l_out = j.value("l_out", c.l_out);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.dropout = j.value("dropout", c.dropout);
    c.use_gat = j.value("use_gat", c.use_gat);
    c.use_filter = j.value("use_filter", c.use_filter);
    c.fusion_mode = j.value("fusion_mode", c.fusion_mode);
    c.gat_bidirectional = j.value("gat_bidirectional", c.gat_bidirectional);
    c.gat_self_loops = j.value("gat_self_loops", c.gat_self_loops);
    c.prenorm = j.value("prenorm", c.prenorm);
    c.filter_on_logits = j.value("filter_on_logits", c.filter_on_logits);
    return c;
  }
};

/**
 * Renormalizes a probability vector onto the neighbors of prev_token. When no
 * mass survives (or the predecessor has no successors), returns the input
 * unchanged and reports the dead-end through *fallback_fired.
 */
inline std::vector<double> filter_probs(const std::vector<double>& probs,
                                        int prev_token, const NeighborMask& mask,
                                        bool* fallback_fired = nullptr) {
  if (static_cast<int>(probs.size()) != mask.n_tokens)
    fail("filter: " + std::to_string(probs.size()) + " probs for " +
         std::to_string(mask.n_tokens) + " tokens");
  if (prev_token < 0 || prev_token >= mask.n_tokens)
    fail("filter: prev token out of range: " + std::to_string(prev_token));
  double total = 0.0;
  for (double p : probs) total += p;
  if (std::abs(total - 1.0) > 1e-9) fail("filter: input is not a probability vector");
  if (fallback_fired != nullptr) *fallback_fired = false;
  double kept = 0.0;
  for (int j = 0; j < mask.n_tokens; ++j)
    if (mask.at(prev_token, j)) kept += probs[static_cast<std::size_t>(j)];
  if (kept <= 0.0) {
    if (fallback_fired != nullptr) *fallback_fired = true;
    return probs;
  }
  std::vector<double> out(probs.size(), 0.0);
  for (int j = 0; j < mask.n_tokens; ++j)
    if (mask.at(prev_token, j)) out[static_cast<std::size_t>(j)] = probs[static_cast<std::size_t>(j)] / kept;
  return out;
}

inline std::vector<double> softmax_values(const std::vector<double>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isinf(logits[i]) && logits[i] < 0 ? 0.0 : std::exp(logits[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

inline int argmax_lowest_tie(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

struct DecodeStats {
  std::int64_t fallback_count = 0;
  std::int64_t steps = 0;
  std::vector<std::uint8_t> step_fired;  // per decoded step
};

/**
 * The full predictor: embedding -> (GAT spatial || Transformer temporal) ->
 * aggregation -> post-fusion encoder -> decoder -> linear -> softmax ->
 * filter. Parameters are created in one fixed order regardless of ablation
 * flags, so every variant with the same seed shares identical initial
 * weights.
 */
class StatvtpredModel {
 public:
  StatvtpredModel(ModelConfig cfg, int n_tokens, NeighborMask mask, std::uint64_t seed)
      : config(cfg), n_tokens_(n_tokens), mask_(std::move(mask)) {
    if (mask_.n_tokens != n_tokens)
      fail("model: mask has " + std::to_string(mask_.n_tokens) + " tokens, vocab has " +
           std::to_string(n_tokens));
    if (config.d_model % 2 != 0) fail("model: d_model must be even");
    if (config.d_model % config.heads != 0)
      fail("model: d_model not divisible by attention heads");
    if (config.d_model % config.gat_heads != 0)
      fail("model: d_model not divisible by gat heads");
    Rng rng(seed);
    embedding_ = &params.add_uniform("embedding", {n_tokens, config.d_model}, rng);
    const int f_prime = config.d_model / config.gat_heads;
    gat1_ = GatLayer::create(params, "gat.l0", config.d_model, f_prime, config.gat_heads,
                             rng, config.gat_leaky_slope);
    gat2_ = GatLayer::create(params, "gat.l1", config.d_model, f_prime, config.gat_heads,
                             rng, config.gat_leaky_slope);
    fuse_w_ = &params.add_uniform("fuse.w", {2 * config.d_model, config.d_model}, rng);
    fuse_b_ = &params.add("fuse.b", {config.d_model});
    for (int i = 0; i < config.enc_layers; ++i)
      temporal_.push_back(EncoderLayer::create(params, "enc.l" + std::to_string(i),
                                               config.d_model, config.heads,
                                               config.ffn_width(), rng));
    for (int i = 0; i < config.post_fusion_layers; ++i)
      post_fusion_.push_back(EncoderLayer::create(params, "post.l" + std::to_string(i),
                                                  config.d_model, config.heads,
                                                  config.ffn_width(), rng));
    for (int i = 0; i < config.dec_layers; ++i)
      decoder_.push_back(DecoderLayer::create(params, "dec.l" + std::to_string(i),
                                              config.d_model, config.heads,
                                              config.ffn_width(), rng));
    out_w_ = &params.add_uniform("out.w", {config.d_model, n_tokens}, rng);
    out_b_ = &params.add("out.b", {n_tokens});
  }

  // layer structs hold pointers into `params`; moves keep deque element
  // addresses stable, copies would not
  StatvtpredModel(const StatvtpredModel&) = delete;
  StatvtpredModel& operator=(const StatvtpredModel&) = delete;
  StatvtpredModel(StatvtpredModel&&) = default;
  StatvtpredModel& operator=(StatvtpredModel&&) = default;

  int n_tokens() const { return n_tokens_; }
  const NeighborMask& mask() const { return mask_; }

  /// Embedding plus position code for a token sequence.
  Tensor embed_with_positions(const std::vector<int>& tokens) const {
    return add(embedding(embedding_->tensor, tokens),
               positional_encoding(static_cast<int>(tokens.size()), config.d_model));
  }

  Tensor fuse(const Tensor& spatial, const Tensor& temporal) const {
    if (spatial.shape() != temporal.shape())
      fail("fuse: shape mismatch " + shape_str(spatial.shape()) + " vs " +
           shape_str(temporal.shape()));
    if (config.fusion_mode == "sum") return add(spatial, temporal);
    if (config.fusion_mode == "concat")
      return add_rowvec(matmul(concat_cols({spatial, temporal}), fuse_w_->tensor),
                        fuse_b_->tensor);
    fail("fuse: unknown mode '" + config.fusion_mode + "'");
  }

  /**
   * Encoder side: temporal (and optionally spatial) features fused and passed
   * through the post-fusion coding stage. Requires net/vocab when the GAT
   * path is on.
   */
  Tensor encode(const std::vector<int>& input_tokens, const RoadNetwork* net,
                const Vocabulary* vocab, bool training = false,
                Rng* rng = nullptr) const {
    if (input_tokens.empty()) fail("encode: empty input");
    const Tensor e = embed_with_positions(input_tokens);
    Tensor t = encoder_forward(temporal_, e, nullptr, config.dropout, training, rng,
                               config.prenorm);
    Tensor fused = t;
    if (config.use_gat) {
      if (net == nullptr || vocab == nullptr)
        fail("encode: the GAT path needs the road network and vocabulary");
      std::vector<std::int64_t> segments;
      segments.reserve(input_tokens.size());
      for (int tok : input_tokens) segments.push_back(vocab->segment(tok));
      const Tensor s = spatial_encode(
          gat1_, gat2_, segments, e, embedding_->tensor, *net, *vocab,
          config.gat_bidirectional, config.gat_self_loops, config.dropout, training,
          rng, GatActivation::kRelu);
      fused = fuse(s, t);
    }
    return encoder_forward(post_fusion_, fused, nullptr, config.dropout, training, rng,
                           config.prenorm);
  }

  /// Decoder side: logits [t x n_tokens] for a BOS-led token prefix.
  Tensor decode_logits(const Tensor& memory, const std::vector<int>& decoder_tokens,
                       bool training = false, Rng* rng = nullptr) const {
    if (decoder_tokens.empty()) fail("decode: empty decoder input");
    const int t = static_cast<int>(decoder_tokens.size());
    if (t > config.l_out)
      fail("decode: prefix of " + std::to_string(t) + " exceeds L_out " +
           std::to_string(config.l_out));
    Tensor y = embed_with_positions(decoder_tokens);
    y = decoder_forward(decoder_, y, memory, causal_mask(t), config.dropout, training,
                        rng, config.prenorm);
    return add_rowvec(matmul(y, out_w_->tensor), out_b_->tensor);
  }

  /**
   * logits [t x n_tokens]; decoder_tokens[0] is BOS by convention, so row k
   * scores the (k+1)-th output step.
   */
  Tensor forward(const std::vector<int>& input_tokens,
                 const std::vector<int>& decoder_tokens, const RoadNetwork* net,
                 const Vocabulary* vocab, bool training = false,
                 Rng* rng = nullptr) const {
    const Tensor memory = encode(input_tokens, net, vocab, training, rng);
    return decode_logits(memory, decoder_tokens, training, rng);
  }

  /**
   * Stepwise constrained decoding. Step 1's predecessor is the last input
   * token; afterwards each step is conditioned on its own previous output.
   */
  std::vector<int> greedy_decode(const std::vector<int>& input_tokens,
                                 const RoadNetwork* net, const Vocabulary* vocab,
                                 DecodeStats* stats = nullptr) const {
    NoGradGuard no_grad;
    if (input_tokens.empty()) fail("greedy_decode: empty input");
    const Tensor memory = encode(input_tokens, net, vocab, false, nullptr);
    std::vector<int> decoded;
    std::vector<int> dec_tokens{Vocabulary::kBos};
    int prev = input_tokens.back();
    for (int step = 0; step < config.l_out; ++step) {
      const Tensor logits = decode_logits(memory, dec_tokens, false, nullptr);
      std::vector<double> row(static_cast<std::size_t>(n_tokens_));
      const int last = logits.rows() - 1;
      for (int j = 0; j < n_tokens_; ++j) row[static_cast<std::size_t>(j)] = logits.at(last, j);
      int tok;
      bool fired = false;
      if (config.use_filter) {
        if (config.filter_on_logits) {
          // equivalent route: mask logits, softmax, renormalization implied
          bool any = false;
          std::vector<double> masked = row;
          for (int j = 0; j < n_tokens_; ++j) {
            if (mask_.at(prev, j))
              any = true;
            else
              masked[static_cast<std::size_t>(j)] = -std::numeric_limits<double>::infinity();
          }
          double kept_mass = 0.0;
          if (any) {
            const std::vector<double> p = softmax_values(row);
            for (int j = 0; j < n_tokens_; ++j)
              if (mask_.at(prev, j)) kept_mass += p[static_cast<std::size_t>(j)];
          }
          if (!any || kept_mass <= 0.0) {
            fired = true;
            tok = argmax_lowest_tie(softmax_values(row));
          } else {
            tok = argmax_lowest_tie(softmax_values(masked));
          }
        } else {
          const std::vector<double> probs = softmax_values(row);
          const std::vector<double> filtered = filter_probs(probs, prev, mask_, &fired);
          tok = argmax_lowest_tie(filtered);
        }
      } else {
        tok = argmax_lowest_tie(softmax_values(row));
      }
      if (stats != nullptr) {
        stats->steps += 1;
        stats->step_fired.push_back(fired ? 1 : 0);
        if (fired) stats->fallback_count += 1;
      }
      decoded.push_back(tok);
      dec_tokens.push_back(tok);
      prev = tok;
    }
    return decoded;
  }

  /// Teacher-forced cross-entropy of one sample over its L_out positions.
  Tensor sample_loss(const Sample& s, const RoadNetwork* net, const Vocabulary* vocab,
                     bool training, Rng* rng) const {
    if (static_cast<int>(s.target_tokens.size()) != config.l_out)
      fail("sample_loss: target length != L_out");
    std::vector<int> dec_tokens{Vocabulary::kBos};
    dec_tokens.insert(dec_tokens.end(), s.target_tokens.begin(),
                      s.target_tokens.end() - 1);
    const Tensor logits = forward(s.input_tokens, dec_tokens, net, vocab, training, rng);
    return cross_entropy(logits, s.target_tokens, Vocabulary::kPad);
  }

  ParamStore params;
  ModelConfig config;

 private:
  int n_tokens_ = 0;
  NeighborMask mask_;
  Parameter* embedding_ = nullptr;
  GatLayer gat1_, gat2_;
  Parameter* fuse_w_ = nullptr;
  Parameter* fuse_b_ = nullptr;
  std::vector<EncoderLayer> temporal_;
  std::vector<EncoderLayer> post_fusion_;
  std::vector<DecoderLayer> decoder_;
  Parameter* out_w_ = nullptr;
  Parameter* out_b_ = nullptr;

 public:
  // plain-Transformer composition over the same parameter objects; the
  // ablation identity (use_gat=false, use_filter=false) must match this
  // bit for bit
  Tensor baseline_forward(const std::vector<int>& input_tokens,
                          const std::vector<int>& decoder_tokens, bool training = false,
                          Rng* rng = nullptr) const {
    Tensor x = embed_with_positions(input_tokens);
    x = encoder_forward(temporal_, x, nullptr, config.dropout, training, rng,
                        config.prenorm);
    x = encoder_forward(post_fusion_, x, nullptr, config.dropout, training, rng,
                        config.prenorm);
    Tensor y = embed_with_positions(decoder_tokens);
    y = decoder_forward(decoder_, y, x,
                        causal_mask(static_cast<int>(decoder_tokens.size())),
                        config.dropout, training, rng, config.prenorm);
    return add_rowvec(matmul(y, out_w_->tensor), out_b_->tensor);
  }

  std::vector<int> baseline_greedy_decode(const std::vector<int>& input_tokens) const {
    NoGradGuard no_grad;
    Tensor x = embed_with_positions(input_tokens);
    x = encoder_forward(temporal_, x);
    const Tensor memory = encoder_forward(post_fusion_, x);
    std::vector<int> decoded;
    std::vector<int> dec_tokens{Vocabulary::kBos};
    for (int step = 0; step < config.l_out; ++step) {
      Tensor y = embed_with_positions(dec_tokens);
      y = decoder_forward(decoder_, y, memory,
                          causal_mask(static_cast<int>(dec_tokens.size())));
      const Tensor logits = add_rowvec(matmul(y, out_w_->tensor), out_b_->tensor);
      std::vector<double> row(static_cast<std::size_t>(n_tokens_));
      for (int j = 0; j < n_tokens_; ++j)
        row[static_cast<std::size_t>(j)] = logits.at(logits.rows() - 1, j);
      const int tok = argmax_lowest_tie(softmax_values(row));
      decoded.push_back(tok);
      dec_tokens.push_back(tok);
    }
    return decoded;
  }
};

// ---- training ----

struct TrainConfig {
  int batch_size = 100;
  int epochs = 40;
  double lr_factor = 0.5;
  int warmup_steps = 400;
  bool literal_lr = false;
  double weight_decay = 0.01;
  bool coupled_decay = false;
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const {
    return nlohmann::json{{"batch_size", batch_size},
                          {"epochs", epochs},
                          {"lr_factor", lr_factor},
                          {"warmup_steps", warmup_steps},
                          {"literal_lr", literal_lr},
                          {"weight_decay", weight_decay},
                          {"coupled_decay", coupled_decay},
                          {"grad_clip", grad_clip},
                          {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr_factor = j.value("lr_factor", c.lr_factor);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.literal_lr = j.value("literal_lr", c.literal_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.coupled_decay = j.value("coupled_decay", c.coupled_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_de = 0.0;
  double val_amr = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_amr = -1.0;
  bool diverged = false;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const EpochStats& e : epochs)
      rows.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_de", e.val_de},
                      {"val_amr", e.val_amr},
                      {"lr", e.lr}});
    return nlohmann::json{{"epochs", rows},
                          {"best_epoch", best_epoch},
                          {"best_val_amr", best_val_amr},
                          {"diverged", diverged}};
  }
};

/// Greedy-decodes every sample and scores it. Optionally returns raw
/// predictions and per-sample fallback flags.
inline EvalReport evaluate(const StatvtpredModel& model,
                           const std::vector<Sample>& samples, const RoadNetwork* net,
                           const Vocabulary* vocab,
                           std::vector<std::vector<int>>* preds_out = nullptr,
                           std::vector<std::uint8_t>* fallback_out = nullptr) {
  if (samples.empty()) fail("evaluate: no samples");
  std::vector<std::vector<int>> preds, targets;
  preds.reserve(samples.size());
  targets.reserve(samples.size());
  std::int64_t fallbacks = 0;
  for (const Sample& s : samples) {
    for (int tok : s.input_tokens)
      if (tok < Vocabulary::kFirstSegmentToken || tok >= model.n_tokens())
        fail("evaluate: input token outside the segment vocabulary: " +
             std::to_string(tok));
    DecodeStats ds;
    preds.push_back(model.greedy_decode(s.input_tokens, net, vocab, &ds));
    targets.push_back(s.target_tokens);
    fallbacks += ds.fallback_count;
    if (fallback_out != nullptr) fallback_out->push_back(ds.fallback_count > 0 ? 1 : 0);
  }
  if (preds_out != nullptr) *preds_out = preds;
  return score_predictions(preds, targets, model.config.l_out, fallbacks);
}

/**
 * Teacher-forced Adam training with the warmup schedule, per-epoch validation
 * scoring, and best-validation-AMR checkpoint retention. Deterministic for a
 * given seed. A non-finite batch loss aborts the run and restores the last
 * finished epoch's weights.
 */
inline TrainHistory train(StatvtpredModel& model, const std::vector<Sample>& train_set,
                          const std::vector<Sample>& val_set, const TrainConfig& cfg,
                          const RoadNetwork* net, const Vocabulary* vocab) {
  if (train_set.empty() || val_set.empty()) fail("train: empty split");
  Rng shuffle_rng(cfg.seed * 2654435761ULL + 1);
  Rng dropout_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 2);
  AdamConfig adam;
  adam.weight_decay = cfg.weight_decay;
  adam.coupled_decay = cfg.coupled_decay;
  adam.grad_clip = cfg.grad_clip;

  auto snapshot = [&] {
    std::vector<std::vector<double>> vals;
    for (std::size_t i = 0; i < model.params.size(); ++i)
      vals.push_back(model.params.at(i).tensor.values());
    return vals;
  };
  auto restore = [&](const std::vector<std::vector<double>>& vals) {
    for (std::size_t i = 0; i < model.params.size(); ++i)
      model.params.at(i).tensor.values() = vals[i];
  };

  TrainHistory history;
  std::vector<std::vector<double>> best_params = snapshot();
  std::vector<std::vector<double>> epoch_params = snapshot();
  std::int64_t step = 0;
  double lr = 0.0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    bool diverged = false;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      model.params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const Tensor loss =
            model.sample_loss(train_set[order[i]], net, vocab, true, &dropout_rng);
        batch_loss += loss.value_at(0);
        backward(loss, 1.0 / static_cast<double>(end - begin));
      }
      batch_loss /= static_cast<double>(end - begin);
      if (!std::isfinite(batch_loss)) {
        diverged = true;
        break;
      }
      step += 1;
      lr = lr_schedule(step, model.config.d_model, cfg.lr_factor, cfg.warmup_steps,
                       cfg.literal_lr);
      adam_step(model.params, adam, lr);
      loss_sum += batch_loss;
      ++n_batches;
    }
    if (diverged) {
      restore(epoch_params);
      history.diverged = true;
      break;
    }

    const EvalReport val = evaluate(model, val_set, net, vocab);
    EpochStats es;
    es.epoch = epoch;
    es.train_loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
    es.val_de = val.de;
    es.val_amr = val.amr;
    es.lr = lr;
    history.epochs.push_back(es);
    if (val.amr > history.best_val_amr) {
      history.best_val_amr = val.amr;
      history.best_epoch = epoch;
      best_params = snapshot();
    }
    epoch_params = snapshot();
  }

  if (history.best_epoch >= 0) restore(best_params);
  return history;
}

// ---- checkpoint files: <stem>.params (binary) + <stem>.json (metadata) ----

inline void save_checkpoint(const StatvtpredModel& model, const std::string& stem,
                            const std::string& vocab_ref) {
  {
    std::ofstream os(stem + ".params", std::ios::binary);
    if (!os) fail("cannot write " + stem + ".params");
    save_params(os, model.params);
  }
  nlohmann::json meta{{"format_version", 1},
                      {"model_config", model.config.to_json()},
                      {"n_tokens", model.n_tokens()},
                      {"vocab_ref", vocab_ref},
                      {"mask_hash", model.mask().hash()}};
  write_file(stem + ".json", meta.dump(2) + "\n");
}

/// Rebuilds the model from <stem>.json/.params. The mask recomputed from the
/// given network/vocabulary must hash to the stored value.
inline StatvtpredModel load_checkpoint(const std::string& stem, const RoadNetwork& net,
                                       const Vocabulary& vocab) {
  const nlohmann::json meta = nlohmann::json::parse(read_file(stem + ".json"));
  if (meta.at("format_version").get<int>() != 1)
    fail("checkpoint: unsupported format version");
  const ModelConfig cfg = ModelConfig::from_json(meta.at("model_config"));
  const int n_tokens = meta.at("n_tokens").get<int>();
  if (n_tokens != vocab.n_tokens())
    fail("checkpoint: vocabulary size mismatch: checkpoint " +
         std::to_string(n_tokens) + ", provided " + std::to_string(vocab.n_tokens()));
  NeighborMask mask = neighbor_mask(net, vocab);
  const auto stored_hash = meta.at("mask_hash").get<std::uint64_t>();
  if (mask.hash() != stored_hash)
    fail("checkpoint: neighbor mask mismatch; refusing to decode against a "
         "different road network or vocabulary");
  StatvtpredModel model(cfg, n_tokens, std::move(mask), /*seed=*/0);
  std::ifstream is(stem + ".params", std::ios::binary);
  if (!is) fail("cannot read " + stem + ".params");
  load_params(is, model.params);
  return model;
}

}  // namespace statvt::nn
