#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/tensor.hpp"

namespace statvt::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

/** A named trainable tensor with its optimizer state. */
struct Parameter {
  std::string name;
  Tensor tensor;          // leaf node, requires_grad = true
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::int64_t step = 0;
};

/** Owns parameters in creation order; order defines optimizer and checkpoint layout. */
class ParamStore {
 public:
  Parameter& add(std::string name, std::vector<int> shape) {
    for (const Parameter& p : params_)
      if (p.name == name) fail("duplicate parameter name: " + name);
    params_.emplace_back();
    Parameter& p = params_.back();
    p.name = std::move(name);
    p.tensor = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    return p;
  }

  /// uniform(-sqrt(1/fan_in), sqrt(1/fan_in)); fan_in = input width for
  /// [in x out] matrices, length for vectors.
  Parameter& add_uniform(std::string name, std::vector<int> shape, Rng& rng) {
    Parameter& p = add(std::move(name), std::move(shape));
    const int fan_in = p.tensor.shape()[0];
    const double bound = std::sqrt(1.0 / fan_in);
    for (double& x : p.tensor.values()) x = rng.uniform(-bound, bound);
    return p;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return params_[i]; }
  const Parameter& at(std::size_t i) const { return params_[i]; }

  Parameter* find(const std::string& name) {
    for (Parameter& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (Parameter& p : params_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (Parameter& p : params_) p.tensor.zero_grad();
  }

  std::int64_t numel() const {
    std::int64_t n = 0;
    for (const Parameter& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::deque<Parameter> params_;  // deque: stable addresses across add()
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool coupled_decay = false;  // default decoupled; coupled adds wd*p to the gradient
  double grad_clip = 0.0;      // global L2 clip; 0 disables
};

/// One Adam step over every parameter. Rejects non-finite gradients.
inline void adam_step(ParamStore& params, const AdamConfig& cfg, double lr) {
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (double g : params.at(i).tensor.grad()) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    auto& val = p.tensor.values();
    auto& grad = p.tensor.grad();
    if (p.m.size() != val.size()) p.m.assign(val.size(), 0.0);
    if (p.v.size() != val.size()) p.v.assign(val.size(), 0.0);
    p.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t k = 0; k < val.size(); ++k) {
      double g = grad[k] * clip_scale;
      if (!std::isfinite(g))
        fail("adam: non-finite gradient in parameter " + p.name);
      if (cfg.coupled_decay) g += cfg.weight_decay * val[k];
      p.m[k] = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * g;
      p.v[k] = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.m[k] / bc1;
      const double vhat = p.v[k] / bc2;
      val[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (!cfg.coupled_decay && cfg.weight_decay != 0.0)
        val[k] -= lr * cfg.weight_decay * val[k];
    }
  }
}

/**
 * Inverse-square-root warmup schedule:
 *   lr = factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
 * With `literal` the factor is used verbatim as a constant rate.
 */
inline double lr_schedule(std::int64_t step, int d_model, double factor,
                          int warmup_steps, bool literal) {
  if (literal) return factor;
  const double s = static_cast<double>(std::max<std::int64_t>(1, step));
  const double w = static_cast<double>(std::max(1, warmup_steps));
  return factor / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

// ---- checkpoint manifest ----
// "STVT" magic, u32 version, u64 count, then per parameter:
// u32 name_len, name bytes, u32 ndim, u32 dims[], raw little-endian f64 data.

inline void save_params(std::ostream& os, const ParamStore& params) {
  const char magic[4] = {'S', 'T', 'V', 'T'};
  os.write(magic, 4);
  const std::uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t count = params.size();
  os.write(reinterpret_cast<const char*>(&count), 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params.at(i);
    const std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
    os.write(reinterpret_cast<const char*>(&name_len), 4);
    os.write(p.name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(p.tensor.shape().size());
    os.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d : p.tensor.shape()) {
      const std::uint32_t dim = static_cast<std::uint32_t>(d);
      os.write(reinterpret_cast<const char*>(&dim), 4);
    }
    os.write(reinterpret_cast<const char*>(p.tensor.values().data()),
             static_cast<std::streamsize>(p.tensor.values().size() * sizeof(double)));
  }
}

/// Loads values into an existing store; names and shapes must match exactly.
inline void load_params(std::istream& is, ParamStore& params) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "STVT", 4) != 0) fail("checkpoint: bad magic");
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) fail("checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 8);
  if (count != params.size())
    fail("checkpoint: holds " + std::to_string(count) + " parameters, model has " +
         std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != p.name)
      fail("checkpoint: expected parameter " + p.name + ", found " + name);
    std::uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), 4);
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t dim = 0;
      is.read(reinterpret_cast<char*>(&dim), 4);
      shape[d] = static_cast<int>(dim);
    }
    if (shape != p.tensor.shape())
      fail("checkpoint: shape mismatch for " + p.name + ": " + shape_str(shape) +
           " vs " + shape_str(p.tensor.shape()));
    is.read(reinterpret_cast<char*>(p.tensor.values().data()),
            static_cast<std::streamsize>(p.tensor.values().size() * sizeof(double)));
    if (!is) fail("checkpoint: truncated data for " + p.name);
  }
}

/**
 * Central-difference gradient check. Runs one reverse pass of `f`, then
 * perturbs every coordinate of every listed parameter by +/-eps. Returns the
 * max relative error with denominators floored at 1e-8. Differences below the
 * central-difference noise floor (cancellation plus O(eps^2) truncation, well
 * under 1e-7 for the losses checked here) count as exact agreement; without
 * this, a coordinate whose true gradient is coincidentally ~1e-9 reports
 * pure estimator noise instead of a gradient defect.
 */
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Parameter*>& params, double eps = 1e-4) {
  constexpr double kNoiseFloor = 1e-7;
  for (Parameter* p : params) p->tensor.zero_grad();
  Tensor out = f();
  backward(out);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->tensor.grad());

  double max_rel = 0.0;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi]->tensor.values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double orig = vals[k];
      vals[k] = orig + eps;
      const double f_plus = f().value_at(0);
      vals[k] = orig - eps;
      const double f_minus = f().value_at(0);
      vals[k] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double ana = analytic[pi][k];
      const double diff = std::abs(numeric - ana);
      if (diff <= kNoiseFloor) continue;
      const double denom = std::max({std::abs(numeric), std::abs(ana), 1e-8});
      max_rel = std::max(max_rel, diff / denom);
    }
  }
  return max_rel;
}

}  // namespace statvt::nn
