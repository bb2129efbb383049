#pragma once

// Dense 64-bit tensor engine with reverse-mode gradients. Small by design:
// rank 1/2 tensors and exactly the operations the models need, each with a
// hand-written backward closure. Single-threaded over one graph; independent
// graphs may run concurrently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "statvt/common.hpp"

namespace statvt::nn {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII scope that disables graph construction (inference / oracle evals).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline int numel_of(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (static_cast<int>(values.size()) != numel_of(shape))
      fail("tensor init: " + std::to_string(values.size()) + " values for shape " +
           shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return node != nullptr; }
  const std::vector<int>& shape() const { return node->shape; }
  int rank() const { return static_cast<int>(node->shape.size()); }
  int numel() const { return static_cast<int>(node->value.size()); }
  int rows() const { return node->shape.at(0); }
  int cols() const { return node->shape.at(1); }
  bool requires_grad() const { return node->requires_grad; }

  std::vector<double>& values() { return node->value; }
  const std::vector<double>& values() const { return node->value; }
  double value_at(std::size_t i) const { return node->value[i]; }
  double at(int i, int j) const {
    return node->value[static_cast<std::size_t>(i) * cols() + j];
  }

  std::vector<double>& grad() {
    node->ensure_grad();
    return node->grad;
  }
  const std::vector<double>& grad() const {
    node->ensure_grad();
    return node->grad;
  }

  void zero_grad() {
    if (node) node->grad.assign(node->value.size(), 0.0);
  }

  NodePtr node;
};

namespace detail {

template <typename Bw>
inline Tensor make_node(std::vector<int> shape, std::vector<double> value,
                        std::vector<NodePtr> parents, Bw&& bw) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode()) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::forward<Bw>(bw);
  }
  return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

// C[m x n] += A[m x k] * B[k x n]
inline void mm_nn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = a[l];
      const double* b = B + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void mm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a[l] * b[l];
      c[j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int l = 0; l < k; ++l) {
    const double* a = A + static_cast<std::size_t>(l) * m;
    const double* b = B + static_cast<std::size_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// ---- elementwise and shape algebra ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.values());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
  return detail::make_node(a.shape(), std::move(v), {a.node, b.node},
                           [pa = a.node, pb = b.node](TensorNode& self) {
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pa->grad[i] += self.grad[i];
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] += self.grad[i];
                             }
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.values());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.values()[i];
  return detail::make_node(a.shape(), std::move(v), {a.node, b.node},
                           [pa = a.node, pb = b.node](TensorNode& self) {
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pa->grad[i] += self.grad[i] * pb->value[i];
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] += self.grad[i] * pa->value[i];
                             }
                           });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= c;
  return detail::make_node(a.shape(), std::move(v), {a.node},
                           [pa = a.node, c](TensorNode& self) {
                             if (!pa->requires_grad) return;
                             pa->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               pa->grad[i] += c * self.grad[i];
                           });
}

/// X [n x d] + row vector b [d], broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.cols() != b.shape()[0])
    fail("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(b.shape()));
  const int n = x.rows(), d = x.cols();
  std::vector<double> v(x.values());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(i) * d + j] += b.values()[j];
  return detail::make_node(x.shape(), std::move(v), {x.node, b.node},
                           [px = x.node, pb = b.node, n, d](TensorNode& self) {
                             if (px->requires_grad) {
                               px->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 px->grad[i] += self.grad[i];
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < d; ++j)
                                   pb->grad[j] +=
                                       self.grad[static_cast<std::size_t>(i) * d + j];
                             }
                           });
}

/// C[i][j] = f[i] + g[j] for rank-1 f, g.
inline Tensor add_outer(const Tensor& f, const Tensor& g) {
  if (f.rank() != 1 || g.rank() != 1)
    fail("add_outer: expects rank-1 inputs, got " + shape_str(f.shape()) + " and " +
         shape_str(g.shape()));
  const int n = f.shape()[0], m = g.shape()[0];
  std::vector<double> v(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      v[static_cast<std::size_t>(i) * m + j] = f.values()[i] + g.values()[j];
  return detail::make_node({n, m}, std::move(v), {f.node, g.node},
                           [pf = f.node, pg = g.node, n, m](TensorNode& self) {
                             if (pf->requires_grad) {
                               pf->ensure_grad();
                               for (int i = 0; i < n; ++i) {
                                 double s = 0.0;
                                 for (int j = 0; j < m; ++j)
                                   s += self.grad[static_cast<std::size_t>(i) * m + j];
                                 pf->grad[i] += s;
                               }
                             }
                             if (pg->requires_grad) {
                               pg->ensure_grad();
                               for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < m; ++j)
                                   pg->grad[j] +=
                                       self.grad[static_cast<std::size_t>(i) * m + j];
                             }
                           });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("transpose: expects rank-2, got " + shape_str(a.shape()));
  const int r = a.rows(), c = a.cols();
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      v[static_cast<std::size_t>(j) * r + i] = a.values()[static_cast<std::size_t>(i) * c + j];
  return detail::make_node({c, r}, std::move(v), {a.node},
                           [pa = a.node, r, c](TensorNode& self) {
                             if (!pa->requires_grad) return;
                             pa->ensure_grad();
                             for (int i = 0; i < r; ++i)
                               for (int j = 0; j < c; ++j)
                                 pa->grad[static_cast<std::size_t>(i) * c + j] +=
                                     self.grad[static_cast<std::size_t>(j) * r + i];
                           });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  detail::mm_nn_acc(a.values().data(), b.values().data(), v.data(), m, k, n);
  return detail::make_node(
      {m, n}, std::move(v), {a.node, b.node},
      [pa = a.node, pb = b.node, m, k, n](TensorNode& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          detail::mm_nt_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          detail::mm_tn_acc(pa->value.data(), self.grad.data(), pb->grad.data(), k, m, n);
        }
      });
}

/// A [n x m] * v [m] -> [n]
inline Tensor matvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.cols() != v.shape()[0])
    fail("matvec: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(v.shape()));
  const int n = a.rows(), m = a.cols();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = a.values().data() + static_cast<std::size_t>(i) * m;
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += row[j] * v.values()[j];
    out[static_cast<std::size_t>(i)] = s;
  }
  return detail::make_node({n}, std::move(out), {a.node, v.node},
                           [pa = a.node, pv = v.node, n, m](TensorNode& self) {
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < m; ++j)
                                   pa->grad[static_cast<std::size_t>(i) * m + j] +=
                                       self.grad[i] * pv->value[j];
                             }
                             if (pv->requires_grad) {
                               pv->ensure_grad();
                               for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < m; ++j)
                                   pv->grad[j] +=
                                       self.grad[i] *
                                       pa->value[static_cast<std::size_t>(i) * m + j];
                             }
                           });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols: no inputs");
  const int r = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != r)
      fail("concat_cols: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
           shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<double> v(static_cast<std::size_t>(r) * total);
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(p.values().data() + static_cast<std::size_t>(i) * c, c,
                  v.data() + static_cast<std::size_t>(i) * total + off);
    off += c;
  }
  std::vector<NodePtr> parents;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    parents.push_back(p.node);
    widths.push_back(p.cols());
  }
  auto ps = parents;
  return detail::make_node(
      {r, total}, std::move(v), std::move(parents),
      [ps, widths, r, total](TensorNode& self) {
        int off2 = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
          const int c = widths[k];
          if (ps[k]->requires_grad) {
            ps[k]->ensure_grad();
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j)
                ps[k]->grad[static_cast<std::size_t>(i) * c + j] +=
                    self.grad[static_cast<std::size_t>(i) * total + off2 + j];
          }
          off2 += c;
        }
      });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_rows: no inputs");
  const int c = parts[0].cols();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.cols() != c)
      fail("concat_rows: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
           shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(total) * c);
  for (const Tensor& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  std::vector<NodePtr> parents;
  std::vector<int> heights;
  for (const Tensor& p : parts) {
    parents.push_back(p.node);
    heights.push_back(p.rows());
  }
  auto ps = parents;
  return detail::make_node(
      {total, c}, std::move(v), std::move(parents),
      [ps, heights, c](TensorNode& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
          const std::size_t sz = static_cast<std::size_t>(heights[k]) * c;
          if (ps[k]->requires_grad) {
            ps[k]->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i) ps[k]->grad[i] += self.grad[off + i];
          }
          off += sz;
        }
      });
}

/// Rows [r0, r0+n) of a rank-2 tensor (or elements of a rank-1 tensor).
inline Tensor slice_rows(const Tensor& x, int r0, int n) {
  if (x.rank() == 1) {
    if (r0 < 0 || n < 0 || r0 + n > x.shape()[0]) fail("slice_rows: out of range");
    std::vector<double> v(x.values().begin() + r0, x.values().begin() + r0 + n);
    return detail::make_node({n}, std::move(v), {x.node},
                             [px = x.node, r0, n](TensorNode& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (int i = 0; i < n; ++i)
                                 px->grad[static_cast<std::size_t>(r0 + i)] += self.grad[i];
                             });
  }
  if (x.rank() != 2 || r0 < 0 || n < 0 || r0 + n > x.rows())
    fail("slice_rows: out of range for " + shape_str(x.shape()));
  const int c = x.cols();
  std::vector<double> v(x.values().begin() + static_cast<std::size_t>(r0) * c,
                        x.values().begin() + static_cast<std::size_t>(r0 + n) * c);
  return detail::make_node({n, c}, std::move(v), {x.node},
                           [px = x.node, r0, n, c](TensorNode& self) {
                             if (!px->requires_grad) return;
                             px->ensure_grad();
                             const std::size_t base = static_cast<std::size_t>(r0) * c;
                             for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i)
                               px->grad[base + i] += self.grad[i];
                           });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_node({1}, {s}, {x.node}, [px = x.node](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (double& g : px->grad) g += self.grad[0];
  });
}

// ---- nonlinearities ----

inline Tensor relu(const Tensor& x) {
  std::vector<double> v(x.values());
  for (double& a : v) a = a > 0.0 ? a : 0.0;
  return detail::make_node(x.shape(), std::move(v), {x.node},
                           [px = x.node](TensorNode& self) {
                             if (!px->requires_grad) return;
                             px->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               if (px->value[i] > 0.0) px->grad[i] += self.grad[i];
                           });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) fail("leaky_relu: slope must be in (0, 1)");
  std::vector<double> v(x.values());
  for (double& a : v) a = a > 0.0 ? a : slope * a;
  return detail::make_node(x.shape(), std::move(v), {x.node},
                           [px = x.node, slope](TensorNode& self) {
                             if (!px->requires_grad) return;
                             px->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               px->grad[i] +=
                                   (px->value[i] > 0.0 ? 1.0 : slope) * self.grad[i];
                           });
}

/**
 * Row-wise softmax over the last dimension. -inf entries are masked out and
 * produce exactly 0; a fully masked row is rejected.
 */
inline Tensor softmax_rows(const Tensor& x) {
  const int d = x.shape().back();
  const int rows = x.numel() / d;
  std::vector<double> v(x.values().size());
  for (int i = 0; i < rows; ++i) {
    const double* in = x.values().data() + static_cast<std::size_t>(i) * d;
    double* out = v.data() + static_cast<std::size_t>(i) * d;
    double mx = kNegInf;
    for (int j = 0; j < d; ++j) mx = std::max(mx, in[j]);
    if (mx == kNegInf)
      fail("softmax: fully masked row " + std::to_string(i));
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      out[j] = in[j] == kNegInf ? 0.0 : std::exp(in[j] - mx);
      s += out[j];
    }
    for (int j = 0; j < d; ++j) out[j] /= s;
  }
  return detail::make_node(
      x.shape(), std::move(v), {x.node}, [px = x.node, rows, d](TensorNode& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const double* y = self.value.data() + static_cast<std::size_t>(i) * d;
          const double* gy = self.grad.data() + static_cast<std::size_t>(i) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += y[j] * gy[j];
          double* gx = px->grad.data() + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
      });
}

/// Per-row standardization (population variance) followed by affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  if (!(eps > 0.0)) fail("layer_norm: eps must be > 0");
  const int d = x.shape().back();
  if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 ||
      bias.shape()[0] != d)
    fail("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
         shape_str(bias.shape()) + " do not match width of " + shape_str(x.shape()));
  const int rows = x.numel() / d;
  std::vector<double> v(x.values().size());
  std::vector<double> inv_sd(static_cast<std::size_t>(rows));
  std::vector<double> xhat(x.values().size());
  for (int i = 0; i < rows; ++i) {
    const double* in = x.values().data() + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= d;
    const double s = 1.0 / std::sqrt(var + eps);
    inv_sd[static_cast<std::size_t>(i)] = s;
    for (int j = 0; j < d; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * d + j;
      xhat[idx] = (in[j] - mu) * s;
      v[idx] = gain.values()[j] * xhat[idx] + bias.values()[j];
    }
  }
  return detail::make_node(
      x.shape(), std::move(v), {x.node, gain.node, bias.node},
      [px = x.node, pg = gain.node, pb = bias.node, rows, d, inv_sd,
       xhat](TensorNode& self) {
        for (int i = 0; i < rows; ++i) {
          const double* gy = self.grad.data() + static_cast<std::size_t>(i) * d;
          const double* xh = xhat.data() + static_cast<std::size_t>(i) * d;
          if (pg->requires_grad) {
            pg->ensure_grad();
            for (int j = 0; j < d; ++j) pg->grad[j] += gy[j] * xh[j];
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (int j = 0; j < d; ++j) pb->grad[j] += gy[j];
          }
          if (px->requires_grad) {
            px->ensure_grad();
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int j = 0; j < d; ++j) {
              const double dxh = gy[j] * pg->value[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            double* gx = px->grad.data() + static_cast<std::size_t>(i) * d;
            const double s = inv_sd[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) {
              const double dxh = gy[j] * pg->value[j];
              gx[j] += s * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
          }
        }
      });
}

/// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
/// Identity in eval mode and at p = 0.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) fail("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep = 1.0 - p;
  std::vector<double> mask(x.values().size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : 1.0 / keep;
  std::vector<double> v(x.values());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  return detail::make_node(x.shape(), std::move(v), {x.node},
                           [px = x.node, mask](TensorNode& self) {
                             if (!px->requires_grad) return;
                             px->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               px->grad[i] += mask[i] * self.grad[i];
                           });
}

/// Row gather from a [n_tokens x d] table; gradients scatter-add into rows.
inline Tensor embedding(const Tensor& table, const std::vector<int>& tokens) {
  if (table.rank() != 2) fail("embedding: table must be rank-2");
  const int n = table.rows(), d = table.cols();
  std::vector<double> v(tokens.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= n)
      fail("embedding: token " + std::to_string(t) + " out of range [0, " +
           std::to_string(n) + ")");
    std::copy_n(table.values().data() + static_cast<std::size_t>(t) * d, d,
                v.data() + i * static_cast<std::size_t>(d));
  }
  return detail::make_node({static_cast<int>(tokens.size()), d}, std::move(v),
                           {table.node},
                           [pt = table.node, tokens, d](TensorNode& self) {
                             if (!pt->requires_grad) return;
                             pt->ensure_grad();
                             for (std::size_t i = 0; i < tokens.size(); ++i) {
                               double* dst = pt->grad.data() +
                                             static_cast<std::size_t>(tokens[i]) * d;
                               const double* src =
                                   self.grad.data() + i * static_cast<std::size_t>(d);
                               for (int j = 0; j < d; ++j) dst[j] += src[j];
                             }
                           });
}

/**
 * Mean negative log-softmax probability of the target tokens over positions
 * whose target differs from `ignore_token`.
 */
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_token) {
  if (logits.rank() != 2) fail("cross_entropy: logits must be rank-2");
  const int t = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != t)
    fail("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
         std::to_string(t) + " rows");
  int n_valid = 0;
  double total = 0.0;
  std::vector<double> lse(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    if (targets[static_cast<std::size_t>(i)] == ignore_token) continue;
    const int tok = targets[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= n)
      fail("cross_entropy: target " + std::to_string(tok) + " out of range");
    const double* row = logits.values().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    lse[static_cast<std::size_t>(i)] = mx + std::log(s);
    total += lse[static_cast<std::size_t>(i)] - row[tok];
    ++n_valid;
  }
  if (n_valid == 0) fail("cross_entropy: every position is ignored");
  const double loss = total / n_valid;
  return detail::make_node(
      {1}, {loss}, {logits.node},
      [pl = logits.node, targets, ignore_token, t, n, n_valid, lse](TensorNode& self) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const double g = self.grad[0] / n_valid;
        for (int i = 0; i < t; ++i) {
          if (targets[static_cast<std::size_t>(i)] == ignore_token) continue;
          const double* row = pl->value.data() + static_cast<std::size_t>(i) * n;
          double* gx = pl->grad.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double p = std::exp(row[j] - lse[static_cast<std::size_t>(i)]);
            gx[j] += g * (p - (j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
          }
        }
      });
}

// ---- reverse pass ----

inline void backward(const Tensor& root, double seed = 1.0) {
  TensorNode* r = root.node.get();
  if (!r->requires_grad) fail("backward: root does not require gradients");
  if (r->value.size() != 1) fail("backward: root must be scalar");
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{r, 0}};
  visited.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  r->ensure_grad();
  r->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace statvt::nn
