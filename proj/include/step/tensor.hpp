#pragma once

// Dense f64 tensor engine with reverse-mode automatic differentiation.
// Row-major contiguous storage, copy-on-slice, single-threaded graphs.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "step/common.hpp"

namespace step {

using Shape = std::vector<int>;

inline int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // sized lazily; leaves accumulate across backward calls
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

#ifndef NDEBUG
inline void assert_finite(const std::vector<double>& v) {
  for (double x : v) assert(std::isfinite(x) && "non-finite value produced by forward op");
}
#else
inline void assert_finite(const std::vector<double>&) {}
#endif

// ---- raw kernels (no graph) -------------------------------------------------

// C (+)= A[m x p] * B[p x q]; ikj order keeps the inner loop contiguous.
inline void mm_nn(const double* a, const double* b, double* c, int m, int p, int q,
                  bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * q, 0.0);
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * q;
    const double* arow = a + static_cast<size_t>(i) * p;
    for (int k = 0; k < p; ++k) {
      const double av = arow[k];
      const double* brow = b + static_cast<size_t>(k) * q;
      for (int j = 0; j < q; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void transpose_raw(const double* a, double* t, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
}

// col has rows (c, ki, kj) and columns (ho, wo).
inline void im2col(const double* x, int ch, int h, int w, int kh, int kw, int stride, int pad,
                   int ho, int wo, double* col) {
  const int cols = ho * wo;
  for (int c = 0; c < ch; ++c) {
    const double* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * cols;
        for (int i = 0; i < ho; ++i) {
          const int yi = i * stride - pad + ki;
          const bool in_y = (yi >= 0 && yi < h);
          for (int j = 0; j < wo; ++j) {
            const int xj = j * stride - pad + kj;
            row[static_cast<size_t>(i) * wo + j] =
                (in_y && xj >= 0 && xj < w) ? xc[static_cast<size_t>(yi) * w + xj] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, int ch, int h, int w, int kh, int kw, int stride,
                       int pad, int ho, int wo, double* x) {
  const int cols = ho * wo;
  for (int c = 0; c < ch; ++c) {
    double* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * cols;
        for (int i = 0; i < ho; ++i) {
          const int yi = i * stride - pad + ki;
          if (yi < 0 || yi >= h) continue;
          for (int j = 0; j < wo; ++j) {
            const int xj = j * stride - pad + kj;
            if (xj < 0 || xj >= w) continue;
            xc[static_cast<size_t>(yi) * w + xj] += row[static_cast<size_t>(i) * wo + j];
          }
        }
      }
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make(std::move(shape), 0.0, requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    return make(std::move(shape), value, requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_size(shape) != static_cast<int>(data.size()))
      throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(shape_size(shape));
    for (double& v : d) v = dist(rng);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> d(shape_size(shape));
    for (double& v : d) v = dist(rng);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(node_->data.size()); }

  const std::vector<double>& data() const { return node_->data; }
  // Leaf initialization only; mutating a tensor already used in a graph is UB.
  std::vector<double>& mutable_data() { return node_->data; }

  double value() const {
    if (size() != 1) throw UsageError("value(): tensor is not a scalar, shape " + shape_str(shape()));
    return node_->data[0];
  }
  double at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw DimensionError("at(): index rank mismatch");
    size_t off = 0;
    int i = 0;
    for (int v : idx) {
      off = off * static_cast<size_t>(node_->shape[i]) + static_cast<size_t>(v);
      ++i;
    }
    return node_->data[off];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw UsageError("grad(): no gradient present; call backward first");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  // Same values, cut from the graph. Gradients never flow through.
  Tensor detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  Tensor clone(bool requires_grad) const {
    auto t = detach();
    t.set_requires_grad(requires_grad);
    return t;
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  static Tensor make(Shape shape, double fill, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->data.assign(static_cast<size_t>(shape_size(shape)), fill);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor result(Shape shape, std::vector<double> data,
                     std::vector<std::shared_ptr<Node>> parents,
                     std::function<void(Node&)> backward) {
  assert_finite(data);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] /= bd[i];
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] -= self.grad[i] * an->data[i] / (bn->data[i] * bn->data[i]);
    }
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  auto an = a.node();
  return detail::result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  auto an = a.node();
  return detail::result(a.shape(), std::move(out), {an}, [an, s](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return detail::result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  auto an = a.node();
  auto saved = std::make_shared<std::vector<double>>(out);
  return detail::result(a.shape(), std::move(out), {an}, [an, saved](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = (*saved)[i];
      an->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = std::log(v);
  auto an = a.node();
  return detail::result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / an->data[i];
  });
}

// Ties go to the first argument; fixed for determinism.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "minimum");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], bd[i]);
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = an->data[i] <= bn->data[i];
      if (take_a && an->requires_grad) {
        an->ensure_grad();
        an->grad[i] += self.grad[i];
      } else if (!take_a && bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[i] += self.grad[i];
      }
    }
  });
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "maximum");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], bd[i]);
  auto an = a.node(), bn = b.node();
  return detail::result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = an->data[i] >= bn->data[i];
      if (take_a && an->requires_grad) {
        an->ensure_grad();
        an->grad[i] += self.grad[i];
      } else if (!take_a && bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[i] += self.grad[i];
      }
    }
  });
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return detail::result({1}, {s}, {an}, [an](detail::Node& self) {
    an->ensure_grad();
    const double g = self.grad[0];
    for (double& v : an->grad) v += g;
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return detail::result({1}, {s * inv}, {an}, [an, inv](detail::Node& self) {
    an->ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& v : an->grad) v += g;
  });
}

// ---- shape ops --------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  auto an = a.node();
  return detail::result(std::move(shape), a.data(), {an}, [an](detail::Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.data().size());
  detail::transpose_raw(a.data().data(), out.data(), r, c);
  auto an = a.node();
  return detail::result({c, r}, std::move(out), {an}, [an, r, c](detail::Node& self) {
    an->ensure_grad();
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < r; ++j)
        an->grad[static_cast<size_t>(j) * c + i] += self.grad[static_cast<size_t>(i) * r + j];
  });
}

inline Tensor slice_rows(const Tensor& a, int begin, int count) {
  if (a.rank() != 2) throw DimensionError("slice_rows: expected rank-2");
  const int r = a.dim(0), c = a.dim(1);
  if (begin < 0 || count < 0 || begin + count > r)
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of " + std::to_string(r));
  std::vector<double> out(a.data().begin() + static_cast<size_t>(begin) * c,
                          a.data().begin() + static_cast<size_t>(begin + count) * c);
  auto an = a.node();
  return detail::result({count, c}, std::move(out), {an}, [an, begin, c](detail::Node& self) {
    an->ensure_grad();
    const size_t off = static_cast<size_t>(begin) * c;
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[off + i] += self.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, int begin, int count) {
  if (a.rank() != 2) throw DimensionError("slice_cols: expected rank-2");
  const int r = a.dim(0), c = a.dim(1);
  if (begin < 0 || count < 0 || begin + count > c)
    throw DimensionError("slice_cols: range out of bounds");
  std::vector<double> out(static_cast<size_t>(r) * count);
  for (int i = 0; i < r; ++i)
    std::copy_n(a.data().begin() + static_cast<size_t>(i) * c + begin, count,
                out.begin() + static_cast<size_t>(i) * count);
  auto an = a.node();
  return detail::result({r, count}, std::move(out), {an},
                        [an, begin, count, c, r](detail::Node& self) {
                          an->ensure_grad();
                          for (int i = 0; i < r; ++i)
                            for (int j = 0; j < count; ++j)
                              an->grad[static_cast<size_t>(i) * c + begin + j] +=
                                  self.grad[static_cast<size_t>(i) * count + j];
                        });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty input");
  const int c = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != c) throw DimensionError("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * c);
  std::vector<std::shared_ptr<detail::Node>> parents;
  std::vector<int> row_of_part;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
    row_of_part.push_back(p.dim(0));
  }
  return detail::result({rows, c}, std::move(out), parents,
                        [parents, row_of_part, c](detail::Node& self) {
                          size_t off = 0;
                          for (size_t p = 0; p < parents.size(); ++p) {
                            const size_t n = static_cast<size_t>(row_of_part[p]) * c;
                            if (parents[p]->requires_grad) {
                              parents[p]->ensure_grad();
                              for (size_t i = 0; i < n; ++i)
                                parents[p]->grad[i] += self.grad[off + i];
                            }
                            off += n;
                          }
                        });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  const int r = parts[0].dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) throw DimensionError("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(r) * cols);
  std::vector<std::shared_ptr<detail::Node>> parents;
  std::vector<int> width;
  int coff = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < r; ++i)
      std::copy_n(p.data().begin() + static_cast<size_t>(i) * w, w,
                  out.begin() + static_cast<size_t>(i) * cols + coff);
    coff += w;
    parents.push_back(p.node());
    width.push_back(w);
  }
  return detail::result({r, cols}, std::move(out), parents,
                        [parents, width, r, cols](detail::Node& self) {
                          int off = 0;
                          for (size_t p = 0; p < parents.size(); ++p) {
                            const int w = width[p];
                            if (parents[p]->requires_grad) {
                              parents[p]->ensure_grad();
                              for (int i = 0; i < r; ++i)
                                for (int j = 0; j < w; ++j)
                                  parents[p]->grad[static_cast<size_t>(i) * w + j] +=
                                      self.grad[static_cast<size_t>(i) * cols + off + j];
                            }
                            off += w;
                          }
                        });
}

// ---- linear algebra ---------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int m = a.dim(0), p = a.dim(1), p2 = b.dim(0), q = b.dim(1);
  if (p != p2)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * q);
  detail::mm_nn(a.data().data(), b.data().data(), out.data(), m, p, q, false);
  auto an = a.node(), bn = b.node();
  return detail::result({m, q}, std::move(out), {an, bn}, [an, bn, m, p, q](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      // dA += dC * B^T
      std::vector<double> bt(static_cast<size_t>(p) * q);
      detail::transpose_raw(bn->data.data(), bt.data(), p, q);
      detail::mm_nn(self.grad.data(), bt.data(), an->grad.data(), m, q, p, true);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      // dB += A^T * dC
      std::vector<double> at(static_cast<size_t>(m) * p);
      detail::transpose_raw(an->data.data(), at.data(), m, p);
      detail::mm_nn(at.data(), self.grad.data(), bn->grad.data(), p, m, q, true);
    }
  });
}

// x [rows x cols] + v broadcast over rows; v is [cols] or [1 x cols].
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2) throw DimensionError("add_rowvec: x must be rank-2");
  const int r = x.dim(0), c = x.dim(1);
  if (v.size() != c) throw DimensionError("add_rowvec: vector length mismatch");
  std::vector<double> out(x.data());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v.data()[j];
  auto xn = x.node(), vn = v.node();
  return detail::result({r, c}, std::move(out), {xn, vn}, [xn, vn, r, c](detail::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) vn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
    }
  });
}

// ---- softmax / layer norm ---------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range");
  const auto& sh = x.shape();
  int inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= sh[i];
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  const int n = sh[axis];
  std::vector<double> out(x.data().size());
  const double* xd = x.data().data();
  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) mx = std::max(mx, xd[base + static_cast<size_t>(i) * inner]);
      double denom = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(xd[base + static_cast<size_t>(i) * inner] - mx);
        out[base + static_cast<size_t>(i) * inner] = e;
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (int i = 0; i < n; ++i) out[base + static_cast<size_t>(i) * inner] *= inv;
    }
  }
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<double>>(out);
  return detail::result(sh, std::move(out), {xn},
                        [xn, saved, outer, inner, n](detail::Node& self) {
                          xn->ensure_grad();
                          const auto& y = *saved;
                          for (int o = 0; o < outer; ++o) {
                            for (int in = 0; in < inner; ++in) {
                              const size_t base = static_cast<size_t>(o) * n * inner + in;
                              double dot = 0.0;
                              for (int i = 0; i < n; ++i) {
                                const size_t ix = base + static_cast<size_t>(i) * inner;
                                dot += self.grad[ix] * y[ix];
                              }
                              for (int i = 0; i < n; ++i) {
                                const size_t ix = base + static_cast<size_t>(i) * inner;
                                xn->grad[ix] += y[ix] * (self.grad[ix] - dot);
                              }
                            }
                          }
                        });
}

// Normalizes each row of x [rows x cols] to zero mean / unit variance
// (population variance), then applies per-column gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  if (x.rank() != 2) throw DimensionError("layer_norm: x must be rank-2");
  const int r = x.dim(0), c = x.dim(1);
  if (gain.size() != c || bias.size() != c)
    throw DimensionError("layer_norm: gain/bias length mismatch");
  std::vector<double> out(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  const double* xd = x.data().data();
  const double* gd = gain.data().data();
  const double* bd = bias.data().data();
  for (int i = 0; i < r; ++i) {
    const double* row = xd + static_cast<size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= c;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = istd;
    for (int j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * istd;
      (*xhat)[static_cast<size_t>(i) * c + j] = xh;
      out[static_cast<size_t>(i) * c + j] = xh * gd[j] + bd[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return detail::result(
      {r, c}, std::move(out), {xn, gn, bn}, [xn, gn, bn, xhat, inv_std, r, c](detail::Node& self) {
        for (int i = 0; i < r; ++i) {
          const size_t off = static_cast<size_t>(i) * c;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int j = 0; j < c; ++j) gn->grad[j] += self.grad[off + j] * (*xhat)[off + j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < c; ++j) bn->grad[j] += self.grad[off + j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
            for (int j = 0; j < c; ++j) {
              const double dxh = self.grad[off + j] * gn->data[j];
              m1 += dxh;
              m2 += dxh * (*xhat)[off + j];
            }
            m1 /= c;
            m2 /= c;
            const double istd = (*inv_std)[i];
            for (int j = 0; j < c; ++j) {
              const double dxh = self.grad[off + j] * gn->data[j];
              xn->grad[off + j] += istd * (dxh - m1 - (*xhat)[off + j] * m2);
            }
          }
        }
      });
}

// ---- convolution ------------------------------------------------------------

namespace detail {
inline int conv_out_extent(int in, int k, int stride, int pad, const char* what) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0)
    throw DimensionError(std::string(what) + ": non-integral output extent for in=" +
                         std::to_string(in) + " k=" + std::to_string(k) + " stride=" +
                         std::to_string(stride) + " pad=" + std::to_string(pad));
  return span / stride + 1;
}
}  // namespace detail

// x [C x H x W], w [O x C x kh x kw]; cross-correlation.
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
  if (x.rank() != 3 || w.rank() != 4) throw DimensionError("conv2d: expected x rank-3, w rank-4");
  const int ch = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int oc = w.dim(0), wc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (wc != ch) throw DimensionError("conv2d: channel mismatch");
  const int ho = detail::conv_out_extent(h, kh, stride, pad, "conv2d");
  const int wo = detail::conv_out_extent(wd, kw, stride, pad, "conv2d");
  const int krows = ch * kh * kw, cols = ho * wo;
  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(krows) * cols);
  detail::im2col(x.data().data(), ch, h, wd, kh, kw, stride, pad, ho, wo, col->data());
  std::vector<double> out(static_cast<size_t>(oc) * cols);
  detail::mm_nn(w.data().data(), col->data(), out.data(), oc, krows, cols, false);
  auto xn = x.node(), wn = w.node();
  return detail::result(
      {oc, ho, wo}, std::move(out), {xn, wn},
      [xn, wn, col, ch, h, wd, kh, kw, stride, pad, ho, wo, oc, krows, cols](detail::Node& self) {
        if (wn->requires_grad) {
          wn->ensure_grad();
          std::vector<double> colt(static_cast<size_t>(cols) * krows);
          detail::transpose_raw(col->data(), colt.data(), krows, cols);
          detail::mm_nn(self.grad.data(), colt.data(), wn->grad.data(), oc, cols, krows, true);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<double> wt(static_cast<size_t>(krows) * oc);
          detail::transpose_raw(wn->data.data(), wt.data(), oc, krows);
          std::vector<double> dcol(static_cast<size_t>(krows) * cols);
          detail::mm_nn(wt.data(), self.grad.data(), dcol.data(), krows, oc, cols, false);
          detail::col2im_add(dcol.data(), ch, h, wd, kh, kw, stride, pad, ho, wo, xn->grad.data());
        }
      });
}

// Adjoint of conv2d: x [O x H x W], w [O x C x kh x kw] -> [C x H' x W']
// with H' = (H-1)*stride - 2*pad + kh.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
  if (x.rank() != 3 || w.rank() != 4)
    throw DimensionError("conv_transpose2d: expected x rank-3, w rank-4");
  const int oc = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (w.dim(0) != oc) throw DimensionError("conv_transpose2d: channel mismatch");
  const int ch = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h - 1) * stride - 2 * pad + kh;
  const int wo = (wd - 1) * stride - 2 * pad + kw;
  if (ho <= 0 || wo <= 0) throw DimensionError("conv_transpose2d: non-positive output extent");
  const int krows = ch * kh * kw, cols = h * wd;
  // out = col2im(W^T * x) over the geometry of the adjoint conv.
  std::vector<double> wt(static_cast<size_t>(krows) * oc);
  detail::transpose_raw(w.data().data(), wt.data(), oc, krows);
  std::vector<double> p(static_cast<size_t>(krows) * cols);
  detail::mm_nn(wt.data(), x.data().data(), p.data(), krows, oc, cols, false);
  std::vector<double> out(static_cast<size_t>(ch) * ho * wo, 0.0);
  detail::col2im_add(p.data(), ch, ho, wo, kh, kw, stride, pad, h, wd, out.data());
  auto xn = x.node(), wn = w.node();
  return detail::result(
      {ch, ho, wo}, std::move(out), {xn, wn},
      [xn, wn, ch, h, wd, kh, kw, stride, pad, ho, wo, oc, krows, cols](detail::Node& self) {
        std::vector<double> dcol(static_cast<size_t>(krows) * cols);
        detail::im2col(self.grad.data(), ch, ho, wo, kh, kw, stride, pad, h, wd, dcol.data());
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::mm_nn(wn->data.data(), dcol.data(), xn->grad.data(), oc, krows, cols, true);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          // dW = x * dcol^T
          std::vector<double> dcolt(static_cast<size_t>(cols) * krows);
          detail::transpose_raw(dcol.data(), dcolt.data(), krows, cols);
          detail::mm_nn(xn->data.data(), dcolt.data(), wn->grad.data(), oc, cols, krows, true);
        }
      });
}

// x [C x H x W] + per-channel bias b [C].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3) throw DimensionError("add_channel_bias: x must be rank-3");
  const int ch = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (b.size() != ch) throw DimensionError("add_channel_bias: bias length mismatch");
  std::vector<double> out(x.data());
  for (int c = 0; c < ch; ++c) {
    const double bv = b.data()[c];
    double* row = out.data() + static_cast<size_t>(c) * hw;
    for (int i = 0; i < hw; ++i) row[i] += bv;
  }
  auto xn = x.node(), bn = b.node();
  return detail::result(x.shape(), std::move(out), {xn, bn}, [xn, bn, ch, hw](detail::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int c = 0; c < ch; ++c) {
        double s = 0.0;
        const double* row = self.grad.data() + static_cast<size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) s += row[i];
        bn->grad[c] += s;
      }
    }
  });
}

// ---- backward ---------------------------------------------------------------

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw UsageError("backward: loss must be a scalar");
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reverse gives a topological order.
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  std::unordered_map<detail::Node*, int> state;  // 0 unseen, 1 open, 2 done
  stack.push_back({root.get(), 0});
  state[root.get()] = 1;
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx++].get();
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.push_back({p, 0});
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch per call; leaf grads accumulate across calls.
  for (detail::Node* n : order) {
    if (!n->is_leaf())
      n->grad.assign(n->data.size(), 0.0);
    else
      n->ensure_grad();
  }
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---- gradient checking ------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  int worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of d f / d inputs. f must be a pure scalar function
// of the given inputs. Relative error uses a small denominator floor so that
// roundoff noise on true-zero gradients does not register as failure.
inline GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
    double h = 1e-5, double denom_floor = 1e-4) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(t.clone(true));
  Tensor y = f(leaves);
  if (y.size() != 1) throw UsageError("grad_check: f must return a scalar");
  backward(y);

  GradCheckReport rep;
  for (size_t ti = 0; ti < leaves.size(); ++ti) {
    std::vector<Tensor> probe;
    probe.reserve(leaves.size());
    for (const auto& t : leaves) probe.push_back(t.detach());
    for (int i = 0; i < leaves[ti].size(); ++i) {
      const double x0 = probe[ti].data()[i];
      probe[ti].mutable_data()[i] = x0 + h;
      const double fp = f(probe).value();
      probe[ti].mutable_data()[i] = x0 - h;
      const double fm = f(probe).value();
      probe[ti].mutable_data()[i] = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = leaves[ti].has_grad() ? leaves[ti].grad()[i] : 0.0;
      const double rel =
          std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), denom_floor});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = static_cast<int>(ti);
        rep.worst_coord = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5, double denom_floor = 1e-4) {
  return grad_check([&f](const std::vector<Tensor>& v) { return f(v[0]); }, std::vector<Tensor>{x},
                    h, denom_floor);
}

// ---- non-differentiating helpers ---------------------------------------------

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// First maximum in row-major order (deterministic tie break).
inline int argmax_flat(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

}  // namespace step
