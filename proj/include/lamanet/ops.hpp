#pragma once
/*
 * Differentiable primitives.
 *
 * Shape rules:
 *  - add/sub/mul need identical shapes. Use broadcast_to() to expand an
 *    operand first; nothing broadcasts implicitly.
 *  - broadcast_to() follows right-aligned rules: each source extent must be 1
 *    or equal to the target extent; missing leading axes are added.
 *  - matmul accepts (n,k)x(k,m), (b,n,k)x(b,k,m) and (b,n,k)x(k,m).
 *  - transpose swaps the last two axes.
 */

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lamanet/tensor.hpp"

namespace lamanet {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline std::size_t normalize_axis(const Tensor& x, long axis, const char* op) {
  const long r = static_cast<long>(x.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + to_string(x.shape()));
  }
  return static_cast<std::size_t>(axis);
}

/// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * deriv(in[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

/// s * x
inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

/// x + c for a constant c.
inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

/// Identity on the forward pass; multiplies the incoming gradient by -weight.
inline Tensor gradient_reversal(const Tensor& x, double weight) {
  return detail::unary(x, [](double v) { return v; }, [weight](double, double) { return -weight; });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return detail::make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), {x},
                             [](detail::Node& self) {
                               if (double* g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                             });
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank < 2 for " + to_string(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t rows = x.dim(r - 2), cols = x.dim(r - 1);
  const std::size_t batch = x.numel() / (rows * cols);
  Shape out_shape = x.shape();
  std::swap(out_shape[r - 2], out_shape[r - 1]);
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[b * rows * cols + j * rows + i] = in[b * rows * cols + i * cols + j];
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [batch, rows, cols](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          g[b * rows * cols + i * cols + j] += self.grad[b * rows * cols + j * rows + i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != ax && p.dim(i) != parts[0].dim(i)) {
        throw ShapeError("concat: incompatible shapes " + to_string(parts[0].shape()) + " and " + to_string(p.shape()));
      }
    }
    out_shape[ax] += p.dim(ax);
  }
  const auto split = detail::split_at(out_shape, ax);
  std::vector<std::size_t> offsets;
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(ax) * split.inner;
    const auto in = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(in.begin() + static_cast<long>(o * chunk), chunk,
                  out.begin() + static_cast<long>(o * split.extent * split.inner + offset * split.inner));
    offset += p.dim(ax);
  }
  return detail::make_result(std::move(out_shape), std::move(out), parts,
                             [split, offsets, ax](detail::Node& self) {
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 double* g = detail::input_grad(self, k);
                                 if (!g) continue;
                                 const std::size_t chunk = self.inputs[k]->shape[ax] * split.inner;
                                 for (std::size_t o = 0; o < split.outer; ++o) {
                                   const double* src =
                                       self.grad.data() + o * split.extent * split.inner + offsets[k] * split.inner;
                                   for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                 }
                               }
                             });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, long axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::normalize_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(ax)) {
    throw ShapeError("slice: bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ") for " +
                     to_string(x.shape()));
  }
  const auto split = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * split.inner;
  std::vector<double> out(numel(out_shape));
  const auto in = x.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(in.begin() + static_cast<long>(o * split.extent * split.inner + begin * split.inner), chunk,
                out.begin() + static_cast<long>(o * chunk));
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [split, chunk, begin](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* dst = g + o * split.extent * split.inner + begin * split.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
    }
  });
}

/// Right-aligned broadcast to `shape`.
inline Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.rank() > shape.size()) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  const std::size_t lead = shape.size() - x.rank();
  std::vector<std::size_t> strides(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = x.rank(); i-- > 0;) {
    const std::size_t d = x.dim(i);
    if (d != 1 && d != shape[lead + i]) {
      throw ShapeError("broadcast_to: cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
    }
    strides[lead + i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const std::size_t n = numel(shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    src[k] = off;
    for (std::size_t a = shape.size(); a-- > 0;) {
      ++idx[a];
      off += strides[a];
      if (idx[a] < shape[a]) break;
      off -= strides[a] * idx[a];
      idx[a] = 0;
    }
  }
  std::vector<double> out(n);
  const auto in = x.values();
  for (std::size_t k = 0; k < n; ++k) out[k] = in[src[k]];
  return detail::make_result(shape, std::move(out), {x}, [src = std::move(src)](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += self.grad[k];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result({}, {s}, {x}, [](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

/// Sum over one axis; the axis is removed from the result.
inline Tensor sum(const Tensor& x, long axis) {
  const std::size_t ax = detail::normalize_axis(x, axis, "sum");
  const auto split = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  std::vector<double> out(split.outer * split.inner, 0.0);
  const auto in = x.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t e = 0; e < split.extent; ++e)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += in[(o * split.extent + e) * split.inner + i];
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [split](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < split.extent; ++e)
        for (std::size_t i = 0; i < split.inner; ++i)
          g[(o * split.extent + e) * split.inner + i] += self.grad[o * split.inner + i];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor mean(const Tensor& x, long axis) {
  const std::size_t ax = detail::normalize_axis(x, axis, "mean");
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(ax)));
}

/// Sum of squares of all elements.
inline Tensor squared_l2_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  return detail::make_result({}, {s}, {x}, [](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) g[i] += 2.0 * in[i] * self.grad[0];
  });
}

inline Tensor softmax(const Tensor& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(x, axis, "softmax");
  const auto split = detail::split_at(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      double mx = in[base];
      for (std::size_t e = 1; e < split.extent; ++e) mx = std::max(mx, in[base + e * split.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < split.extent; ++e) {
        const double v = std::exp(in[base + e * split.inner] - mx);
        out[base + e * split.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < split.extent; ++e) out[base + e * split.inner] /= z;
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [split](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        const std::size_t base = o * split.extent * split.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < split.extent; ++e) dot += self.grad[base + e * split.inner] * y[base + e * split.inner];
        for (std::size_t e = 0; e < split.extent; ++e) {
          const std::size_t k = base + e * split.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using detail::ConstMap;
  using detail::MutMap;
  std::size_t batch = 1, n = 0, k = 0, m = 0;
  bool shared_rhs = true;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) {
    n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    out_shape = {n, m};
  } else if (a.rank() == 3 && b.rank() == 2) {
    batch = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    out_shape = {batch, n, m};
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
      throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    shared_rhs = false;
    out_shape = {batch, n, m};
  } else {
    throw ShapeError("matmul: unsupported ranks " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }

  std::vector<double> out(batch * n * m);
  if (shared_rhs) {
    // A shared right operand folds the batch into the row dimension.
    MutMap(out.data(), static_cast<long>(batch * n), static_cast<long>(m)).noalias() =
        ConstMap(a.values().data(), static_cast<long>(batch * n), static_cast<long>(k)) *
        ConstMap(b.values().data(), static_cast<long>(k), static_cast<long>(m));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap(out.data() + i * n * m, static_cast<long>(n), static_cast<long>(m)).noalias() =
          ConstMap(a.values().data() + i * n * k, static_cast<long>(n), static_cast<long>(k)) *
          ConstMap(b.values().data() + i * k * m, static_cast<long>(k), static_cast<long>(m));
    }
  }

  return detail::make_result(std::move(out_shape), std::move(out), {a, b},
                             [batch, n, k, m, shared_rhs](detail::Node& self) {
                               const double* av = self.inputs[0]->value.data();
                               const double* bv = self.inputs[1]->value.data();
                               double* ga = detail::input_grad(self, 0);
                               double* gb = detail::input_grad(self, 1);
                               const long ln = static_cast<long>(n), lk = static_cast<long>(k),
                                          lm = static_cast<long>(m);
                               if (shared_rhs) {
                                 const long rows = static_cast<long>(batch) * ln;
                                 ConstMap g(self.grad.data(), rows, lm);
                                 if (ga) MutMap(ga, rows, lk).noalias() += g * ConstMap(bv, lk, lm).transpose();
                                 if (gb) MutMap(gb, lk, lm).noalias() += ConstMap(av, rows, lk).transpose() * g;
                                 return;
                               }
                               for (std::size_t i = 0; i < batch; ++i) {
                                 ConstMap g(self.grad.data() + i * n * m, ln, lm);
                                 if (ga)
                                   MutMap(ga + i * n * k, ln, lk).noalias() +=
                                       g * ConstMap(bv + i * k * m, lk, lm).transpose();
                                 if (gb)
                                   MutMap(gb + i * k * m, lk, lm).noalias() +=
                                       ConstMap(av + i * n * k, ln, lk).transpose() * g;
                               }
                             });
}

/// D[i,j] = ||a_i - b_j||^2 for row sets A (n,d) and B (m,d).
inline Tensor pairwise_squared_distance(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("pairwise_squared_distance: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<double> out(n * m);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = av[i * d + c] - bv[j * d + c];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  return detail::make_result({n, m}, std::move(out), {a, b}, [n, m, d](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    double* ga = detail::input_grad(self, 0);
    double* gb = detail::input_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double w = 2.0 * self.grad[i * m + j];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = av[i * d + c] - bv[j * d + c];
          if (ga) ga[i * d + c] += w * diff;
          if (gb) gb[j * d + c] -= w * diff;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Conveniences composed from the primitives above

/// x + b with b broadcast over the leading axes of x.
inline Tensor add_bias(const Tensor& x, const Tensor& b) { return add(x, broadcast_to(b, x.shape())); }

/// 1 - x
inline Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace lamanet
