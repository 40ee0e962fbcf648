#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "sne/ad/kernels.hpp"
#include "sne/ad/tape.hpp"
#include "sne/error.hpp"

// Differentiable operators over 2-D tensors. Bias-style row vectors ([f] or
// [1 x f]) are the only broadcasting supported.
namespace sne::ad {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.rows() != b.rows())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

inline Tape::Node& node(const Tensor& t) { return t.tape().node(t.id()); }

// Gradient buffer of `t` if it participates in backward, else nullptr.
inline double* grad_of(const Tensor& t) {
  Tape::Node& n = node(t);
  return n.requires_grad ? n.grad.data() : nullptr;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw InvalidArgument("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tape& tape = a.tape();
  return tape.record("matmul", {m, n}, std::move(out), {a, b}, [a, b, &tape, m, k, n, id = tape.size()] {
    const double* g = tape.node(id).grad.data();
    if (double* ga = detail::grad_of(a)) kernels::gemm_nt(g, b.values().data(), ga, m, n, k);
    if (double* gb = detail::grad_of(b)) kernels::gemm_tn(a.values().data(), g, gb, k, m, n);
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  kernels::transpose(a.values().data(), out.data(), r, c);
  Tape& tape = a.tape();
  return tape.record("transpose", {c, r}, std::move(out), {a}, [a, &tape, r, c, id = tape.size()] {
    const double* g = tape.node(id).grad.data();
    double* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape& tape = a.tape();
  return tape.record("add", a.shape(), std::move(out), {a, b}, [a, b, &tape, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tape& tape = a.tape();
  return tape.record("sub", a.shape(), std::move(out), {a, b}, [a, b, &tape, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape& tape = a.tape();
  return tape.record("mul", a.shape(), std::move(out), {a, b}, [a, b, &tape, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    const auto& av = a.values();
    const auto& bv = b.values();
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  Tape& tape = a.tape();
  return tape.record("scale", a.shape(), std::move(out), {a}, [a, c, &tape, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    double* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

/// Gradient is passed where x > 0 and blocked where x <= 0.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tape& tape = a.tape();
  return tape.record("relu", a.shape(), std::move(out), {a}, [a, &tape, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    const auto& av = a.values();
    double* ga = detail::grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

/// x[n x f] + bias, with bias of shape [f] or [1 x f] added to every row.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.rows(), f = x.cols();
  if (bias.size() != f)
    throw InvalidArgument("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                          shape_string(x.shape()));
  std::vector<double> out(x.values());
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += bv[j];
  Tape& tape = x.tape();
  return tape.record("add_row", x.shape(), std::move(out), {x, bias},
                     [x, bias, &tape, n, f, id = tape.size()] {
                       const auto& g = tape.node(id).grad;
                       if (double* gx = detail::grad_of(x))
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       if (double* gb = detail::grad_of(bias))
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < f; ++j) gb[j] += g[i * f + j];
                     });
}

/// Feature-axis concatenation of [n x f_i] tensors.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidArgument("concat of zero tensors");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != n)
      throw InvalidArgument("concat: leading dimension " + std::to_string(t.rows()) + " != " +
                            std::to_string(n));
    widths.push_back(t.cols());
    total += t.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * widths[p], widths[p], out.data() + i * total + offset);
    offset += widths[p];
  }
  Tape& tape = parts.front().tape();
  return tape.record("concat", {n, total}, std::move(out), parts,
                     [parts, widths, &tape, n, total, id = tape.size()] {
                       const auto& g = tape.node(id).grad;
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < parts.size(); ++p) {
                         if (double* gp = detail::grad_of(parts[p]))
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < widths[p]; ++j)
                               gp[i * widths[p] + j] += g[i * total + off + j];
                         off += widths[p];
                       }
                     });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t n = x.rows(), f = x.cols();
  if (start + count > f) throw InvalidArgument("slice_cols: range exceeds " + shape_string(x.shape()));
  std::vector<double> out(n * count);
  const auto& v = x.values();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(v.data() + i * f + start, count, out.data() + i * count);
  Tape& tape = x.tape();
  return tape.record("slice_cols", {n, count}, std::move(out), {x},
                     [x, &tape, n, f, start, count, id = tape.size()] {
                       const auto& g = tape.node(id).grad;
                       double* gx = detail::grad_of(x);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < count; ++j) gx[i * f + start + j] += g[i * count + j];
                     });
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t n = x.rows(), f = x.cols();
  if (start + count > n) throw InvalidArgument("slice_rows: range exceeds " + shape_string(x.shape()));
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(start * f),
                          x.values().begin() + static_cast<std::ptrdiff_t>((start + count) * f));
  Tape& tape = x.tape();
  return tape.record("slice_rows", {count, f}, std::move(out), {x},
                     [x, &tape, f, start, id = tape.size()] {
                       const auto& g = tape.node(id).grad;
                       double* gx = detail::grad_of(x) + start * f;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

/// Row gather: out[i] = x[indices[i]]. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, std::shared_ptr<const std::vector<std::uint32_t>> indices) {
  const std::size_t n = x.rows(), f = x.cols(), m = indices->size();
  std::vector<double> out(m * f);
  const auto& v = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t src = (*indices)[i];
    if (src >= n) throw InvalidArgument("gather_rows: index " + std::to_string(src) + " out of range");
    std::copy_n(v.data() + src * f, f, out.data() + i * f);
  }
  Tape& tape = x.tape();
  return tape.record("gather_rows", {m, f}, std::move(out), {x}, [x, indices, &tape, f, m, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    double* gx = detail::grad_of(x);
    for (std::size_t i = 0; i < m; ++i) {
      double* dst = gx + (*indices)[i] * f;
      const double* src = g.data() + i * f;
      for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
    }
  });
}

/// x viewed as [n x group x f]; max over the group axis. Gradient goes to the
/// first maximal slot only.
inline Tensor reduce_max(const Tensor& x, std::size_t group) {
  if (group == 0) throw InvalidArgument("reduce_max over an empty axis");
  const std::size_t total = x.rows(), f = x.cols();
  if (total % group != 0)
    throw InvalidArgument("reduce_max: " + std::to_string(total) + " rows not divisible by group " +
                          std::to_string(group));
  const std::size_t n = total / group;
  const auto& v = x.values();
  std::vector<double> out(n * f);
  std::vector<std::uint32_t> argmax(n * f);
  for (std::size_t i = 0; i < n; ++i) {
    const double* base = v.data() + i * group * f;
    for (std::size_t j = 0; j < f; ++j) {
      double best = base[j];
      std::uint32_t arg = 0;
      for (std::size_t s = 1; s < group; ++s) {
        const double c = base[s * f + j];
        if (c > best) {
          best = c;
          arg = static_cast<std::uint32_t>(s);
        }
      }
      out[i * f + j] = best;
      argmax[i * f + j] = arg;
    }
  }
  Tape& tape = x.tape();
  return tape.record("reduce_max", {n, f}, std::move(out), {x},
                     [x, argmax = std::move(argmax), &tape, group, n, f, id = tape.size()] {
                       const auto& g = tape.node(id).grad;
                       double* gx = detail::grad_of(x);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < f; ++j)
                           gx[(i * group + argmax[i * f + j]) * f + j] += g[i * f + j];
                     });
}

/// Max over all rows: [n x f] -> [1 x f].
inline Tensor max_rows(const Tensor& x) { return reduce_max(x, x.rows()); }

/// Row-wise softmax with max subtraction. With a mask ([n x m], nonzero =
/// attend), masked entries get probability exactly 0.
inline Tensor softmax_rows(const Tensor& x,
                           std::shared_ptr<const std::vector<std::uint8_t>> mask = nullptr) {
  const std::size_t n = x.rows(), m = x.cols();
  if (mask && mask->size() != n * m) throw InvalidArgument("softmax_rows: mask shape mismatch");
  const auto& v = x.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * m;
    double* o = out.data() + i * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (!mask || (*mask)[i * m + j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw InvalidArgument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask && !(*mask)[i * m + j]) continue;
      o[j] = std::exp(row[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < m; ++j) o[j] *= inv;
  }
  Tape& tape = x.tape();
  return tape.record("softmax_rows", x.shape(), std::move(out), {x}, [x, &tape, n, m, id = tape.size()] {
    const auto& node = tape.node(id);
    const auto& y = node.value;
    const auto& g = node.grad;
    double* gx = detail::grad_of(x);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - s);
    }
  });
}

/// Per-row standardization followed by the affine gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t n = x.rows(), f = x.cols();
  if (f == 0) throw InvalidArgument("layer_norm over zero features");
  if (gamma.size() != f || beta.size() != f) throw InvalidArgument("layer_norm: affine shape mismatch");
  const auto& v = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(n * f), xhat(n * f), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * f;
    double mean = 0.0;
    for (std::size_t j = 0; j < f; ++j) mean += row[j];
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t j = 0; j < f; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(f);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < f; ++j) {
      xhat[i * f + j] = (row[j] - mean) * inv_std[i];
      out[i * f + j] = gv[j] * xhat[i * f + j] + bv[j];
    }
  }
  Tape& tape = x.tape();
  return tape.record(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), &tape, n, f, id = tape.size()] {
        const auto& g = tape.node(id).grad;
        const auto& gv = gamma.values();
        double* gx = detail::grad_of(x);
        double* gg = detail::grad_of(gamma);
        double* gb = detail::grad_of(beta);
        const double inv_f = 1.0 / static_cast<double>(f);
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data() + i * f;
          const double* xi = xhat.data() + i * f;
          if (gg)
            for (std::size_t j = 0; j < f; ++j) gg[j] += gi[j] * xi[j];
          if (gb)
            for (std::size_t j = 0; j < f; ++j) gb[j] += gi[j];
          if (gx) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < f; ++j) {
              const double d = gi[j] * gv[j];
              mean_d += d;
              mean_dx += d * xi[j];
            }
            mean_d *= inv_f;
            mean_dx *= inv_f;
            for (std::size_t j = 0; j < f; ++j)
              gx[i * f + j] += inv_std[i] * (gi[j] * gv[j] - mean_d - xi[j] * mean_dx);
          }
        }
      });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tape& tape = x.tape();
  return tape.record("sum", {1, 1}, {s}, {x}, [x, &tape, id = tape.size()] {
    const double g = tape.node(id).grad[0];
    double* gx = detail::grad_of(x);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw InvalidArgument("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

/// Row-wise cross products of two [n x 3] tensors.
inline Tensor cross_rows(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("cross_rows", a, b);
  if (a.cols() != 3) throw InvalidArgument("cross_rows needs 3 columns");
  const std::size_t n = a.rows();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = av.data() + 3 * i;
    const double* q = bv.data() + 3 * i;
    out[3 * i + 0] = p[1] * q[2] - p[2] * q[1];
    out[3 * i + 1] = p[2] * q[0] - p[0] * q[2];
    out[3 * i + 2] = p[0] * q[1] - p[1] * q[0];
  }
  Tape& tape = a.tape();
  return tape.record("cross_rows", a.shape(), std::move(out), {a, b}, [a, b, &tape, n, id = tape.size()] {
    const auto& g = tape.node(id).grad;
    const auto& av = a.values();
    const auto& bv = b.values();
    double* ga = detail::grad_of(a);
    double* gb = detail::grad_of(b);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = av.data() + 3 * i;
      const double* q = bv.data() + 3 * i;
      const double* d = g.data() + 3 * i;
      // d(p x q)/dp applied to d is q x d; d/dq gives d x p.
      if (ga) {
        ga[3 * i + 0] += q[1] * d[2] - q[2] * d[1];
        ga[3 * i + 1] += q[2] * d[0] - q[0] * d[2];
        ga[3 * i + 2] += q[0] * d[1] - q[1] * d[0];
      }
      if (gb) {
        gb[3 * i + 0] += d[1] * p[2] - d[2] * p[1];
        gb[3 * i + 1] += d[2] * p[0] - d[0] * p[2];
        gb[3 * i + 2] += d[0] * p[1] - d[1] * p[0];
      }
    }
  });
}

/// Euclidean norm of each row: [n x f] -> [n x 1]. Zero rows get a zero
/// gradient.
inline Tensor row_norms(const Tensor& x) {
  const std::size_t n = x.rows(), f = x.cols();
  const auto& v = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += v[i * f + j] * v[i * f + j];
    out[i] = std::sqrt(s);
  }
  Tape& tape = x.tape();
  return tape.record("row_norms", {n, 1}, std::move(out), {x}, [x, &tape, n, f, id = tape.size()] {
    const auto& node = tape.node(id);
    const auto& v = x.values();
    double* gx = detail::grad_of(x);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = node.value[i];
      if (!(r > 0.0)) continue;
      const double s = node.grad[i] / r;
      for (std::size_t j = 0; j < f; ++j) gx[i * f + j] += s * v[i * f + j];
    }
  });
}

/// Divides each row by max(norm, floor).
inline Tensor normalize_rows(const Tensor& x, double floor = 1e-12) {
  const std::size_t n = x.rows(), f = x.cols();
  const auto& v = x.values();
  std::vector<double> out(n * f), denom(n);
  std::vector<std::uint8_t> clamped(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += v[i * f + j] * v[i * f + j];
    const double r = std::sqrt(s);
    clamped[i] = r < floor;
    denom[i] = clamped[i] ? floor : r;
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] = v[i * f + j] / denom[i];
  }
  Tape& tape = x.tape();
  return tape.record("normalize_rows", x.shape(), std::move(out), {x},
                     [x, denom = std::move(denom), clamped = std::move(clamped), &tape, n, f, id = tape.size()] {
                       const auto& node = tape.node(id);
                       const auto& y = node.value;
                       const auto& g = node.grad;
                       double* gx = detail::grad_of(x);
                       for (std::size_t i = 0; i < n; ++i) {
                         double yg = 0.0;
                         if (!clamped[i])
                           for (std::size_t j = 0; j < f; ++j) yg += y[i * f + j] * g[i * f + j];
                         for (std::size_t j = 0; j < f; ++j)
                           gx[i * f + j] += (g[i * f + j] - y[i * f + j] * yg) / denom[i];
                       }
                     });
}

}  // namespace sne::ad
