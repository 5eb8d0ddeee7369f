// SPDX-License-Identifier: Apache-2.0
#include "ppa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ppa {

namespace kernels {

namespace {

typedef float Lane8 __attribute__((vector_size(32), aligned(4)));

inline Lane8 load8(const float* p) { return *reinterpret_cast<const Lane8*>(p); }
inline void store8(float* p, Lane8 v) { *reinterpret_cast<Lane8*>(p) = v; }

// Computes rows [i0, i0 + R) of C. Every element is c0 + a[i][0] b[0][j] +
// a[i][1] b[1][j] + ... in that order, whatever R is and whichever column
// path handles it, so a row's result never depends on its neighbours.
template <int R>
void gemm_rows(const float* a, const float* b, float* c, int i0, int k, int n, bool accumulate) {
  const float* arow[R];
  float* crow[R];
  for (int r = 0; r < R; ++r) {
    arow[r] = a + static_cast<std::size_t>(i0 + r) * k;
    crow[r] = c + static_cast<std::size_t>(i0 + r) * n;
  }
  int j = 0;
  for (; j + 16 <= n; j += 16) {
    Lane8 acc[R][2];
    for (int r = 0; r < R; ++r) {
      acc[r][0] = accumulate ? load8(crow[r] + j) : Lane8{};
      acc[r][1] = accumulate ? load8(crow[r] + j + 8) : Lane8{};
    }
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<std::size_t>(p) * n + j;
      const Lane8 b0 = load8(brow), b1 = load8(brow + 8);
      for (int r = 0; r < R; ++r) {
        const float s = arow[r][p];
        acc[r][0] += s * b0;
        acc[r][1] += s * b1;
      }
    }
    for (int r = 0; r < R; ++r) {
      store8(crow[r] + j, acc[r][0]);
      store8(crow[r] + j + 8, acc[r][1]);
    }
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      float acc = accumulate ? crow[r][j] : 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[r][p] * b[static_cast<std::size_t>(p) * n + j];
      crow[r][j] = acc;
    }
  }
}

}  // namespace

// Dot product with eight interleaved partial sums combined in a fixed order.
float dot(const float* a, const float* b, int n) {
  Lane8 acc{};
  int c = 0;
  for (; c + 8 <= n; c += 8) acc += load8(a + c) * load8(b + c);
  float tail = 0.0f;
  for (; c < n; ++c) tail += a[c] * b[c];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

namespace {

std::vector<float> transpose_copy(const float* x, int rows, int cols) {
  std::vector<float> t(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
  return t;
}

}  // namespace

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(a, b, c, i, k, n, accumulate);
  for (; i < m; ++i) gemm_rows<1>(a, b, c, i, k, n, accumulate);
}

void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  const std::vector<float> at = transpose_copy(a, m, k);
  gemm(at.data(), b, c, k, m, n, true);
}

void gemm_nt_acc(const float* a, const float* b, float* c, int m, int n, int k) {
  const std::vector<float> bt = transpose_copy(b, k, n);
  gemm(a, bt.data(), c, m, n, k, true);
}

}  // namespace kernels

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752f;

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound Var");
  return *a.tape;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands recorded on different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  float* d = dst.ptr();
  const float* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

Tensor transposed(const Tensor& t) {
  const int m = t.dim(0), n = t.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({m, n});
  kernels::gemm(av.ptr(), bv.ptr(), out.ptr(), m, k, n, false);
  return tape.record(std::move(out), {a, b}, [m, k, n](Tape& t, int self) {
    const int ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) kernels::gemm_nt_acc(g.ptr(), t.value(ib).ptr(), t.grad(ia).ptr(), m, n, k);
    if (t.requires_grad(ib)) kernels::gemm_tn_acc(t.value(ia).ptr(), g.ptr(), t.grad(ib).ptr(), m, k, n);
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  require_matrix(a.value(), "transpose");
  return tape.record(transposed(a.value()), {a}, [](Tape& t, int self) {
    accumulate(t.grad(t.input(self, 0)), transposed(t.grad(self)));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return tape.record(std::move(out), {a, b}, [](Tape& t, int self) {
    for (int k = 0; k < 2; ++k) {
      const int in = t.input(self, k);
      if (t.requires_grad(in)) accumulate(t.grad(in), t.grad(self));
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias);
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const int n = xv.cols();
  if (static_cast<int>(bv.size()) != n) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match rows of " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  const int m = xv.rows();
  for (int i = 0; i < m; ++i) {
    float* r = out.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) r[j] += bv[j];
  }
  return tape.record(std::move(out), {x, bias}, [m, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ix = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {a, b}, [](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var x, float factor) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (float& v : out.data()) v *= factor;
  return tape.record(std::move(out), {x}, [factor](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(t.input(self, 0));
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var relu(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return tape.record(std::move(out), {x}, [](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ix = t.input(self, 0);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0f) gx[i] += g[i];
  });
}

Var gelu(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (float& v : out.data()) v = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
  return tape.record(std::move(out), {x}, [](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ix = t.input(self, 0);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad(ix);
    const float inv_sqrt_2pi = 0.3989422804014327f;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float v = xv[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = inv_sqrt_2pi * std::exp(-0.5f * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var softmax(Var x, int axis) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (axis < 0) axis += xv.rank();
  if (axis < 0 || axis >= xv.rank()) {
    throw DimensionError("softmax: axis out of range for shape " + shape_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xv.shape()[d];
  for (int d = axis + 1; d < xv.rank(); ++d) inner *= xv.shape()[d];
  const std::size_t len = xv.shape()[axis];

  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      float mx = xv[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const float e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] *= inv;
    }
  }
  return tape.record(std::move(out), {x}, [outer, inner, len](Tape& t, int self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(t.input(self, 0));
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * len * inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(g[base + i * inner]) * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (g[idx] - static_cast<float>(dot));
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const int n = xv.cols();
  const int m = xv.rows();
  if (static_cast<int>(gain.value().size()) != n || static_cast<int>(bias.value().size()) != n) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.value().shape()) + " / bias " +
                         shape_string(bias.value().shape()) + " do not match last dimension of " +
                         shape_string(xv.shape()));
  }
  auto normalized = std::make_shared<std::vector<float>>(xv.size());
  auto inv_std = std::make_shared<std::vector<float>>(m);
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (int i = 0; i < m; ++i) {
    const float* r = xv.ptr() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += r[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = static_cast<float>(is);
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      const float xh = static_cast<float>((r[j] - mu) * is);
      (*normalized)[idx] = xh;
      out[idx] = xh * gv[j] + bv[j];
    }
  }
  return tape.record(std::move(out), {x, gain, bias}, [m, n, normalized, inv_std](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ix = t.input(self, 0), ig = t.input(self, 1), ib = t.input(self, 2);
    const Tensor& gv = t.value(ig);
    if (t.requires_grad(ig) || t.requires_grad(ib)) {
      float* dgain = t.requires_grad(ig) ? t.grad(ig).ptr() : nullptr;
      float* dbias = t.requires_grad(ib) ? t.grad(ib).ptr() : nullptr;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          if (dgain) dgain[j] += g[idx] * (*normalized)[idx];
          if (dbias) dbias[j] += g[idx];
        }
    }
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad(ix);
      for (int i = 0; i < m; ++i) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double d = static_cast<double>(g[idx]) * gv[j];
          mean_d += d;
          mean_dx += d * (*normalized)[idx];
        }
        mean_d /= n;
        mean_dx /= n;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double d = static_cast<double>(g[idx]) * gv[j];
          gx[idx] += static_cast<float>((*inv_std)[i] * (d - mean_d - (*normalized)[idx] * mean_dx));
        }
      }
    }
  });
}

Var l2_normalize(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const int n = xv.cols(), m = xv.rows();
  auto norms = std::make_shared<std::vector<float>>(m);
  Tensor out(xv.shape());
  for (int i = 0; i < m; ++i) {
    const float* r = xv.ptr() + static_cast<std::size_t>(i) * n;
    double ss = 0.0;
    for (int j = 0; j < n; ++j) ss += static_cast<double>(r[j]) * r[j];
    if (!(ss > 0.0)) throw DegenerateInputError("l2_normalize: zero-norm row " + std::to_string(i));
    const double norm = std::sqrt(ss);
    (*norms)[i] = static_cast<float>(norm);
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = static_cast<float>(r[j] / norm);
  }
  return tape.record(std::move(out), {x}, [m, n, norms](Tape& t, int self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(t.input(self, 0));
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(y[base + j]) * g[base + j];
      const float inv = 1.0f / (*norms)[i];
      for (int j = 0; j < n; ++j) gx[base + j] += (g[base + j] - y[base + j] * static_cast<float>(dot)) * inv;
    }
  });
}

namespace {

// Row loss = log(sum exp(x)) - x[target], evaluated around the row maximum
// in double so near-certain predictions keep their tiny loss.
double row_cross_entropy(const float* x, int n, int target, float* probs) {
  int arg = 0;
  for (int j = 1; j < n; ++j)
    if (x[j] > x[arg]) arg = j;
  const double mx = x[arg];
  double rest = 0.0;
  for (int j = 0; j < n; ++j) {
    if (j == arg) continue;
    rest += std::exp(static_cast<double>(x[j]) - mx);
  }
  const double total = 1.0 + rest;
  for (int j = 0; j < n; ++j) probs[j] = static_cast<float>(std::exp(static_cast<double>(x[j]) - mx) / total);
  return (mx - x[target]) + std::log1p(rest);
}

}  // namespace

Var cross_entropy(Var logits, int target) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) {
    throw DimensionError("cross_entropy expects a single row of logits, got " + shape_string(lv.shape()));
  }
  const int n = lv.cols();
  if (target < 0 || target >= n) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(n) + ")");
  }
  const int targets[1] = {target};
  return cross_entropy_rows(logits, targets);
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  Tape& tape = tape_of(logits);
  const Tensor& lv = logits.value();
  const int m = lv.rows(), n = lv.cols();
  if (static_cast<int>(targets.size()) != m) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(lv.shape()));
  }
  auto probs = std::make_shared<std::vector<float>>(lv.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    if (tgt[i] < 0 || tgt[i] >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[i]) + " outside [0, " +
                              std::to_string(n) + ")");
    }
    const std::size_t base = static_cast<std::size_t>(i) * n;
    total += row_cross_entropy(lv.ptr() + base, n, tgt[i], probs->data() + base);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / m));
  return tape.record(std::move(out), {logits}, [m, n, probs, tgt = std::move(tgt)](Tape& t, int self) {
    const float g = t.grad(self)[0] / static_cast<float>(m);
    Tensor& gl = t.grad(t.input(self, 0));
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) gl[base + j] += g * ((*probs)[base + j] - (j == tgt[i] ? 1.0f : 0.0f));
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& tape = tape_of(table);
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  const int vocab = tv.dim(0), d = tv.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out({static_cast<int>(idv.size()), d});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || idv[i] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(idv[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(idv[i]) * d, d, out.ptr() + i * d);
  }
  return tape.record(std::move(out), {table}, [d, idv = std::move(idv)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(t.input(self, 0));
    for (std::size_t i = 0; i < idv.size(); ++i) {
      float* dst = gt.ptr() + static_cast<std::size_t>(idv[i]) * d;
      const float* src = g.ptr() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var gather_rows(Var x, std::span<const int> rows) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const int m = xv.rows(), n = xv.cols();
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  std::vector<int> idx(rows.begin(), rows.end());
  Tensor out({static_cast<int>(idx.size()), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= m) {
      throw std::out_of_range("gather_rows: row " + std::to_string(idx[i]) + " outside " + std::to_string(m));
    }
    std::copy_n(xv.ptr() + static_cast<std::size_t>(idx[i]) * n, n, out.ptr() + i * n);
  }
  return tape.record(std::move(out), {x}, [n, idx = std::move(idx)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(t.input(self, 0));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      float* dst = gx.ptr() + static_cast<std::size_t>(idx[i]) * n;
      const float* src = g.ptr() + i * n;
      for (int j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "concat_cols");
  require_matrix(bv, "concat_cols");
  if (av.dim(0) != bv.dim(0)) {
    throw DimensionError("concat_cols: row counts differ, " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const int m = av.dim(0), na = av.dim(1), nb = bv.dim(1);
  Tensor out({m, na + nb});
  for (int i = 0; i < m; ++i) {
    std::copy_n(av.ptr() + static_cast<std::size_t>(i) * na, na, out.ptr() + static_cast<std::size_t>(i) * (na + nb));
    std::copy_n(bv.ptr() + static_cast<std::size_t>(i) * nb, nb,
                out.ptr() + static_cast<std::size_t>(i) * (na + nb) + na);
  }
  return tape.record(std::move(out), {a, b}, [m, na, nb](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ia = t.input(self, 0), ib = t.input(self, 1);
    for (int i = 0; i < m; ++i) {
      const float* row = g.ptr() + static_cast<std::size_t>(i) * (na + nb);
      if (t.requires_grad(ia)) {
        float* dst = t.grad(ia).ptr() + static_cast<std::size_t>(i) * na;
        for (int j = 0; j < na; ++j) dst[j] += row[j];
      }
      if (t.requires_grad(ib)) {
        float* dst = t.grad(ib).ptr() + static_cast<std::size_t>(i) * nb;
        for (int j = 0; j < nb; ++j) dst[j] += row[na + j];
      }
    }
  });
}

Var rowwise_dot(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), b.value(), "rowwise_dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const int m = av.rows(), n = av.cols();
  Tensor out({m, 1});
  for (int i = 0; i < m; ++i) {
    float s = 0.0f;
    for (int j = 0; j < n; ++j) s += av.at(i, j) * bv.at(i, j);
    out[i] = s;
  }
  return tape.record(std::move(out), {a, b}, [m, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const int ia = t.input(self, 0), ib = t.input(self, 1);
    for (int k = 0; k < 2; ++k) {
      const int in = k == 0 ? ia : ib;
      if (!t.requires_grad(in)) continue;
      const Tensor& other = t.value(k == 0 ? ib : ia);
      Tensor& gd = t.grad(in);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gd.at(i, j) += g[i] * other.at(i, j);
    }
  });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  return tape.record(Tensor::scalar(static_cast<float>(s)), {x}, [](Tape& t, int self) {
    const float g = t.grad(self)[0];
    for (float& v : t.grad(t.input(self, 0)).data()) v += g;
  });
}

Var mean(Var x) {
  const float n = static_cast<float>(x.value().size());
  return scale(sum(x), 1.0f / n);
}

Var segment_mean(Var x, std::span<const int> offsets) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const int n = xv.cols();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != xv.rows()) {
    throw DimensionError("segment_mean: offsets do not cover " + shape_string(xv.shape()));
  }
  std::vector<int> off(offsets.begin(), offsets.end());
  const int segs = static_cast<int>(off.size()) - 1;
  Tensor out({segs, n});
  for (int s = 0; s < segs; ++s) {
    const int len = off[s + 1] - off[s];
    if (len <= 0) throw DimensionError("segment_mean: empty segment " + std::to_string(s));
    for (int r = off[s]; r < off[s + 1]; ++r)
      for (int j = 0; j < n; ++j) out.at(s, j) += xv.at(r, j);
    for (int j = 0; j < n; ++j) out.at(s, j) /= static_cast<float>(len);
  }
  return tape.record(std::move(out), {x}, [n, off = std::move(off)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(t.input(self, 0));
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const float inv = 1.0f / static_cast<float>(off[s + 1] - off[s]);
      for (int r = off[s]; r < off[s + 1]; ++r)
        for (int j = 0; j < n; ++j) gx.at(r, j) += g.at(static_cast<int>(s), j) * inv;
    }
  });
}

Var multi_head_attention(Var q, Var k, Var v, std::span<const int> offsets, int heads) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  Tape& tape = tape_of(q);
  const Tensor& qv = q.value();
  require_matrix(qv, "multi_head_attention");
  require_same_shape(qv, k.value(), "multi_head_attention");
  require_same_shape(qv, v.value(), "multi_head_attention");
  const int total = qv.dim(0), d = qv.dim(1);
  if (heads <= 0 || d % heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != total) {
    throw DimensionError("multi_head_attention: offsets do not cover " + shape_string(qv.shape()));
  }
  std::vector<int> off(offsets.begin(), offsets.end());
  const int dh = d / heads;
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  // Probability blocks laid out per sequence, then per head, row-major.
  std::vector<std::size_t> prob_base(off.size());
  std::size_t prob_total = 0;
  for (std::size_t s = 0; s + 1 < off.size(); ++s) {
    const std::size_t len = static_cast<std::size_t>(off[s + 1] - off[s]);
    prob_base[s] = prob_total;
    prob_total += len * len * heads;
  }
  auto probs = std::make_shared<std::vector<float>>(prob_total);
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  Tensor out({total, d});

  for (std::size_t s = 0; s + 1 < off.size(); ++s) {
    const int start = off[s], len = off[s + 1] - off[s];
    for (int h = 0; h < heads; ++h) {
      float* p = probs->data() + prob_base[s] + static_cast<std::size_t>(h) * len * len;
      const int c0 = h * dh;
      for (int i = 0; i < len; ++i) {
        const float* qi = qv.ptr() + static_cast<std::size_t>(start + i) * d + c0;
        float* prow = p + static_cast<std::size_t>(i) * len;
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < len; ++j) {
          const float* kj = kv.ptr() + static_cast<std::size_t>(start + j) * d + c0;
          prow[j] = kernels::dot(qi, kj, dh) * inv_scale;
          mx = std::max(mx, prow[j]);
        }
        float tot = 0.0f;
        for (int j = 0; j < len; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          tot += prow[j];
        }
        const float inv = 1.0f / tot;
        for (int j = 0; j < len; ++j) prow[j] *= inv;
        float* oi = out.ptr() + static_cast<std::size_t>(start + i) * d + c0;
        for (int j = 0; j < len; ++j) {
          const float* vj = vv.ptr() + static_cast<std::size_t>(start + j) * d + c0;
          const float pj = prow[j];
          for (int c = 0; c < dh; ++c) oi[c] += pj * vj[c];
        }
      }
    }
  }

  return tape.record(
      std::move(out), {q, k, v},
      [off = std::move(off), prob_base = std::move(prob_base), probs, heads, d, dh, inv_scale](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const int iq = t.input(self, 0), ik = t.input(self, 1), iv = t.input(self, 2);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        const bool want_q = t.requires_grad(iq), want_k = t.requires_grad(ik), want_v = t.requires_grad(iv);
        Tensor* gq = want_q ? &t.grad(iq) : nullptr;
        Tensor* gk = want_k ? &t.grad(ik) : nullptr;
        Tensor* gv = want_v ? &t.grad(iv) : nullptr;
        std::vector<float> dp;
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          const int start = off[s], len = off[s + 1] - off[s];
          dp.resize(static_cast<std::size_t>(len));
          for (int h = 0; h < heads; ++h) {
            const float* p = probs->data() + prob_base[s] + static_cast<std::size_t>(h) * len * len;
            const int c0 = h * dh;
            for (int i = 0; i < len; ++i) {
              const float* prow = p + static_cast<std::size_t>(i) * len;
              const float* gi = g.ptr() + static_cast<std::size_t>(start + i) * d + c0;
              // dP[i, j] = dO_i . v_j ; dV_j += P[i, j] dO_i
              float dot = 0.0f;
              for (int j = 0; j < len; ++j) {
                const float* vj = vv.ptr() + static_cast<std::size_t>(start + j) * d + c0;
                const float sdp = kernels::dot(gi, vj, dh);
                dp[j] = sdp;
                dot += sdp * prow[j];
                if (gv) {
                  float* gvj = gv->ptr() + static_cast<std::size_t>(start + j) * d + c0;
                  const float pj = prow[j];
                  for (int c = 0; c < dh; ++c) gvj[c] += pj * gi[c];
                }
              }
              if (!gq && !gk) continue;
              const float* qi = qv.ptr() + static_cast<std::size_t>(start + i) * d + c0;
              float* gqi = gq ? gq->ptr() + static_cast<std::size_t>(start + i) * d + c0 : nullptr;
              for (int j = 0; j < len; ++j) {
                const float ds = prow[j] * (dp[j] - dot) * inv_scale;
                if (ds == 0.0f) continue;
                const float* kj = kv.ptr() + static_cast<std::size_t>(start + j) * d + c0;
                if (gqi)
                  for (int c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                if (gk) {
                  float* gkj = gk->ptr() + static_cast<std::size_t>(start + j) * d + c0;
                  for (int c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace ppa
