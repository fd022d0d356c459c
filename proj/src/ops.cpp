#include "treeformer/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "treeformer/parallel.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

namespace {

using Node = detail::Node;
using Backward = std::function<void(Node&)>;

std::atomic<Fault> g_fault{Fault::none};

Tensor finish(Shape shape, std::vector<Real> data, std::vector<Tensor> inputs, Backward fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  GradTape* tape = GradTape::active();
  if (tape != nullptr) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Tensor& t : inputs) {
        node->inputs.push_back(t.node());
      }
      node->backward = std::move(fn);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

// Returns the gradient buffer of input `i`, or nullptr if it needs none.
Real* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

void require_defined(const Tensor& t, const char* what) {
  require(t.defined(), ErrorKind::contract, std::string(what) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* what) {
  require_defined(t, what);
  require(t.rank() == 2, ErrorKind::dimension,
          std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require_defined(a, what);
  require_defined(b, what);
  require(a.shape() == b.shape(), ErrorKind::dimension,
          std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

void require_offsets(std::span<const std::size_t> offsets, std::size_t rows, const char* what) {
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == rows, ErrorKind::contract,
          std::string(what) + ": segment offsets must start at 0 and end at the row count");
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    require(offsets[s] <= offsets[s + 1], ErrorKind::contract,
            std::string(what) + ": segment offsets must be non-decreasing");
  }
}

// C[m x n] += A[m x k] * B[k x n]. Each output element accumulates over k in
// ascending order, independent of m and of the worker split.
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [=](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Real* ci = c + i * n;
      const Real* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = ai[p];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          ci[j] += av * bp[j];
        }
      }
    }
  });
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<Real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) {
      bt[p * n + j] = b[j * k + p];
    }
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [=](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Real* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = a[p * m + i];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          ci[j] += av * bp[j];
        }
      }
    }
  });
}

template <class F>
Tensor unary(const Tensor& x, F forward, const char* what,
             std::function<Real(Real /*x*/, Real /*y*/)> derivative) {
  require_defined(x, what);
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = forward(in[i]);
  }
  return finish(x.shape(), std::move(out), {x}, [derivative](Node& self) {
    Real* g = input_grad(self, 0);
    if (g == nullptr) {
      return;
    }
    const auto& xin = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      g[i] += self.grad[i] * derivative(xin[i], self.data[i]);
    }
  });
}

}  // namespace

void set_fault(Fault fault) noexcept { g_fault.store(fault); }
Fault current_fault() noexcept { return g_fault.load(); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  require(b.shape()[0] == k, ErrorKind::dimension,
          "matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  std::vector<Real> out(m * n, Real{0});
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return finish({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Real* a_data = self.inputs[0]->data.data();
    const Real* b_data = self.inputs[1]->data.data();
    if (Real* ga = input_grad(self, 0)) {
      gemm_nt(self.grad.data(), b_data, ga, m, n, k);
    }
    if (Real* gb = input_grad(self, 1)) {
      gemm_tn(a_data, self.grad.data(), gb, k, m, n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_matrix(weight, "linear weight");
  const std::size_t rows = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out_dim = weight.shape()[0];
  require(weight.shape()[1] == in, ErrorKind::dimension,
          "linear: input " + shape_string(x.shape()) + " does not match weight " +
              shape_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.numel() == out_dim, ErrorKind::dimension,
            "linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                shape_string(weight.shape()));
  }
  std::vector<Real> out(rows * out_dim, Real{0});
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(b.begin(), b.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
    }
  }
  gemm_nt(x.data().data(), weight.data().data(), out.data(), rows, in, out_dim);
  Shape shape = x.shape();
  if (shape.empty()) {
    shape = {out_dim};
  } else {
    shape.back() = out_dim;
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) {
    inputs.push_back(bias);
  }
  return finish(std::move(shape), std::move(out), std::move(inputs),
                [rows, in, out_dim, has_bias](Node& self) {
                  const Real* x_data = self.inputs[0]->data.data();
                  const Real* w_data = self.inputs[1]->data.data();
                  const Real* gy = self.grad.data();
                  if (Real* gx = input_grad(self, 0)) {
                    gemm_nn(gy, w_data, gx, rows, out_dim, in);
                  }
                  if (Real* gw = input_grad(self, 1)) {
                    gemm_tn(gy, x_data, gw, out_dim, rows, in);
                  }
                  if (has_bias) {
                    if (Real* gb = input_grad(self, 2)) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < out_dim; ++j) {
                          gb[j] += gy[r * out_dim + j];
                        }
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] + y[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Real* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] - y[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i];
      }
    }
    if (Real* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] -= self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * y[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * y[i];
      }
    }
    if (Real* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * x[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  return unary(
      a, [factor](Real x) { return x * factor; }, "scale",
      [factor](Real, Real) { return factor; });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_defined(x, "add_row");
  require_defined(row, "add_row");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  require(row.numel() == cols, ErrorKind::dimension,
          "add_row: row " + shape_string(row.shape()) + " does not match " +
              shape_string(x.shape()));
  std::vector<Real> out(x.data().begin(), x.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] += r[j];
    }
  }
  return finish(x.shape(), std::move(out), {x, row}, [rows, cols](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i];
      }
    }
    if (Real* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          g[j] += self.grad[i * cols + j];
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  require(shape_numel(shape) == x.numel(), ErrorKind::dimension,
          "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  std::vector<Real> out(x.data().begin(), x.data().end());
  return finish(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i];
      }
    }
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_last");
  require_defined(b, "concat_last");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == sb.size() && !sa.empty() &&
              std::equal(sa.begin(), sa.end() - 1, sb.begin()),
          ErrorKind::dimension,
          "concat_last: leading extents differ, " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t rows = a.rows();
  const std::size_t p = sa.back();
  const std::size_t q = sb.back();
  std::vector<Real> out(rows * (p + q));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * p), p,
                out.begin() + static_cast<std::ptrdiff_t>(r * (p + q)));
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(r * q), q,
                out.begin() + static_cast<std::ptrdiff_t>(r * (p + q) + p));
  }
  Shape shape = sa;
  shape.back() = p + q;
  const Real left_sign = current_fault() == Fault::flip_concat_grad ? Real{-1} : Real{1};
  return finish(std::move(shape), std::move(out), {a, b}, [rows, p, q, left_sign](Node& self) {
    const Real* g = self.grad.data();
    if (Real* ga = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < p; ++j) {
          ga[r * p + j] += left_sign * g[r * (p + q) + j];
        }
      }
    }
    if (Real* gb = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < q; ++j) {
          gb[r * q + j] += g[r * (p + q) + p + j];
        }
      }
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::empty_input, "concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> starts;
  starts.reserve(parts.size());
  for (const Tensor& t : parts) {
    require_defined(t, "concat_rows");
    require(t.cols() == cols, ErrorKind::dimension,
            "concat_rows: column mismatch " + shape_string(parts.front().shape()) + " vs " +
                shape_string(t.shape()));
    starts.push_back(total);
    total += t.rows();
  }
  std::vector<Real> out;
  out.reserve(total * cols);
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return finish({total, cols}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                [starts, cols](Node& self) {
                  for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                    if (Real* g = input_grad(self, k)) {
                      const std::size_t n = self.inputs[k]->data.size();
                      const Real* src = self.grad.data() + starts[k] * cols;
                      for (std::size_t i = 0; i < n; ++i) {
                        g[i] += src[i];
                      }
                    }
                  }
                });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined(x, "slice_rows");
  require(begin + count <= x.rows(), ErrorKind::index,
          "slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") out of range for " + shape_string(x.shape()));
  const std::size_t cols = x.cols();
  const auto src = x.data().subspan(begin * cols, count * cols);
  return finish({count, cols}, std::vector<Real>(src.begin(), src.end()), {x},
                [begin, cols](Node& self) {
                  if (Real* g = input_grad(self, 0)) {
                    Real* dst = g + begin * cols;
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      dst[i] += self.grad[i];
                    }
                  }
                });
}

Tensor gather_rows(std::span<const RowRef> refs) {
  require(!refs.empty(), ErrorKind::empty_input, "gather_rows: no rows");
  const std::size_t cols = refs.front().tensor.cols();
  std::vector<Tensor> inputs;
  std::unordered_map<const Node*, std::size_t> slot;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (input slot, source row)
  where.reserve(refs.size());
  std::vector<Real> out(refs.size() * cols);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const RowRef& ref = refs[r];
    require_defined(ref.tensor, "gather_rows");
    require(ref.tensor.cols() == cols, ErrorKind::dimension, "gather_rows: column mismatch");
    const auto src = ref.tensor.row(ref.row);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * cols));
    auto [it, inserted] = slot.try_emplace(ref.tensor.node().get(), inputs.size());
    if (inserted) {
      inputs.push_back(ref.tensor);
    }
    where.emplace_back(it->second, ref.row);
  }
  return finish({refs.size(), cols}, std::move(out), std::move(inputs),
                [where = std::move(where), cols](Node& self) {
                  for (std::size_t r = 0; r < where.size(); ++r) {
                    const auto [k, src_row] = where[r];
                    if (Real* g = input_grad(self, k)) {
                      Real* dst = g + src_row * cols;
                      const Real* src = self.grad.data() + r * cols;
                      for (std::size_t j = 0; j < cols; ++j) {
                        dst[j] += src[j];
                      }
                    }
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<Real> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] < vocab, ErrorKind::index,
            "embedding: token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                std::to_string(vocab));
    const auto src = table.row(ids[r]);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return finish({ids.size(), d}, std::move(out), {table}, [saved = std::move(saved), d](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t r = 0; r < saved.size(); ++r) {
        Real* dst = g + saved[r] * d;
        for (std::size_t j = 0; j < d; ++j) {
          dst[j] += self.grad[r * d + j];
        }
      }
    }
  });
}

Tensor softmax_last(const Tensor& x) {
  require_defined(x, "softmax_last");
  const std::size_t rows = x.rows();
  const std::size_t k = x.cols();
  require(k >= 1 && x.numel() > 0, ErrorKind::contract, "softmax_last: empty last axis");
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = in.data() + r * k;
    Real* y = out.data() + r * k;
    Real top = row[0];
    for (std::size_t j = 0; j < k; ++j) {
      require(std::isfinite(row[j]), ErrorKind::numeric, "softmax_last: non-finite input");
      top = std::max(top, row[j]);
    }
    Real total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = std::exp(row[j] - top);
      total += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      y[j] /= total;
    }
  }
  return finish(x.shape(), std::move(out), {x}, [rows, k](Node& self) {
    Real* g = input_grad(self, 0);
    if (g == nullptr) {
      return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* y = self.data.data() + r * k;
      const Real* gy = self.grad.data() + r * k;
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) {
        dot += gy[j] * y[j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        g[r * k + j] += y[j] * (gy[j] - dot);
      }
    }
  });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](Real v) { return std::tanh(v); }, "tanh", [](Real, Real y) { return Real{1} - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](Real v) { return v > Real{0} ? v : Real{0}; }, "relu",
      [](Real v, Real) { return v > Real{0} ? Real{1} : Real{0}; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_defined(x, "layer_norm");
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  require(gamma.numel() == d && beta.numel() == d, ErrorKind::dimension,
          "layer_norm: gain/bias do not match " + shape_string(x.shape()));
  std::vector<Real> out(x.numel());
  std::vector<Real> normed(x.numel());
  std::vector<Real> inv_std(rows);
  const auto in = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = in.data() + r * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) {
      mu += row[j];
    }
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      var += (row[j] - mu) * (row[j] - mu);
    }
    var /= static_cast<Real>(d);
    inv_std[r] = Real{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mu) * inv_std[r];
      normed[r * d + j] = h;
      out[r * d + j] = g[j] * h + b[j];
    }
  }
  return finish(x.shape(), std::move(out), {x, gamma, beta},
                [rows, d, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
                  const Real* gy = self.grad.data();
                  const Real* gain = self.inputs[1]->data.data();
                  if (Real* gx = input_grad(self, 0)) {
                    std::vector<Real> dh(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      Real sum_dh = 0;
                      Real sum_dh_h = 0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = gy[r * d + j] * gain[j];
                        sum_dh += dh[j];
                        sum_dh_h += dh[j] * normed[r * d + j];
                      }
                      const Real n = static_cast<Real>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv_std[r] / n *
                                         (n * dh[j] - sum_dh - normed[r * d + j] * sum_dh_h);
                      }
                    }
                  }
                  if (Real* gg = input_grad(self, 1)) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += gy[r * d + j] * normed[r * d + j];
                      }
                    }
                  }
                  if (Real* gb = input_grad(self, 2)) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gb[j] += gy[r * d + j];
                      }
                    }
                  }
                });
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng) {
  require(rate >= Real{0} && rate < Real{1}, ErrorKind::contract, "dropout: rate must be in [0, 1)");
  if (rate == Real{0}) {
    return x;
  }
  const Real keep_scale = Real{1} / (Real{1} - rate);
  std::vector<Real> mask(x.numel());
  for (Real& m : mask) {
    m = rng.bernoulli(static_cast<double>(rate)) ? Real{0} : keep_scale;
  }
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = in[i] * mask[i];
  }
  return finish(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) {
        g[i] += self.grad[i] * mask[i];
      }
    }
  });
}

Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> offsets) {
  require_defined(scores, "segment_softmax");
  const std::size_t n = scores.numel();
  require(scores.cols() == 1 || scores.rank() == 1, ErrorKind::dimension,
          "segment_softmax expects one score per row, got " + shape_string(scores.shape()));
  require_offsets(offsets, n, "segment_softmax");
  const std::size_t segments = offsets.size() - 1;
  std::vector<Real> out(n);
  const auto in = scores.data();
  for (std::size_t s = 0; s < segments; ++s) {
    require(offsets[s + 1] > offsets[s], ErrorKind::contract, "segment_softmax: empty segment");
  }
  parallel_for(segments, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t lo = offsets[s];
      const std::size_t hi = offsets[s + 1];
      Real top = in[lo];
      for (std::size_t r = lo; r < hi; ++r) {
        top = std::max(top, in[r]);
      }
      Real total = 0;
      for (std::size_t r = lo; r < hi; ++r) {
        out[r] = std::exp(in[r] - top);
        total += out[r];
      }
      for (std::size_t r = lo; r < hi; ++r) {
        out[r] /= total;
      }
    }
  });
  for (Real v : out) {
    require(std::isfinite(v), ErrorKind::numeric, "segment_softmax: non-finite scores");
  }
  std::vector<std::size_t> saved(offsets.begin(), offsets.end());
  return finish(scores.shape(), std::move(out), {scores}, [saved = std::move(saved)](Node& self) {
    Real* g = input_grad(self, 0);
    if (g == nullptr) {
      return;
    }
    for (std::size_t s = 0; s + 1 < saved.size(); ++s) {
      Real dot = 0;
      for (std::size_t r = saved[s]; r < saved[s + 1]; ++r) {
        dot += self.grad[r] * self.data[r];
      }
      for (std::size_t r = saved[s]; r < saved[s + 1]; ++r) {
        g[r] += self.data[r] * (self.grad[r] - dot);
      }
    }
  });
}

Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> offsets) {
  require_defined(values, "segment_weighted_sum");
  require_defined(weights, "segment_weighted_sum");
  const std::size_t n = values.rows();
  const std::size_t d = values.cols();
  require(weights.numel() == n, ErrorKind::dimension,
          "segment_weighted_sum: " + std::to_string(weights.numel()) + " weights for " +
              std::to_string(n) + " rows");
  require_offsets(offsets, n, "segment_weighted_sum");
  const std::size_t segments = offsets.size() - 1;
  std::vector<Real> out(segments * d, Real{0});
  const auto v = values.data();
  const auto w = weights.data();
  parallel_for(segments, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Real* dst = out.data() + s * d;
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
        const Real* src = v.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dst[j] += w[r] * src[j];
        }
      }
    }
  });
  std::vector<std::size_t> saved(offsets.begin(), offsets.end());
  return finish({segments, d}, std::move(out), {values, weights},
                [saved = std::move(saved), d](Node& self) {
                  const Real* vals = self.inputs[0]->data.data();
                  const Real* wts = self.inputs[1]->data.data();
                  Real* gv = input_grad(self, 0);
                  Real* gw = input_grad(self, 1);
                  for (std::size_t s = 0; s + 1 < saved.size(); ++s) {
                    const Real* go = self.grad.data() + s * d;
                    for (std::size_t r = saved[s]; r < saved[s + 1]; ++r) {
                      if (gv != nullptr) {
                        for (std::size_t j = 0; j < d; ++j) {
                          gv[r * d + j] += wts[r] * go[j];
                        }
                      }
                      if (gw != nullptr) {
                        Real dot = 0;
                        for (std::size_t j = 0; j < d; ++j) {
                          dot += vals[r * d + j] * go[j];
                        }
                        gw[r] += dot;
                      }
                    }
                  }
                });
}

Tensor segment_mean(const Tensor& values, std::span<const std::size_t> offsets) {
  require_defined(values, "segment_mean");
  const std::size_t n = values.rows();
  const std::size_t d = values.cols();
  require_offsets(offsets, n, "segment_mean");
  const std::size_t segments = offsets.size() - 1;
  std::vector<Real> out(segments * d, Real{0});
  const auto v = values.data();
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t count = offsets[s + 1] - offsets[s];
    require(count > 0, ErrorKind::contract, "segment_mean: empty segment");
    Real* dst = out.data() + s * d;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        dst[j] += v[r * d + j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] /= static_cast<Real>(count);
    }
  }
  std::vector<std::size_t> saved(offsets.begin(), offsets.end());
  return finish({segments, d}, std::move(out), {values}, [saved = std::move(saved), d](Node& self) {
    Real* g = input_grad(self, 0);
    if (g == nullptr) {
      return;
    }
    for (std::size_t s = 0; s + 1 < saved.size(); ++s) {
      const Real inv = Real{1} / static_cast<Real>(saved[s + 1] - saved[s]);
      for (std::size_t r = saved[s]; r < saved[s + 1]; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          g[r * d + j] += self.grad[s * d + j] * inv;
        }
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                 std::vector<Real>* probabilities) {
  require_matrix(q, "attention query");
  require_matrix(k, "attention key");
  require_matrix(v, "attention value");
  const std::size_t dim = q.cols();
  require(k.cols() == dim && v.cols() == dim, ErrorKind::dimension,
          "attention: q/k/v widths differ");
  require(k.rows() == v.rows(), ErrorKind::dimension, "attention: key/value row counts differ");
  require(spec.heads >= 1 && dim % spec.heads == 0, ErrorKind::dimension,
          "attention: width " + std::to_string(dim) + " not divisible by " +
              std::to_string(spec.heads) + " heads");
  require_offsets(spec.query_offsets, q.rows(), "attention queries");
  require_offsets(spec.key_offsets, k.rows(), "attention keys");
  require(spec.query_offsets.size() == spec.key_offsets.size(), ErrorKind::contract,
          "attention: query and key segment counts differ");
  const std::size_t segments = spec.query_offsets.size() - 1;
  const std::size_t heads = spec.heads;
  const std::size_t dh = dim / heads;
  const Real inv_scale = Real{1} / std::sqrt(static_cast<Real>(dh));

  std::vector<std::size_t> qo(spec.query_offsets.begin(), spec.query_offsets.end());
  std::vector<std::size_t> ko(spec.key_offsets.begin(), spec.key_offsets.end());
  std::vector<std::size_t> prob_base(segments + 1, 0);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t nq = qo[s + 1] - qo[s];
    const std::size_t nk = ko[s + 1] - ko[s];
    require(nq == 0 || nk > 0, ErrorKind::contract, "attention: queries with no keys");
    require(!spec.causal || nq == nk, ErrorKind::contract,
            "attention: causal masking needs equal query and key lengths");
    prob_base[s + 1] = prob_base[s] + heads * nq * nk;
  }
  const bool causal = spec.causal;
  std::vector<Real> probs(prob_base.back(), Real{0});
  std::vector<Real> out(q.numel(), Real{0});
  const Real* qd = q.data().data();
  const Real* kd = k.data().data();
  const Real* vd = v.data().data();

  parallel_for(segments, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t nq = qo[s + 1] - qo[s];
      const std::size_t nk = ko[s + 1] - ko[s];
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t t = 0; t < nq; ++t) {
          Real* p = probs.data() + prob_base[s] + (h * nq + t) * nk;
          const Real* qt = qd + (qo[s] + t) * dim + c0;
          const std::size_t visible = causal ? t + 1 : nk;
          Real top = -std::numeric_limits<Real>::infinity();
          for (std::size_t j = 0; j < visible; ++j) {
            const Real* kj = kd + (ko[s] + j) * dim + c0;
            Real dot = 0;
            for (std::size_t c = 0; c < dh; ++c) {
              dot += qt[c] * kj[c];
            }
            p[j] = dot * inv_scale;
            top = std::max(top, p[j]);
          }
          Real total = 0;
          for (std::size_t j = 0; j < visible; ++j) {
            p[j] = std::exp(p[j] - top);
            total += p[j];
          }
          Real* o = out.data() + (qo[s] + t) * dim + c0;
          for (std::size_t j = 0; j < visible; ++j) {
            p[j] /= total;
            const Real* vj = vd + (ko[s] + j) * dim + c0;
            for (std::size_t c = 0; c < dh; ++c) {
              o[c] += p[j] * vj[c];
            }
          }
        }
      }
    }
  });
  for (Real x : out) {
    require(std::isfinite(x), ErrorKind::numeric, "attention: non-finite output");
  }
  if (probabilities != nullptr) {
    *probabilities = probs;
  }

  return finish(q.shape(), std::move(out), {q, k, v},
                [qo = std::move(qo), ko = std::move(ko), prob_base = std::move(prob_base),
                 probs = std::move(probs), heads, dh, dim, inv_scale, causal](Node& self) {
                  const Real* qd = self.inputs[0]->data.data();
                  const Real* kd = self.inputs[1]->data.data();
                  const Real* vd = self.inputs[2]->data.data();
                  Real* gq = input_grad(self, 0);
                  Real* gk = input_grad(self, 1);
                  Real* gv = input_grad(self, 2);
                  const Real* go = self.grad.data();
                  const std::size_t segments = qo.size() - 1;
                  parallel_for(segments, [&](std::size_t begin, std::size_t end) {
                    std::vector<Real> dp;
                    for (std::size_t s = begin; s < end; ++s) {
                      const std::size_t nq = qo[s + 1] - qo[s];
                      const std::size_t nk = ko[s + 1] - ko[s];
                      dp.resize(nk);
                      for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t c0 = h * dh;
                        for (std::size_t t = 0; t < nq; ++t) {
                          const Real* p = probs.data() + prob_base[s] + (h * nq + t) * nk;
                          const Real* got = go + (qo[s] + t) * dim + c0;
                          const std::size_t visible = causal ? t + 1 : nk;
                          Real dot = 0;
                          for (std::size_t j = 0; j < visible; ++j) {
                            const Real* vj = vd + (ko[s] + j) * dim + c0;
                            Real acc = 0;
                            for (std::size_t c = 0; c < dh; ++c) {
                              acc += got[c] * vj[c];
                            }
                            dp[j] = acc;
                            dot += acc * p[j];
                            if (gv != nullptr) {
                              Real* gvj = gv + (ko[s] + j) * dim + c0;
                              for (std::size_t c = 0; c < dh; ++c) {
                                gvj[c] += p[j] * got[c];
                              }
                            }
                          }
                          const Real* qt = qd + (qo[s] + t) * dim + c0;
                          for (std::size_t j = 0; j < visible; ++j) {
                            const Real ds = p[j] * (dp[j] - dot) * inv_scale;
                            const Real* kj = kd + (ko[s] + j) * dim + c0;
                            if (gq != nullptr) {
                              Real* gqt = gq + (qo[s] + t) * dim + c0;
                              for (std::size_t c = 0; c < dh; ++c) {
                                gqt[c] += ds * kj[c];
                              }
                            }
                            if (gk != nullptr) {
                              Real* gkj = gk + (ko[s] + j) * dim + c0;
                              for (std::size_t c = 0; c < dh; ++c) {
                                gkj[c] += ds * qt[c];
                              }
                            }
                          }
                        }
                      }
                    }
                  });
                });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, Real label_smoothing) {
  require_defined(logits, "cross_entropy");
  const std::size_t batch = logits.rows();
  const std::size_t vocab = logits.cols();
  require(batch > 0, ErrorKind::empty_input, "cross_entropy: empty batch");
  require(targets.size() == batch, ErrorKind::dimension,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(batch) + " rows");
  require(label_smoothing >= Real{0} && label_smoothing < Real{1}, ErrorKind::contract,
          "cross_entropy: label smoothing must be in [0, 1)");
  const auto in = logits.data();
  std::vector<Real> probs(batch * vocab);
  double total = 0;
  const double eps = label_smoothing;
  for (std::size_t b = 0; b < batch; ++b) {
    require(targets[b] < vocab, ErrorKind::index,
            "cross_entropy: target " + std::to_string(targets[b]) + " outside vocabulary of size " +
                std::to_string(vocab));
    const Real* row = in.data() + b * vocab;
    double top = row[0];
    for (std::size_t v = 0; v < vocab; ++v) {
      require(std::isfinite(row[v]), ErrorKind::numeric, "cross_entropy: non-finite logits");
      top = std::max(top, static_cast<double>(row[v]));
    }
    double z = 0;
    for (std::size_t v = 0; v < vocab; ++v) {
      z += std::exp(static_cast<double>(row[v]) - top);
    }
    const double log_z = top + std::log(z);
    double mean_nll = 0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double logp = static_cast<double>(row[v]) - log_z;
      probs[b * vocab + v] = static_cast<Real>(std::exp(logp));
      mean_nll -= logp;
    }
    mean_nll /= static_cast<double>(vocab);
    const double target_nll = log_z - static_cast<double>(row[targets[b]]);
    total += (1.0 - eps) * target_nll + eps * mean_nll;
  }
  std::vector<TokenId> saved(targets.begin(), targets.end());
  return finish({}, {static_cast<Real>(total / static_cast<double>(batch))}, {logits},
                [saved = std::move(saved), probs = std::move(probs), batch, vocab,
                 eps = static_cast<Real>(eps)](Node& self) {
                  Real* g = input_grad(self, 0);
                  if (g == nullptr) {
                    return;
                  }
                  const Real upstream = self.grad[0] / static_cast<Real>(batch);
                  const Real smooth = eps / static_cast<Real>(vocab);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t v = 0; v < vocab; ++v) {
                      Real d = probs[b * vocab + v] - smooth;
                      if (v == saved[b]) {
                        d -= Real{1} - eps;
                      }
                      g[b * vocab + v] += upstream * d;
                    }
                  }
                });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  Real total = 0;
  for (Real v : x.data()) {
    total += v;
  }
  return finish({}, {total}, {x}, [](Node& self) {
    if (Real* g = input_grad(self, 0)) {
      const std::size_t n = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += self.grad[0];
      }
    }
  });
}

Tensor mean(const Tensor& x) {
  require(x.defined() && x.numel() > 0, ErrorKind::empty_input, "mean of an empty tensor");
  return scale(sum(x), Real{1} / static_cast<Real>(x.numel()));
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
