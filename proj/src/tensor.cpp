#include "mcc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace mcc {

namespace {

bool g_grad_enabled = true;

std::shared_ptr<std::vector<double>> make_buf(std::int64_t n, double fill = 0.0) {
  return std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), fill);
}

void check_2d(const Tensor& t, const char* op) {
  if (t.shape.size() != 2) throw std::runtime_error(std::string(op) + ": expected 2-d tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw std::runtime_error(std::string(op) + ": shape mismatch");
}

Tensor make_result(std::vector<int> shape, std::shared_ptr<std::vector<double>> data,
                   const char* op, std::vector<const Tensor*> parents,
                   std::function<void()> bwd) {
  Tensor out = make_op(std::move(shape), std::move(data), op, parents);
  if (out.node) out.node->backward = std::move(bwd);
  return out;
}

void accumulate(const Tensor& t, const std::vector<double>& g) { accumulate_grad(t, g); }

}  // namespace

Tensor make_op(std::vector<int> shape, std::shared_ptr<std::vector<double>> data,
               const char* op, const std::vector<const Tensor*>& parents) {
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::move(data);
  assert_finite_span(out.data->data(), static_cast<std::int64_t>(out.data->size()), op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor* p : parents)
      if (p->requires_grad) needs = true;
  }
  if (needs) {
    out.requires_grad = true;
    out.grad = make_buf(out.numel());
    out.node = std::make_shared<Node>();
    out.node->op = op;
    for (const Tensor* p : parents)
      if (p->node) out.node->parents.push_back(p->node);
  }
  return out;
}

void accumulate_grad(const Tensor& t, const std::vector<double>& g) {
  if (!t.requires_grad || !t.grad) return;
  double* dst = t.grad->data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool is_grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = make_buf(t.numel());
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = make_buf(t.numel());
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  Tensor t;
  t.shape = std::move(shape);
  if (t.numel() != static_cast<std::int64_t>(values.size()))
    throw std::runtime_error("Tensor::from: value count does not match shape");
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = make_buf(t.numel());
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stdev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : *t.data) v = rng.gaussian(0.0, stdev);
  return t;
}

void assert_finite_span(const double* p, std::int64_t n, const char* op) {
  for (std::int64_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
}

void assert_finite(const Tensor& t, const char* op) {
  assert_finite_span(t.data->data(), t.numel(), op);
}

// ---------------------------------------------------------------------------
// Matmul kernels. mm_nn processes four output rows at a time with a broadcast
// scalar from a and a vectorizable sweep over b's row; mm_tn accumulates
// rank-1 updates with the same inner pattern; mm_nt transposes b once and
// reuses mm_nn so all products share the fast path.

void mm_nn(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + static_cast<std::size_t>(i) * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + static_cast<std::size_t>(i) * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (int p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const double* br = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        const double bv = br[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* cr = c + static_cast<std::size_t>(i) * n;
    const double* ar = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double v = ar[p];
      const double* br = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += v * br[j];
    }
  }
}

void mm_tn(double* c, const double* a, const double* b, int k, int m, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  for (int r = 0; r < k; ++r) {
    const double* ar = a + static_cast<std::size_t>(r) * m;
    const double* br = b + static_cast<std::size_t>(r) * n;
    for (int i = 0; i < m; ++i) {
      const double v = ar[i];
      double* cr = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) cr[j] += v * br[j];
    }
  }
}

void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
  thread_local std::vector<double> bt;
  bt.resize(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    const double* br = b + static_cast<std::size_t>(j) * k;
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = br[p];
  }
  mm_nn(c, a, bt.data(), m, k, n, acc);
}

// ---------------------------------------------------------------------------
// Differentiable ops

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_buf(a.numel());
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out->data();
  for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  Tensor result = make_result(a.shape, out, "add", {&a, &b}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, b, og, od]() {
      accumulate(a, *og);
      accumulate(b, *og);
    };
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_buf(a.numel());
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out->data();
  for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  Tensor result = make_result(a.shape, out, "sub", {&a, &b}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, b, og, od]() {
      accumulate(a, *og);
      if (b.requires_grad && b.grad) {
        double* dst = b.grad->data();
        const double* g = og->data();
        for (std::int64_t i = 0; i < b.numel(); ++i) dst[i] -= g[i];
      }
    };
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_buf(a.numel());
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out->data();
  for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  Tensor result = make_result(a.shape, out, "mul", {&a, &b}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, b, og, od]() {
      const double* g = og->data();
      if (a.requires_grad && a.grad) {
        double* dst = a.grad->data();
        const double* pb2 = b.data->data();
        for (std::int64_t i = 0; i < a.numel(); ++i) dst[i] += g[i] * pb2[i];
      }
      if (b.requires_grad && b.grad) {
        double* dst = b.grad->data();
        const double* pa2 = a.data->data();
        for (std::int64_t i = 0; i < b.numel(); ++i) dst[i] += g[i] * pa2[i];
      }
    };
  }
  return result;
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_buf(a.numel());
  const double* pa = a.data->data();
  double* po = out->data();
  for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  Tensor result = make_result(a.shape, out, "scale", {&a}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, c, og, od]() {
      if (a.requires_grad && a.grad) {
        double* dst = a.grad->data();
        const double* g = og->data();
        for (std::int64_t i = 0; i < a.numel(); ++i) dst[i] += g[i] * c;
      }
    };
  }
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.cols() != b.rows()) throw std::runtime_error("matmul: inner extents disagree");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_buf(static_cast<std::int64_t>(m) * n);
  mm_nn(out->data(), a.data->data(), b.data->data(), m, k, n, false);
  Tensor result = make_result({m, n}, out, "matmul", {&a, &b}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, b, og, od, m, k, n]() {
      if (a.requires_grad && a.grad)
        mm_nt(a.grad->data(), og->data(), b.data->data(), m, n, k, true);
      if (b.requires_grad && b.grad)
        mm_tn(b.grad->data(), a.data->data(), og->data(), m, k, n, true);
    };
  }
  return result;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) throw std::runtime_error("matmul_nt: inner extents disagree");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  auto out = make_buf(static_cast<std::int64_t>(m) * n);
  mm_nt(out->data(), a.data->data(), b.data->data(), m, k, n, false);
  Tensor result = make_result({m, n}, out, "matmul_nt", {&a, &b}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [a, b, og, od, m, k, n]() {
      if (a.requires_grad && a.grad)
        mm_nn(a.grad->data(), og->data(), b.data->data(), m, n, k, true);
      if (b.requires_grad && b.grad)
        mm_tn(b.grad->data(), og->data(), a.data->data(), m, n, k, true);
    };
  }
  return result;
}

Tensor add_row_vector(const Tensor& m, const Tensor& v) {
  check_2d(m, "add_row_vector");
  check_2d(v, "add_row_vector");
  if (v.rows() != 1 || v.cols() != m.cols())
    throw std::runtime_error("add_row_vector: vector must be 1×cols(m)");
  auto out = make_buf(m.numel());
  const int rows = m.rows(), cols = m.cols();
  const double* pm = m.data->data();
  const double* pv = v.data->data();
  double* po = out->data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      po[static_cast<std::size_t>(i) * cols + j] = pm[static_cast<std::size_t>(i) * cols + j] + pv[j];
  Tensor result = make_result(m.shape, out, "add_row_vector", {&m, &v}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [m, v, og, od, rows, cols]() {
      const double* g = og->data();
      if (m.requires_grad && m.grad) accumulate(m, *og);
      if (v.requires_grad && v.grad) {
        double* dv = v.grad->data();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) dv[j] += g[static_cast<std::size_t>(i) * cols + j];
      }
    };
  }
  return result;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: empty input");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_rows");
    if (p.cols() != cols) throw std::runtime_error("concat_rows: column mismatch");
    rows += p.rows();
  }
  auto out = make_buf(static_cast<std::int64_t>(rows) * cols);
  double* po = out->data();
  for (const Tensor& p : parts) {
    std::memcpy(po, p.data->data(), sizeof(double) * p.numel());
    po += p.numel();
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tensor result = make_result({rows, cols}, out, "concat_rows", ptrs, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    std::vector<Tensor> held = parts;
    result.node->backward = [held, og, od]() {
      const double* g = og->data();
      for (const Tensor& p : held) {
        if (p.requires_grad && p.grad) {
          double* dst = p.grad->data();
          for (std::int64_t i = 0; i < p.numel(); ++i) dst[i] += g[i];
        }
        g += p.numel();
      }
    };
  }
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_cols: empty input");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_cols");
    if (p.rows() != rows) throw std::runtime_error("concat_cols: row mismatch");
    cols += p.cols();
  }
  auto out = make_buf(static_cast<std::int64_t>(rows) * cols);
  double* po = out->data();
  int col0 = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < rows; ++i)
      std::memcpy(po + static_cast<std::size_t>(i) * cols + col0,
                  p.data->data() + static_cast<std::size_t>(i) * p.cols(),
                  sizeof(double) * p.cols());
    col0 += p.cols();
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tensor result = make_result({rows, cols}, out, "concat_cols", ptrs, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    std::vector<Tensor> held = parts;
    result.node->backward = [held, og, od, rows, cols]() {
      const double* g = og->data();
      int c0 = 0;
      for (const Tensor& p : held) {
        if (p.requires_grad && p.grad) {
          double* dst = p.grad->data();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p.cols(); ++j)
              dst[static_cast<std::size_t>(i) * p.cols() + j] +=
                  g[static_cast<std::size_t>(i) * cols + c0 + j];
        }
        c0 += p.cols();
      }
    };
  }
  return result;
}

Tensor slice_rows(const Tensor& t, int r0, int r1) {
  check_2d(t, "slice_rows");
  if (r0 < 0 || r1 > t.rows() || r0 >= r1) throw std::runtime_error("slice_rows: bad range");
  const int cols = t.cols(), rows = r1 - r0;
  auto out = make_buf(static_cast<std::int64_t>(rows) * cols);
  std::memcpy(out->data(), t.data->data() + static_cast<std::size_t>(r0) * cols,
              sizeof(double) * rows * cols);
  Tensor result = make_result({rows, cols}, out, "slice_rows", {&t}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [t, og, od, r0, rows, cols]() {
      if (t.requires_grad && t.grad) {
        double* dst = t.grad->data() + static_cast<std::size_t>(r0) * cols;
        const double* g = og->data();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows) * cols; ++i) dst[i] += g[i];
      }
    };
  }
  return result;
}

Tensor gather_rows(const Tensor& t, const std::vector<int>& idx) {
  check_2d(t, "gather_rows");
  const int cols = t.cols();
  for (int i : idx)
    if (i < 0 || i >= t.rows()) throw std::runtime_error("gather_rows: index out of range");
  auto out = make_buf(static_cast<std::int64_t>(idx.size()) * cols);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out->data() + r * cols, t.data->data() + static_cast<std::size_t>(idx[r]) * cols,
                sizeof(double) * cols);
  Tensor result = make_result({static_cast<int>(idx.size()), cols}, out, "gather_rows", {&t}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    std::vector<int> held = idx;
    result.node->backward = [t, og, od, held, cols]() {
      if (t.requires_grad && t.grad) {
        const double* g = og->data();
        for (std::size_t r = 0; r < held.size(); ++r) {
          double* dst = t.grad->data() + static_cast<std::size_t>(held[r]) * cols;
          for (int j = 0; j < cols; ++j) dst[j] += g[r * cols + j];
        }
      }
    };
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d(x, "layer_norm");
  const int rows = x.rows(), cols = x.cols();
  if (gamma.numel() != cols || beta.numel() != cols)
    throw std::runtime_error("layer_norm: gamma/beta must have cols(x) elements");
  auto out = make_buf(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data->data();
  const double* pg = gamma.data->data();
  const double* pb = beta.data->data();
  double* po = out->data();
  for (int i = 0; i < rows; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < cols; ++j) {
      const double h = (xr[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * cols + j] = h;
      po[static_cast<std::size_t>(i) * cols + j] = h * pg[j] + pb[j];
    }
  }
  Tensor result = make_result(x.shape, out, "layer_norm", {&x, &gamma, &beta}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, gamma, beta, og, od, xhat, inv_std, rows, cols]() {
      const double* g = og->data();
      const double* pg2 = gamma.data->data();
      for (int i = 0; i < rows; ++i) {
        const double* gr = g + static_cast<std::size_t>(i) * cols;
        const double* hr = xhat->data() + static_cast<std::size_t>(i) * cols;
        if (gamma.requires_grad && gamma.grad) {
          double* dg = gamma.grad->data();
          for (int j = 0; j < cols; ++j) dg[j] += gr[j] * hr[j];
        }
        if (beta.requires_grad && beta.grad) {
          double* db = beta.grad->data();
          for (int j = 0; j < cols; ++j) db[j] += gr[j];
        }
        if (x.requires_grad && x.grad) {
          double sum_gg = 0.0, sum_ggh = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double gg = gr[j] * pg2[j];
            sum_gg += gg;
            sum_ggh += gg * hr[j];
          }
          const double is = (*inv_std)[i];
          double* dx = x.grad->data() + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) {
            const double gg = gr[j] * pg2[j];
            dx[j] += is * (gg - sum_gg / cols - hr[j] * sum_ggh / cols);
          }
        }
      }
    };
  }
  return result;
}

Tensor gelu(const Tensor& x) {
  auto out = make_buf(x.numel());
  const double* px = x.data->data();
  double* po = out->data();
  const double inv_sqrt2 = 0.7071067811865476;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * inv_sqrt2));
  Tensor result = make_result(x.shape, out, "gelu", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od, inv_sqrt2]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        const double* px2 = x.data->data();
        double* dx = x.grad->data();
        const double inv_sqrt_2pi = 0.3989422804014327;
        for (std::int64_t i = 0; i < x.numel(); ++i) {
          const double v = px2[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          dx[i] += g[i] * (cdf + v * pdf);
        }
      }
    };
  }
  return result;
}

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax_rows");
  const int rows = x.rows(), cols = x.cols();
  auto out = make_buf(x.numel());
  const double* px = x.data->data();
  double* po = out->data();
  for (int i = 0; i < rows; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * cols;
    double* orow = po + static_cast<std::size_t>(i) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= denom;
  }
  Tensor result = make_result(x.shape, out, "softmax_rows", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od, rows, cols]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        const double* p = od->data();
        double* dx = x.grad->data();
        for (int i = 0; i < rows; ++i) {
          const double* gr = g + static_cast<std::size_t>(i) * cols;
          const double* pr = p + static_cast<std::size_t>(i) * cols;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) dot += gr[j] * pr[j];
          double* dr = dx + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) dr[j] += pr[j] * (gr[j] - dot);
        }
      }
    };
  }
  return result;
}

Tensor masked_softmax_rows(const Tensor& x, const std::vector<std::uint8_t>& keep_cols) {
  check_2d(x, "masked_softmax");
  const int rows = x.rows(), cols = x.cols();
  if (static_cast<int>(keep_cols.size()) != cols)
    throw std::runtime_error("masked_softmax: keep mask must have cols(x) entries");
  bool any = false;
  for (std::uint8_t k : keep_cols) any = any || (k != 0);
  if (!any) throw std::domain_error("masked_softmax: empty support (all keys dropped)");
  auto out = make_buf(x.numel());
  const double* px = x.data->data();
  double* po = out->data();
  for (int i = 0; i < rows; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * cols;
    double* orow = po + static_cast<std::size_t>(i) * cols;
    double mx = -1e300;
    for (int j = 0; j < cols; ++j)
      if (keep_cols[j]) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      if (keep_cols[j]) {
        orow[j] = std::exp(xr[j] - mx);
        denom += orow[j];
      } else {
        orow[j] = 0.0;
      }
    }
    for (int j = 0; j < cols; ++j)
      if (keep_cols[j]) orow[j] /= denom;
  }
  Tensor result = make_result(x.shape, out, "masked_softmax", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    std::vector<std::uint8_t> keep = keep_cols;
    result.node->backward = [x, og, od, keep, rows, cols]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        const double* p = od->data();
        double* dx = x.grad->data();
        for (int i = 0; i < rows; ++i) {
          const double* gr = g + static_cast<std::size_t>(i) * cols;
          const double* pr = p + static_cast<std::size_t>(i) * cols;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j)
            if (keep[j]) dot += gr[j] * pr[j];
          double* dr = dx + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j)
            if (keep[j]) dr[j] += pr[j] * (gr[j] - dot);
        }
      }
    };
  }
  return result;
}

Tensor gmp_rows(const Tensor& x) {
  check_2d(x, "gmp");
  const int rows = x.rows(), cols = x.cols();
  if (rows < 1) throw std::runtime_error("gmp: need at least one row");
  auto out = make_buf(cols);
  auto argmax = std::make_shared<std::vector<int>>(cols, 0);
  const double* px = x.data->data();
  double* po = out->data();
  for (int j = 0; j < cols; ++j) po[j] = px[j];
  for (int i = 1; i < rows; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      if (xr[j] > po[j]) {
        po[j] = xr[j];
        (*argmax)[j] = i;
      }
    }
  }
  Tensor result = make_result({1, cols}, out, "gmp", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od, argmax, cols]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        for (int j = 0; j < cols; ++j)
          x.grad->data()[static_cast<std::size_t>((*argmax)[j]) * cols + j] += g[j];
      }
    };
  }
  return result;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  check_2d(x, "l2_normalize");
  const int rows = x.rows(), cols = x.cols();
  auto out = make_buf(x.numel());
  auto inv_norm = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data->data();
  double* po = out->data();
  for (int i = 0; i < rows; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * cols;
    double ss = 0.0;
    for (int j = 0; j < cols; ++j) ss += xr[j] * xr[j];
    const double inv = 1.0 / (std::sqrt(ss) + eps);
    (*inv_norm)[i] = inv;
    for (int j = 0; j < cols; ++j) po[static_cast<std::size_t>(i) * cols + j] = xr[j] * inv;
  }
  Tensor result = make_result(x.shape, out, "l2_normalize", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od, inv_norm, rows, cols]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        const double* px2 = x.data->data();
        const double* py = od->data();
        double* dx = x.grad->data();
        for (int i = 0; i < rows; ++i) {
          const double* gr = g + static_cast<std::size_t>(i) * cols;
          const double* xr = px2 + static_cast<std::size_t>(i) * cols;
          const double* yr = py + static_cast<std::size_t>(i) * cols;
          const double inv = (*inv_norm)[i];
          double norm = 0.0;
          for (int j = 0; j < cols; ++j) norm += xr[j] * xr[j];
          norm = std::sqrt(norm);
          double gy = 0.0;
          for (int j = 0; j < cols; ++j) gy += gr[j] * xr[j];
          const double inv2 = inv * inv;
          double* dr = dx + static_cast<std::size_t>(i) * cols;
          const double nf = norm > 0.0 ? 1.0 / norm : 0.0;
          for (int j = 0; j < cols; ++j)
            dr[j] += gr[j] * inv - gy * inv2 * nf * xr[j];
          (void)yr;
        }
      }
    };
  }
  return result;
}

Tensor bilinear_upsample_grid(const Tensor& x, int h_in, int w_in, int h_out, int w_out) {
  check_2d(x, "bilinear_upsample");
  if (x.rows() != h_in * w_in) throw std::runtime_error("bilinear_upsample: rows must equal h_in*w_in");
  const int ch = x.cols();
  auto out = make_buf(static_cast<std::int64_t>(h_out) * w_out * ch);
  // Half-pixel centers (align_corners = false); weights precomputed per axis.
  auto axis_weights = [](int in, int out_n, std::vector<int>& i0, std::vector<int>& i1,
                         std::vector<double>& w1) {
    i0.resize(out_n);
    i1.resize(out_n);
    w1.resize(out_n);
    const double s = static_cast<double>(in) / out_n;
    for (int i = 0; i < out_n; ++i) {
      double src = (i + 0.5) * s - 0.5;
      if (src < 0.0) src = 0.0;
      if (src > in - 1) src = in - 1;
      const int lo = static_cast<int>(std::floor(src));
      i0[i] = lo;
      i1[i] = std::min(lo + 1, in - 1);
      w1[i] = src - lo;
    }
  };
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  axis_weights(h_in, h_out, y0, y1, wy);
  axis_weights(w_in, w_out, x0, x1, wx);
  const double* px = x.data->data();
  double* po = out->data();
  for (int oy = 0; oy < h_out; ++oy) {
    for (int ox = 0; ox < w_out; ++ox) {
      const double fy = wy[oy], fx = wx[ox];
      const double* p00 = px + (static_cast<std::size_t>(y0[oy]) * w_in + x0[ox]) * ch;
      const double* p01 = px + (static_cast<std::size_t>(y0[oy]) * w_in + x1[ox]) * ch;
      const double* p10 = px + (static_cast<std::size_t>(y1[oy]) * w_in + x0[ox]) * ch;
      const double* p11 = px + (static_cast<std::size_t>(y1[oy]) * w_in + x1[ox]) * ch;
      double* orow = po + (static_cast<std::size_t>(oy) * w_out + ox) * ch;
      for (int c = 0; c < ch; ++c)
        orow[c] = (1 - fy) * ((1 - fx) * p00[c] + fx * p01[c]) +
                  fy * ((1 - fx) * p10[c] + fx * p11[c]);
    }
  }
  Tensor result = make_result({h_out * w_out, ch}, out, "bilinear_upsample", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od, y0, y1, x0, x1, wy, wx, w_in, h_out, w_out, ch]() {
      if (x.requires_grad && x.grad) {
        const double* g = og->data();
        double* dx = x.grad->data();
        for (int oy = 0; oy < h_out; ++oy) {
          for (int ox = 0; ox < w_out; ++ox) {
            const double fy = wy[oy], fx = wx[ox];
            const double* gr = g + (static_cast<std::size_t>(oy) * w_out + ox) * ch;
            double* d00 = dx + (static_cast<std::size_t>(y0[oy]) * w_in + x0[ox]) * ch;
            double* d01 = dx + (static_cast<std::size_t>(y0[oy]) * w_in + x1[ox]) * ch;
            double* d10 = dx + (static_cast<std::size_t>(y1[oy]) * w_in + x0[ox]) * ch;
            double* d11 = dx + (static_cast<std::size_t>(y1[oy]) * w_in + x1[ox]) * ch;
            for (int c = 0; c < ch; ++c) {
              d00[c] += gr[c] * (1 - fy) * (1 - fx);
              d01[c] += gr[c] * (1 - fy) * fx;
              d10[c] += gr[c] * fy * (1 - fx);
              d11[c] += gr[c] * fy * fx;
            }
          }
        }
      }
    };
  }
  return result;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const double* px = x.data->data();
  for (std::int64_t i = 0; i < x.numel(); ++i) s += px[i];
  auto out = make_buf(1);
  (*out)[0] = s;
  Tensor result = make_result({1}, out, "sum_all", {&x}, nullptr);
  if (result.node) {
    auto og = result.grad;
    auto od = result.data;
    result.node->backward = [x, og, od]() {
      if (x.requires_grad && x.grad) {
        const double g = (*og)[0];
        double* dx = x.grad->data();
        for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] += g;
      }
    };
  }
  return result;
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw std::runtime_error("mean_all: empty tensor");
  Tensor s = sum_all(x);
  return scale(s, 1.0 / static_cast<double>(x.numel()));
}

Tensor detach(const Tensor& t) {
  Tensor out;
  out.shape = t.shape;
  out.data = std::make_shared<std::vector<double>>(*t.data);
  out.requires_grad = false;
  return out;
}

void backward(Tensor& loss) {
  if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
  if (!loss.node) {
    if (loss.requires_grad && loss.grad) (*loss.grad)[0] += 1.0;
    return;
  }
  (*loss.grad)[0] = 1.0;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

double grad_check(const std::function<Tensor(std::vector<Tensor>&)>& loss_fn,
                  std::vector<Tensor>& params, double h) {
  for (Tensor& p : params) {
    if (!p.requires_grad) throw std::runtime_error("grad_check: param without requires_grad");
    p.zero_grad();
  }
  Tensor loss = loss_fn(params);
  if (!std::isfinite((*loss.data)[0])) throw std::runtime_error("grad_check: non-finite loss");
  backward(loss);
  double max_rel = 0.0;
  NoGrad ng;
  for (Tensor& p : params) {
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double orig = (*p.data)[i];
      (*p.data)[i] = orig + h;
      const double lp = (*loss_fn(params).data)[0];
      (*p.data)[i] = orig - h;
      const double lm = (*loss_fn(params).data)[0];
      (*p.data)[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = (*p.grad)[i];
      const double denom = std::max({1e-6, std::fabs(an), std::fabs(fd)});
      max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace mcc
