#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcc/rng.hpp"

namespace mcc {

struct Node;

// Dense row-major double tensor with reverse-mode autodiff. Data and grad are
// shared buffers so copies alias; grad is allocated only when requires_grad.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;
  std::shared_ptr<Node> node;
  bool requires_grad = false;

  Tensor() = default;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }
  double& operator[](std::size_t i) { return (*data)[i]; }
  double operator[](std::size_t i) const { return (*data)[i]; }

  void zero_grad();

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stdev, bool requires_grad = false);
};

struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;
};

// Global switch for taping; NoGrad scopes inference-only computation.
bool is_grad_enabled();
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

// Throws if any element is NaN/Inf; every op below runs this on its output.
void assert_finite(const Tensor& t, const char* op);
void assert_finite_span(const double* p, std::int64_t n, const char* op);

// Raw kernels on contiguous buffers; accumulate adds into c instead of overwriting.
void mm_nn(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate);
void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate);
void mm_tn(double* c, const double* a, const double* b, int k, int m, int n, bool accumulate);

// Elementwise and linear-algebra ops; all differentiable unless noted.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor add_row_vector(const Tensor& m, const Tensor& v);  // v is [1×D]
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& t, int r0, int r1);  // half-open [r0, r1)
Tensor gather_rows(const Tensor& t, const std::vector<int>& idx);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor masked_softmax_rows(const Tensor& x, const std::vector<std::uint8_t>& keep_cols);
Tensor gmp_rows(const Tensor& x);  // [N×D] → [1×D] column max
Tensor l2_normalize_rows(const Tensor& x, double eps);
Tensor bilinear_upsample_grid(const Tensor& x, int h_in, int w_in, int h_out, int w_out);
Tensor sum_all(const Tensor& x);   // → [1]
Tensor mean_all(const Tensor& x);  // → [1]
Tensor detach(const Tensor& t);

void backward(Tensor& loss);

// Builder for fused ops defined outside this unit: validates finiteness,
// allocates grad and records a tape node when a parent needs gradients. The
// caller must then fill out.node->backward (when non-null) with a closure
// that accumulates into parent grads.
Tensor make_op(std::vector<int> shape, std::shared_ptr<std::vector<double>> data,
               const char* op, const std::vector<const Tensor*>& parents);
void accumulate_grad(const Tensor& t, const std::vector<double>& g);

// Max relative error between analytic and central finite-difference gradients,
// step h on every element of every param. Relative error uses a 1e-6 floor.
double grad_check(const std::function<Tensor(std::vector<Tensor>&)>& loss_fn,
                  std::vector<Tensor>& params, double h = 1e-4);

}  // namespace mcc
