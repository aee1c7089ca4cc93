#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "stepalign/rng.hpp"

namespace stepalign {

namespace detail {

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same size as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's grad into the parents' grads (accumulating).
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Thread-local switch: when disabled, ops produce detached outputs and no
// graph is recorded (used for inference).
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major rank-2 tensor of doubles with reverse-mode autodiff.
// Scalars are 1x1, vectors 1xn. Copying a Tensor copies the handle, not the
// buffer; ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor identity(int n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor from_data(int rows, int cols, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_ ? node_->rows : 0; }
  int cols() const { return node_ ? node_->cols : 0; }
  std::size_t numel() const { return node_ ? node_->data.size() : 0; }

  double& at(int r, int c);
  double at(int r, int c) const;
  double item() const;  // 1x1 only

  std::vector<double>& data();
  const std::vector<double>& data() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Detached value copy (no graph, no grad tracking).
  Tensor clone_detached() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// --- ops (all differentiable unless noted) ----------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // a[m x n] + v[1 x n]

// Max-subtracted softmax along `axis` (0: each column sums to 1, 1: each row).
Tensor softmax(const Tensor& a, int axis);

Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise normalization to zero mean / unit variance over the last dim with
// eps = 1e-5 inside the sqrt, then affine (gain, bias are 1 x D).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor col_slice(const Tensor& a, int col0, int len);
Tensor hcat(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor row_sums(const Tensor& a);  // m x n -> m x 1
Tensor sum_all(const Tensor& a);   // -> 1 x 1

// Rows scaled to unit L2 norm; rows with norm < guard map to zero (and get
// zero gradient), keeping cosine scores finite on degenerate embeddings.
Tensor l2_normalize_rows(const Tensor& a, double norm_guard = 1e-12);

// Inverted-dropout mask drawn from rng; p == 0 is the identity.
Tensor dropout(const Tensor& a, double p, Rng& rng);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor with requires_grad; repeated calls without zeroing add.
void backward(const Tensor& loss);

}  // namespace stepalign
