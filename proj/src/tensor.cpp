#include "stepalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "stepalign/util.hpp"

namespace stepalign {

namespace {

thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::TensorNode>;

NodePtr make_node(int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw ShapeError("tensor dims must be positive");
  auto n = std::make_shared<detail::TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->data.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  return n;
}

bool track(const Tensor& t) { return t_grad_enabled && t.requires_grad(); }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

// C[m x n] (+)= A[m x k] * B[k x n]; raw buffers, optional transposes.
void mm_raw(const double* a, const double* b, double* c, int m, int k, int n,
            bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = trans_a ? a[static_cast<std::size_t>(p) * m + i]
                          : a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow;
      if (trans_b) {
        // B^T row p is the p-th column of B[n x k]
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * k + p];
      } else {
        brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::identity(int n) {
  Tensor t = zeros(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  if (r == 0) throw ShapeError("from_rows: empty");
  int c = static_cast<int>(rows.begin()->size());
  Tensor t = zeros(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) throw ShapeError("from_rows: ragged rows");
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  int r = static_cast<int>(rows.size());
  if (r == 0) throw ShapeError("from_rows: empty");
  int c = static_cast<int>(rows.front().size());
  Tensor t = zeros(r, c);
  for (int i = 0; i < r; ++i) {
    const auto& row = rows[static_cast<size_t>(i)];
    if (static_cast<int>(row.size()) != c) throw ShapeError("from_rows: ragged rows");
    for (int j = 0; j < c; ++j) t.at(i, j) = row[static_cast<size_t>(j)];
  }
  return t;
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != data.size())
    throw ShapeError("from_data: size mismatch");
  Tensor t = zeros(rows, cols, requires_grad);
  t.data() = std::move(data);
  return t;
}

double& Tensor::at(int r, int c) {
  return node_->data[static_cast<std::size_t>(r) * node_->cols + c];
}

double Tensor::at(int r, int c) const {
  return node_->data[static_cast<std::size_t>(r) * node_->cols + c];
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor is not scalar");
  return node_->data[0];
}

std::vector<double>& Tensor::data() {
  require_defined(*this, "data");
  return node_->data;
}

const std::vector<double>& Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = flag;
}

std::vector<double>& Tensor::grad() {
  require_defined(*this, "grad");
  node_->ensure_grad();
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  require_defined(*this, "grad");
  if (!has_grad()) throw UsageError("grad: no gradient present");
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone_detached() const {
  require_defined(*this, "clone_detached");
  Tensor t = zeros(rows(), cols());
  t.data() = node_->data;
  return t;
}

// --- op helpers ---------------------------------------------------------------

namespace {

Tensor make_out(int rows, int cols, std::vector<NodePtr> parents, bool tracked) {
  auto n = make_node(rows, cols);
  if (tracked) {
    n->requires_grad = true;
    n->parents = std::move(parents);
  }
  return Tensor::wrap(std::move(n));
}

void set_backward(const Tensor& out, std::function<void(detail::TensorNode&)> fn) {
  if (out.node()->requires_grad && !out.node()->parents.empty())
    out.node()->backward_fn = std::move(fn);
}

}  // namespace

// --- ops -----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  int m = a.rows(), k = a.cols(), n = b.cols();
  bool tracked = track(a) || track(b);
  Tensor out = make_out(m, n, {a.node(), b.node()}, tracked);
  mm_raw(a.data().data(), b.data().data(), out.data().data(), m, k, n, false, false, false);
  set_backward(out, [m, k, n](detail::TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += G * B^T
      mm_raw(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k, false, true, true);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += A^T * G
      mm_raw(pa->data.data(), self.grad.data(), pb->grad.data(), k, m, n, true, false, true);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(n, m, {a.node()}, track(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  set_backward(out, [m, n](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i)
        p->grad[static_cast<std::size_t>(i) * n + j] +=
            self.grad[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         const std::function<double(double, double)>& f,
                         const std::function<void(detail::TensorNode&)>& bwd) {
  require_defined(a, name);
  require_defined(b, name);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(name) + ": shape mismatch");
  Tensor out = make_out(a.rows(), a.cols(), {a.node(), b.node()}, track(a) || track(b));
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dout = out.data();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = f(da[i], db[i]);
  set_backward(out, bwd);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; },
      [](detail::TensorNode& self) {
        for (int s = 0; s < 2; ++s) {
          auto& p = self.parents[static_cast<std::size_t>(s)];
          if (!p->requires_grad) continue;
          p->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](detail::TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](detail::TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] += self.grad[i] * pa->data[i];
        }
      });
}

namespace {

Tensor unary(const Tensor& a, const char* name, const std::function<double(double)>& f,
             const std::function<void(detail::TensorNode&)>& bwd) {
  require_defined(a, name);
  Tensor out = make_out(a.rows(), a.cols(), {a.node()}, track(a));
  const auto& da = a.data();
  auto& dout = out.data();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = f(da[i]);
  set_backward(out, bwd);
  return out;
}

}  // namespace

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return x * s; },
      [s](detail::TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * s;
      });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; },
      [](detail::TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_defined(a, "add_rowvec");
  require_defined(v, "add_rowvec");
  if (v.rows() != 1 || v.cols() != a.cols()) throw ShapeError("add_rowvec: v must be 1 x cols(a)");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(m, n, {a.node(), v.node()}, track(a) || track(v));
  const auto& da = a.data();
  const auto& dv = v.data();
  auto& dout = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      dout[static_cast<std::size_t>(i) * n + j] = da[static_cast<std::size_t>(i) * n + j] + dv[static_cast<std::size_t>(j)];
  set_backward(out, [m, n](detail::TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pv = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          pv->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  require_defined(a, "softmax");
  if (axis != 0 && axis != 1) throw UsageError("softmax: axis must be 0 or 1");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(m, n, {a.node()}, track(a));
  const auto& x = a.data();
  auto& y = out.data();
  auto idx = [n](int i, int j) { return static_cast<std::size_t>(i) * n + j; };
  int slices = (axis == 1) ? m : n;
  int len = (axis == 1) ? n : m;
  for (int s = 0; s < slices; ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < len; ++t) {
      double v = (axis == 1) ? x[idx(s, t)] : x[idx(t, s)];
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (int t = 0; t < len; ++t) {
      double v = (axis == 1) ? x[idx(s, t)] : x[idx(t, s)];
      double e = std::exp(v - mx);
      if (axis == 1)
        y[idx(s, t)] = e;
      else
        y[idx(t, s)] = e;
      sum += e;
    }
    for (int t = 0; t < len; ++t) {
      if (axis == 1)
        y[idx(s, t)] /= sum;
      else
        y[idx(t, s)] /= sum;
    }
  }
  set_backward(out, [m, n, axis](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    auto idx = [n](int i, int j) { return static_cast<std::size_t>(i) * n + j; };
    int slices = (axis == 1) ? m : n;
    int len = (axis == 1) ? n : m;
    for (int s = 0; s < slices; ++s) {
      double dot = 0.0;
      for (int t = 0; t < len; ++t) {
        std::size_t k = (axis == 1) ? idx(s, t) : idx(t, s);
        dot += self.grad[k] * self.data[k];
      }
      for (int t = 0; t < len; ++t) {
        std::size_t k = (axis == 1) ? idx(s, t) : idx(t, s);
        p->grad[k] += self.data[k] * (self.grad[k] - dot);
      }
    }
  });
  return out;
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](detail::TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] / p->data[i];
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](detail::TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * self.data[i];
      });
}

Tensor gelu(const Tensor& a) {
  // Exact erf form.
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](detail::TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          double x = p->data[i];
          double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          p->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  int m = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw ShapeError("layer_norm: gain/bias must be 1 x cols(x)");
  constexpr double kEps = 1e-5;
  bool tracked = track(x) || track(gain) || track(bias);
  Tensor out = make_out(m, d, {x.node(), gain.node(), bias.node()}, tracked);
  // xhat is needed in backward; stash it in the closure.
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  auto& od = out.data();
  for (int i = 0; i < m; ++i) {
    const double* row = xd.data() + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + kEps);
    (*inv_sigma)[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < d; ++j) {
      double h = (row[j] - mean) * inv;
      (*xhat)[static_cast<std::size_t>(i) * d + j] = h;
      od[static_cast<std::size_t>(i) * d + j] = gd[static_cast<std::size_t>(j)] * h + bd[static_cast<std::size_t>(j)];
    }
  }
  set_backward(out, [m, d, xhat, inv_sigma](detail::TensorNode& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    if (pg->requires_grad) {
      pg->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          pg->grad[static_cast<std::size_t>(j)] +=
              self.grad[static_cast<std::size_t>(i) * d + j] * (*xhat)[static_cast<std::size_t>(i) * d + j];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          pb->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * d + j];
    }
    if (px->requires_grad) {
      px->ensure_grad();
      for (int i = 0; i < m; ++i) {
        double inv = (*inv_sigma)[static_cast<std::size_t>(i)];
        double mean_dh = 0.0, mean_dh_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * d + j;
          double dh = self.grad[k] * pg->data[static_cast<std::size_t>(j)];
          mean_dh += dh;
          mean_dh_xhat += dh * (*xhat)[k];
        }
        mean_dh /= d;
        mean_dh_xhat /= d;
        for (int j = 0; j < d; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * d + j;
          double dh = self.grad[k] * pg->data[static_cast<std::size_t>(j)];
          px->grad[k] += inv * (dh - mean_dh - (*xhat)[k] * mean_dh_xhat);
        }
      }
    }
  });
  return out;
}

Tensor col_slice(const Tensor& a, int col0, int len) {
  require_defined(a, "col_slice");
  if (col0 < 0 || len <= 0 || col0 + len > a.cols()) throw ShapeError("col_slice: out of range");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(m, len, {a.node()}, track(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, col0 + j);
  set_backward(out, [m, n, col0, len](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        p->grad[static_cast<std::size_t>(i) * n + col0 + j] +=
            self.grad[static_cast<std::size_t>(i) * len + j];
  });
  return out;
}

Tensor hcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("hcat: no inputs");
  int m = parts[0].rows();
  int total = 0;
  bool tracked = false;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require_defined(p, "hcat");
    if (p.rows() != m) throw ShapeError("hcat: row mismatch");
    total += p.cols();
    tracked = tracked || track(p);
    parents.push_back(p.node());
  }
  Tensor out = make_out(m, total, std::move(parents), tracked);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  set_backward(out, [m, total](detail::TensorNode& self) {
    int off2 = 0;
    for (auto& p : self.parents) {
      int w = p->cols;
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            p->grad[static_cast<std::size_t>(i) * w + j] +=
                self.grad[static_cast<std::size_t>(i) * total + off2 + j];
      }
      off2 += w;
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_defined(a, "gather_rows");
  if (idx.empty()) throw UsageError("gather_rows: empty index list");
  for (int i : idx)
    if (i < 0 || i >= a.rows()) throw ShapeError("gather_rows: index out of range");
  int n = a.cols();
  int m = static_cast<int>(idx.size());
  Tensor out = make_out(m, n, {a.node()}, track(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(idx[static_cast<std::size_t>(i)], j);
  set_backward(out, [idx, m, n](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p->grad[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * n + j] +=
            self.grad[static_cast<std::size_t>(i) * n + j];
  });
  return out;
}

Tensor row_sums(const Tensor& a) {
  require_defined(a, "row_sums");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(m, 1, {a.node()}, track(a));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a.at(i, j);
    out.at(i, 0) = s;
  }
  set_backward(out, [m, n](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p->grad[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i)];
  });
  return out;
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  Tensor out = make_out(1, 1, {a.node()}, track(a));
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  set_backward(out, [](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[0];
  });
  return out;
}

Tensor l2_normalize_rows(const Tensor& a, double norm_guard) {
  require_defined(a, "l2_normalize_rows");
  int m = a.rows(), n = a.cols();
  Tensor out = make_out(m, n, {a.node()}, track(a));
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    double norm = std::sqrt(s);
    (*norms)[static_cast<std::size_t>(i)] = norm;
    if (norm < norm_guard) {
      for (int j = 0; j < n; ++j) out.at(i, j) = 0.0;
    } else {
      for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) / norm;
    }
  }
  set_backward(out, [m, n, norms, norm_guard](detail::TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < m; ++i) {
      double norm = (*norms)[static_cast<std::size_t>(i)];
      if (norm < norm_guard) continue;  // degenerate rows get zero gradient
      double dot = 0.0;
      for (int j = 0; j < n; ++j) {
        std::size_t k = static_cast<std::size_t>(i) * n + j;
        dot += self.grad[k] * self.data[k];
      }
      for (int j = 0; j < n; ++j) {
        std::size_t k = static_cast<std::size_t>(i) * n + j;
        p->grad[k] += (self.grad[k] - self.data[k] * dot) / norm;
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  require_defined(a, "dropout");
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  auto mask = std::make_shared<std::vector<double>>(a.numel());
  double keep = 1.0 - p;
  for (auto& v : *mask) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = make_out(a.rows(), a.cols(), {a.node()}, track(a));
  const auto& da = a.data();
  auto& dout = out.data();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] * (*mask)[i];
  set_backward(out, [mask](detail::TensorNode& self) {
    auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      parent->grad[i] += self.grad[i] * (*mask)[i];
  });
  return out;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
  // Iterative post-order DFS over the recorded graph.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  detail::TensorNode* root = loss.node().get();
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
  }
}

}  // namespace stepalign
