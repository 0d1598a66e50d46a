#include "occ/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace occ {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw std::invalid_argument("non-positive dim " + shape_str(shape));
  n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(numel(n->shape)), 0.0);
  n->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t(shape, requires_grad);
  if (static_cast<int64_t>(data.size()) != numel(shape))
    throw std::invalid_argument("data length does not match shape " + shape_str(shape));
  t.n->data = std::move(data);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.n->data.begin(), t.n->data.end(), v);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw std::runtime_error("item() on non-scalar " + shape_str(shape()));
  return n->data[0];
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::shared_ptr<TensorNode>& node) {
  if (g_active_tape) g_active_tape->entries_.push_back(node);
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::runtime_error("backward() expects a scalar loss");
  loss.n->ensure_grad();
  loss.n->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& node = *it;
    if (node->backward && !node->grad.empty()) node->backward();
    node->backward = nullptr;
    node->parents.clear();
  }
  entries_.clear();
}

void wire_node(const Tensor& out, std::vector<Tensor> parents, std::function<void()> fn) {
  bool need = false;
  for (const auto& p : parents) need = need || p.n->requires_grad;
  out.n->requires_grad = need;
  if (!need || Tape::active() == nullptr) return;
  for (const auto& p : parents) out.n->parents.push_back(p.n);
  out.n->backward = std::move(fn);
  Tape::record(out.n);
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double s = 1.0) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  wire_node(out, {a, b}, [an = a.n, bn = b.n, on = out.n] {
    if (an->requires_grad) { an->ensure_grad(); axpy(an->grad, on->grad); }
    if (bn->requires_grad) { bn->ensure_grad(); axpy(bn->grad, on->grad); }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  wire_node(out, {a, b}, [an = a.n, bn = b.n, on = out.n] {
    if (an->requires_grad) { an->ensure_grad(); axpy(an->grad, on->grad); }
    if (bn->requires_grad) { bn->ensure_grad(); axpy(bn->grad, on->grad, -1.0); }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  wire_node(out, {a, b}, [an = a.n, bn = b.n, on = out.n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  wire_node(out, {a}, [an = a.n, on = out.n, s] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    axpy(an->grad, on->grad, s);
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + s;
  wire_node(out, {a}, [an = a.n, on = out.n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    axpy(an->grad, on->grad);
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  wire_node(out, {a}, [an = a.n, on = out.n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i)
      if (an->data[i] > 0.0) an->grad[i] += on->grad[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  wire_node(out, {a}, [an = a.n, on = out.n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) {
      double y = on->data[i];
      an->grad[i] += on->grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;  // fixed left-to-right order
  Tensor out = Tensor::from({1}, {acc});
  wire_node(out, {a}, [an = a.n, on = out.n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (double& g : an->grad) g += on->grad[0];
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), a.data());
  wire_node(out, {a}, [an = a.n, on = out.n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    axpy(an->grad, on->grad);
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input");
  const Shape& s0 = xs[0].shape();
  int nd = static_cast<int>(s0.size());
  if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: bad axis");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && x.shape()[d] != s0[d])
        throw std::invalid_argument("concat: shape mismatch off-axis");
    out_shape[axis] += x.shape()[axis];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s0[d];

  Tensor out(out_shape);
  int64_t out_row = static_cast<int64_t>(out_shape[axis]) * inner;
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t row = static_cast<int64_t>(x.shape()[axis]) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data().data() + o * out_row + off, x.data().data() + o * row,
                  static_cast<size_t>(row) * sizeof(double));
    off += row;
  }
  std::vector<Tensor> parents = xs;
  wire_node(out, parents, [xs, on = out.n, outer, inner, out_row] {
    int64_t off = 0;
    for (const auto& x : xs) {
      int64_t axis_len = static_cast<int64_t>(x.n->data.size()) / (outer * inner);
      int64_t row = axis_len * inner;
      if (x.n->requires_grad) {
        x.n->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < row; ++i)
            x.n->grad[o * row + i] += on->grad[o * out_row + off + i];
      }
      off += row;
    }
  });
  return out;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  int nd = static_cast<int>(s.size());
  if (axis < 0 || axis >= nd || start < 0 || len <= 0 || start + len > s[axis])
    throw std::invalid_argument("slice: bad range");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = len;
  Tensor out(out_shape);
  int64_t in_row = static_cast<int64_t>(s[axis]) * inner;
  int64_t out_row = static_cast<int64_t>(len) * inner;
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data().data() + o * out_row, a.data().data() + o * in_row + start * inner,
                static_cast<size_t>(out_row) * sizeof(double));
  wire_node(out, {a}, [an = a.n, on = out.n, outer, inner, in_row, out_row, start] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < out_row; ++i)
        an->grad[o * in_row + start * inner + i] += on->grad[o * out_row + i];
  });
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose2d: rank != 2");
  int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  wire_node(out, {a}, [an = a.n, on = out.n, m, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
  });
  return out;
}

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  CMatMap A(a.data().data(), m, k), B(b.data().data(), k, n);
  MatMap C(out.data().data(), m, n);
  C.noalias() = A * B;
  wire_node(out, {a, b}, [an = a.n, bn = b.n, on = out.n, m, k, n] {
    CMatMap dC(on->grad.data(), m, n);
    CMatMap A(an->data.data(), m, k), B(bn->data.data(), k, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap dA(an->grad.data(), m, k);
      dA.noalias() += dC * B.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap dB(bn->grad.data(), k, n);
      dB.noalias() += A.transpose() * dC;
    }
  });
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw std::invalid_argument("softmax: bad axis");
  int64_t outer = 1, inner = 1;
  int len = s[axis];
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];

  Tensor out(s);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const double* x = a.data().data() + o * len * inner + i;
      double* y = out.data().data() + o * len * inner + i;
      double mx = x[0];
      for (int j = 1; j < len; ++j) mx = std::max(mx, x[j * inner]);
      double z = 0.0;
      for (int j = 0; j < len; ++j) {
        double e = std::exp(x[j * inner] - mx);
        y[j * inner] = e;
        z += e;
      }
      for (int j = 0; j < len; ++j) y[j * inner] /= z;
    }
  wire_node(out, {a}, [an = a.n, on = out.n, outer, inner, len] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const double* y = on->data.data() + o * len * inner + i;
        const double* dy = on->grad.data() + o * len * inner + i;
        double* dx = an->grad.data() + o * len * inner + i;
        double dot = 0.0;
        for (int j = 0; j < len; ++j) dot += y[j * inner] * dy[j * inner];
        for (int j = 0; j < len; ++j)
          dx[j * inner] += y[j * inner] * (dy[j * inner] - dot);
      }
  });
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  int c = a.shape().back();
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("layer_norm: gamma/beta length mismatch");
  int64_t rows = a.size() / c;
  Tensor out(a.shape());
  std::vector<double> mu(rows), rstd(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += x[j];
    m /= c;
    double v = 0.0;
    for (int j = 0; j < c; ++j) v += (x[j] - m) * (x[j] - m);
    v /= c;
    mu[r] = m;
    rstd[r] = 1.0 / std::sqrt(v + eps);
    double* y = out.data().data() + r * c;
    for (int j = 0; j < c; ++j)
      y[j] = (x[j] - m) * rstd[r] * gamma.data()[j] + beta.data()[j];
  }
  wire_node(out, {a, gamma, beta},
            [an = a.n, gn = gamma.n, bn = beta.n, on = out.n, rows, c,
             mu = std::move(mu), rstd = std::move(rstd)] {
    for (int64_t r = 0; r < rows; ++r) {
      const double* x = an->data.data() + r * c;
      const double* dy = on->grad.data() + r * c;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < c; ++j) gn->grad[j] += dy[j] * (x[j] - mu[r]) * rstd[r];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < c; ++j) bn->grad[j] += dy[j];
      }
      if (an->requires_grad) {
        an->ensure_grad();
        double* dx = an->grad.data() + r * c;
        double sum_g = 0.0, sum_gx = 0.0;
        for (int j = 0; j < c; ++j) {
          double g = dy[j] * gn->data[j];
          double xh = (x[j] - mu[r]) * rstd[r];
          sum_g += g;
          sum_gx += g * xh;
        }
        for (int j = 0; j < c; ++j) {
          double g = dy[j] * gn->data[j];
          double xh = (x[j] - mu[r]) * rstd[r];
          dx[j] += rstd[r] * (g - sum_g / c - xh * sum_gx / c);
        }
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<double>& class_weights, int ignore_index) {
  if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be [N,C]");
  int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != c)
    throw std::invalid_argument("cross_entropy: class weight count mismatch");
  auto weight_of = [&](int t) { return class_weights.empty() ? 1.0 : class_weights[t]; };

  // Row-wise log-sum-exp with max subtraction.
  std::vector<double> lse(n), mx(n);
  for (int i = 0; i < n; ++i) {
    const double* x = logits.data().data() + static_cast<int64_t>(i) * c;
    double m = x[0];
    for (int j = 1; j < c; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - m);
    mx[i] = m;
    lse[i] = m + std::log(z);
  }
  double loss = 0.0, wtot = 0.0;
  for (int i = 0; i < n; ++i) {
    int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || t >= c) throw std::out_of_range("cross_entropy: target out of range");
    double w = weight_of(t);
    loss += w * (lse[i] - logits.data()[static_cast<int64_t>(i) * c + t]);
    wtot += w;
  }
  if (wtot == 0.0) wtot = 1.0;
  Tensor out = Tensor::from({1}, {loss / wtot});
  wire_node(out, {logits},
            [ln = logits.n, on = out.n, targets, class_weights, ignore_index, n, c,
             lse = std::move(lse), wtot] {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    double g0 = on->grad[0] / wtot;
    for (int i = 0; i < n; ++i) {
      int t = targets[i];
      if (t == ignore_index) continue;
      double w = class_weights.empty() ? 1.0 : class_weights[t];
      const double* x = ln->data.data() + static_cast<int64_t>(i) * c;
      double* dx = ln->grad.data() + static_cast<int64_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        double p = std::exp(x[j] - lse[i]);
        dx[j] += g0 * w * (p - (j == t ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.size())
    throw std::invalid_argument("bce_with_logits: target size mismatch");
  int64_t n = logits.size();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double x = logits.data()[i], t = targets[i];
    // log(1+exp(-|x|)) + max(x,0) - x*t
    loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * t;
  }
  Tensor out = Tensor::from({1}, {loss / static_cast<double>(n)});
  wire_node(out, {logits}, [ln = logits.n, on = out.n, targets, n] {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    double g0 = on->grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double x = ln->data[i];
      double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      ln->grad[i] += g0 * (s - targets[i]);
    }
  });
  return out;
}

Tensor dice_loss_with_logits(const Tensor& logits, const std::vector<double>& targets,
                             double eps) {
  if (static_cast<int64_t>(targets.size()) != logits.size())
    throw std::invalid_argument("dice_loss_with_logits: target size mismatch");
  int64_t n = logits.size();
  std::vector<double> p(n);
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double x = logits.data()[i];
    p[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    inter += p[i] * targets[i];
    psum += p[i];
    gsum += targets[i];
  }
  double num = 2.0 * inter + eps, den = psum + gsum + eps;
  Tensor out = Tensor::from({1}, {1.0 - num / den});
  wire_node(out, {logits},
            [ln = logits.n, on = out.n, targets, n, p = std::move(p), num, den] {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    double g0 = on->grad[0];
    for (int64_t i = 0; i < n; ++i) {
      // d(1-num/den)/dp = -(2*t*den - num)/den^2
      double dp = -(2.0 * targets[i] * den - num) / (den * den);
      ln->grad[i] += g0 * dp * p[i] * (1.0 - p[i]);
    }
  });
  return out;
}

Tensor outer_lift(const Tensor& feats, const Tensor& dist) {
  if (feats.ndim() != 2 || dist.ndim() != 2 || feats.dim(1) != dist.dim(1))
    throw std::invalid_argument("outer_lift: expects F [C,P], D [B,P]");
  int c = feats.dim(0), b = dist.dim(0), p = feats.dim(1);
  Tensor out({c, b, p});
  for (int ci = 0; ci < c; ++ci)
    for (int bi = 0; bi < b; ++bi) {
      const double* f = feats.data().data() + static_cast<int64_t>(ci) * p;
      const double* d = dist.data().data() + static_cast<int64_t>(bi) * p;
      double* y = out.data().data() + (static_cast<int64_t>(ci) * b + bi) * p;
      for (int pi = 0; pi < p; ++pi) y[pi] = f[pi] * d[pi];
    }
  wire_node(out, {feats, dist}, [fn = feats.n, dn = dist.n, on = out.n, c, b, p] {
    for (int ci = 0; ci < c; ++ci)
      for (int bi = 0; bi < b; ++bi) {
        const double* dy = on->grad.data() + (static_cast<int64_t>(ci) * b + bi) * p;
        if (fn->requires_grad) {
          fn->ensure_grad();
          double* df = fn->grad.data() + static_cast<int64_t>(ci) * p;
          const double* d = dn->data.data() + static_cast<int64_t>(bi) * p;
          for (int pi = 0; pi < p; ++pi) df[pi] += dy[pi] * d[pi];
        }
        if (dn->requires_grad) {
          dn->ensure_grad();
          double* dd = dn->grad.data() + static_cast<int64_t>(bi) * p;
          const double* f = fn->data.data() + static_cast<int64_t>(ci) * p;
          for (int pi = 0; pi < p; ++pi) dd[pi] += dy[pi] * f[pi];
        }
      }
  });
  return out;
}

}  // namespace occ
