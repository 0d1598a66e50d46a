#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace occ {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::function<void()> backward;  // adjoint rule; cleared after use
  std::vector<std::shared_ptr<TensorNode>> parents;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantic handle to a shared n-d array node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return n != nullptr; }
  const Shape& shape() const { return n->shape; }
  int dim(int i) const { return n->shape[i]; }
  int ndim() const { return static_cast<int>(n->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(n->data.size()); }
  std::vector<double>& data() { return n->data; }
  const std::vector<double>& data() const { return n->data; }
  std::vector<double>& grad() { return n->grad; }
  const std::vector<double>& grad() const { return n->grad; }
  bool requires_grad() const { return n->requires_grad; }
  double item() const;

  std::shared_ptr<TensorNode> n;
};

// Single-writer op record for one forward/backward cycle. Ops executed while
// a tape is active append themselves when any input requires grad; backward()
// replays adjoints in reverse order and leaves the tape empty.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  bool empty() const { return entries_.empty(); }
  size_t size() const { return entries_.size(); }

  static Tape* active();
  static void record(const std::shared_ptr<TensorNode>& node);

 private:
  std::vector<std::shared_ptr<TensorNode>> entries_;
  Tape* prev_ = nullptr;
};

// Marks the output node as grad-requiring if any parent requires grad and
// registers it on the active tape. `fn` must accumulate into parent grads.
void wire_node(const Tensor& out, std::vector<Tensor> parents,
               std::function<void()> fn);

// ---- elementwise / reduction ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor transpose2d(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]

// ---- normalization / losses ----
Tensor softmax(const Tensor& a, int axis);
// Normalizes the last axis; gamma/beta are 1-d of that length.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// logits [N,C], targets size N with values in [0,C) or ignore_index.
// Weighted mean of -log softmax picked at the target.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<double>& class_weights = {},
                     int ignore_index = -1);
// Mean of BCE(sigmoid(logits), targets); targets in [0,1], same shape.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);
// Soft dice loss 1 - (2<p,g>+eps)/(sum p + sum g + eps) with p=sigmoid(logits).
Tensor dice_loss_with_logits(const Tensor& logits,
                             const std::vector<double>& targets,
                             double eps = 1.0);

// outer_lift: F [C,P] x D [B,P] -> [C,B,P], out[c,b,p] = F[c,p]*D[b,p].
Tensor outer_lift(const Tensor& feats, const Tensor& dist);

}  // namespace occ
