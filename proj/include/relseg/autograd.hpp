#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Tensors are row-major and contiguous. Image-like tensors use NCHW layout.
// Each op records its parents and a backward closure; `backward(loss)` walks
// the recorded graph in reverse topological order. Recording is disabled
// inside a `NoGradGuard` scope (per thread).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace relseg::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<double> values);
  static Var zeros(Shape shape);
  static Var scalar(double v);
  // A leaf that accumulates gradients (parameters, or inputs under test).
  static Var leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const;
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Same values, no history.
  Var detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

void backward(const Var& loss);

// Hook for ops defined outside this file. `fn` receives the result node and
// accumulates into parent gradients via parent_grad().
Var make_op(Shape shape, std::vector<double> value, std::vector<Var> parents, std::function<void(Node&)> fn);
// Gradient buffer of parent i, or nullptr when it takes no gradient.
double* parent_grad(Node& self, std::size_t i);

// ---- elementwise -------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// s must hold a single element; result is s * a.
Var scale_by(const Var& s, const Var& a);
Var relu(const Var& a);
// x * sigmoid(x); smooth, used where finite-difference checks must hold.
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var sum(const Var& a);
Var add_n(const std::vector<Var>& terms);

// ---- shape ---------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
// Rows (axis 0) picked by index, repeats allowed.
Var index_rows(const Var& a, std::span<const int> rows);
// x: [N,C,H,W] -> [N,1,H,W], channel picked per sample.
Var gather_channel(const Var& x, std::span<const int> channel);
// Flat gather: result is 1-D with out[i] = a.data()[index[i]].
Var take(const Var& a, std::span<const int> index);

// ---- linear algebra ----------------------------------------------------
Var matmul(const Var& a, const Var& b);      // [M,K] x [K,N]
Var matmul_nt(const Var& a, const Var& b);   // [M,K] x [N,K]^T
// [M,K] x [K,N] accumulated over the inner index in `k_order`, element by
// element; the result does not depend on how rows of `a` are arranged.
Var matmul_ordered(const Var& a, const Var& b, std::span<const int> k_order);
// a a^T with every entry an ordinary sequential dot product; exactly symmetric.
Var gram(const Var& a);
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W^T + b
Var row_softmax(const Var& a);
// Per row, all entries outside the k largest become -inf. Ties favour the
// lower column index.
Var keep_topk_rows(const Var& a, int k);

// ---- convolution / spatial ----------------------------------------------
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// Transposed convolution with kernel 2, stride 2; weight is [Cin,Cout,2,2].
Var deconv2x2(const Var& x, const Var& weight, const Var& bias);
Var avg_pool2x2(const Var& x);
Var upsample_nearest2x(const Var& x);

// ---- losses (scalar outputs) -----------------------------------------------
// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
// Mean of elementwise binary cross-entropy on logits against targets in [0,1].
Var bce_with_logits(const Var& logits, std::span<const double> targets);
// Sum of smooth-L1 over elements, divided by `normalizer`.
Var smooth_l1(const Var& pred, std::span<const double> target, double beta, double normalizer);

}  // namespace relseg::ag
