#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace samri::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Graph node. Values are 64-bit; `grad` is allocated on first use.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Shared handle to a node of a dynamically recorded graph.
///
/// A graph may be back-propagated by one thread at a time. Tensors built while
/// a NoGradGuard is active record no parents, so read-only inference over
/// shared parameters is safe from several threads.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return constant({1}, {v}); }
  /// Leaf that accumulates gradients.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Reverse-mode pass from this scalar; leaf grads accumulate.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Builds an op node. `backward` runs only when the result requires grad;
/// it receives the output node and must accumulate into parents that
/// require grad (see Node::ensure_grad).
Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
               std::function<void(Node&)> backward);

// ---- primitives ------------------------------------------------------------
// Shape errors throw samri::Error(ShapeMismatch) naming the offending shapes.

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [M,K] x [N,K]^T -> [M,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// 2D transpose.
Tensor transpose(const Tensor& a);

/// Elementwise with broadcasting: shapes are aligned on trailing dimensions
/// and each pair of extents must be equal or one of them 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Shape broadcast_shape(const Shape& a, const Shape& b);

/// Normalizes over the last dimension; gain and bias have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Softmax over the last dimension.
Tensor softmax(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Transposed convolution, no padding: x [H,W,Cin], w [Cin,k,k,Cout],
/// b [Cout] -> [(H-1)s+k, (W-1)s+k, Cout].
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 2);

/// Bilinear resize with half-pixel centers (align_corners = false) of
/// [H,W] or [H,W,C].
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Rows of `table` [V,D] -> [n,D].
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& indices);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Linear layer on rows: x [T,In] w [In,Out] b [Out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- parameters --------------------------------------------------------------

/// Named trainable or frozen tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

/// Ordered parameter list; order defines snapshot layout.
class ParameterSet {
 public:
  Tensor& add(std::string name, Shape shape, std::vector<double> values, bool frozen);
  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  Parameter* find(const std::string& name);
  std::size_t count(bool frozen) const;
  std::size_t scalar_count(bool frozen) const;
  void zero_grad();
  /// XXH64 over names and values of parameters with the given frozen flag.
  std::uint64_t hash(bool frozen) const;

 private:
  std::vector<Parameter> params_;
};

// ---- gradient check --------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(t+h) - f(t-h)) / 2h for every entry of every tensor in
/// `params`. Error per entry is |a - fd| / max(1, |fd|). Throws NonFiniteLoss.
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace samri::tensor
