#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A TensorT<T> is a shared handle to a graph node holding a shape, a value
// buffer, and (once backward() has run) a gradient buffer.  Operations build
// the graph eagerly; calling backward() on a scalar result walks the graph in
// reverse topological order and accumulates gradients into every node that
// requires them.  Nodes that do not require gradients never allocate a
// gradient buffer.
//
// Shapes are row-major. Binary elementwise operations broadcast by aligning
// trailing dimensions: a dimension of size 1 (or a missing leading dimension)
// repeats against the other operand.  Mismatched dimensions raise
// TensorError with both shapes in the message.
//
// The library is instantiated for float and double.  All graph evaluation is
// sequential and deterministic: re-running the same graph produces bit
// identical forward values and gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retex {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class TensorT;

namespace detail {

template <typename T>
struct NodeT {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until backward touches this node
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class TensorT {
 public:
  using Node = detail::NodeT<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape);
  static TensorT full(Shape shape, T value);
  static TensorT from_data(Shape shape, std::vector<T> data);
  static TensorT scalar(T value);
  // Leaf with requires_grad set, i.e. a trainable parameter.
  static TensorT param(Shape shape, std::vector<T> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::span<const T> data() const;
  // Mutable access to the value buffer (optimizer updates, in-place setup).
  std::vector<T>& raw() const;
  T item() const;

  bool requires_grad() const;
  // Only valid on leaves; interior nodes own their flag.
  void set_requires_grad(bool value) const;
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad() const;

  // Reverse-mode sweep from a scalar tensor.
  void backward() const;

  // Same value, cut off from the graph (never requires grad).
  TensorT detach() const;
  // Deep copy as an independent leaf (keeps requires_grad).
  TensorT clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  static TensorT wrap(std::shared_ptr<Node> node) {
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Builds a graph node from explicit parents and a backward callback.  The
// callback receives the node (with its grad buffer filled) and must
// accumulate into each parent's grad via ensure_grad() + "+=".  This is the
// extension point for operations with custom adjoints (scatter means,
// rasterized lookups, ...).
template <typename T>
TensorT<T> make_op(Shape shape, std::vector<T> value,
                   std::vector<TensorT<T>> parents,
                   std::function<void(detail::NodeT<T>&)> backward);

// Elementwise with trailing-dimension broadcasting.
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);

// Elementwise unary.
template <typename T> TensorT<T> neg(const TensorT<T>& x);
template <typename T> TensorT<T> sin(const TensorT<T>& x);
template <typename T> TensorT<T> cos(const TensorT<T>& x);
template <typename T> TensorT<T> abs(const TensorT<T>& x);
template <typename T> TensorT<T> square(const TensorT<T>& x);
template <typename T> TensorT<T> sqrt(const TensorT<T>& x);
template <typename T> TensorT<T> relu(const TensorT<T>& x);
template <typename T> TensorT<T> leaky_relu(const TensorT<T>& x, T slope);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T> TensorT<T> tanh(const TensorT<T>& x);
// scale * x + shift
template <typename T> TensorT<T> affine(const TensorT<T>& x, T scale, T shift);
// x ** e for x >= 0; at x == 0 with e < 1 the gradient is defined as 0.
template <typename T> TensorT<T> pow_scalar(const TensorT<T>& x, T e);

// [m,k] x [k,n] -> [m,n], BLAS backed.
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// x [N,C,H,W], w [OC,C,KH,KW] with odd KH,KW, optional bias [OC] (pass an
// undefined tensor for none).  Zero padding, floor output size.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  std::size_t stride, std::size_t padding);

// Reductions remove the listed axes (empty list = all axes, scalar result).
// reduce_std is the population standard deviation.
template <typename T> TensorT<T> reduce_sum(const TensorT<T>& x, std::vector<int> axes = {});
template <typename T> TensorT<T> reduce_mean(const TensorT<T>& x, std::vector<int> axes = {});
template <typename T> TensorT<T> reduce_std(const TensorT<T>& x, std::vector<int> axes = {});

// Spatial ops on [N,C,H,W].
template <typename T> TensorT<T> upsample_nearest2(const TensorT<T>& x, std::size_t factor);
template <typename T> TensorT<T> avg_pool2(const TensorT<T>& x);
template <typename T>
TensorT<T> downsample_bilinear(const TensorT<T>& x, std::size_t oh, std::size_t ow);
// Mirror padding of the two innermost axes; pad <= dim-1.
template <typename T> TensorT<T> pad_reflect2(const TensorT<T>& x, std::size_t pad);

// Layout ops.
template <typename T> TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T> TensorT<T> permute(const TensorT<T>& x, std::vector<std::size_t> perm);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::size_t axis);
template <typename T>
TensorT<T> slice(const TensorT<T>& x, std::size_t axis, std::size_t start, std::size_t len);

// Row gather: x [R,C], returns [indices.size(), C]; out-of-range rows throw.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<std::uint32_t>& indices);

namespace detail {
// cblas_{s,d}gemm wrapper; row-major, C = alpha * op(A) op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T beta, T* c, std::size_t ldc);
}  // namespace detail

using Tensor = TensorT<double>;

}  // namespace retex
