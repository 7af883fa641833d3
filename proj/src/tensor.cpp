#include "retex/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace retex {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw TensorError(msg); }

void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace

namespace detail {

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, float alpha, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, double alpha, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TensorT basics

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> data) {
  check(shape_numel(shape) == data.size(),
        "from_data: shape " + shape_str(shape) + " wants " +
            std::to_string(shape_numel(shape)) + " values, got " +
            std::to_string(data.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return wrap(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value) {
  return from_data(Shape{}, std::vector<T>{value});
}

template <typename T>
TensorT<T> TensorT<T>::param(Shape shape, std::vector<T> data) {
  TensorT t = from_data(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
const Shape& TensorT<T>::shape() const {
  check(defined(), "shape() on undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t TensorT<T>::numel() const {
  check(defined(), "numel() on undefined tensor");
  return node_->value.size();
}

template <typename T>
std::size_t TensorT<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  check(axis < s.size(), "dim(" + std::to_string(axis) + ") on " + shape_str(s));
  return s[axis];
}

template <typename T>
std::span<const T> TensorT<T>::data() const {
  check(defined(), "data() on undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

template <typename T>
std::vector<T>& TensorT<T>::raw() const {
  check(defined(), "raw() on undefined tensor");
  return node_->value;
}

template <typename T>
T TensorT<T>::item() const {
  check(defined() && numel() == 1,
        "item() needs exactly one element, have " +
            (defined() ? shape_str(shape()) : std::string("undefined")));
  return node_->value[0];
}

template <typename T>
bool TensorT<T>::requires_grad() const {
  return defined() && node_->requires_grad;
}

template <typename T>
void TensorT<T>::set_requires_grad(bool value) const {
  check(defined(), "set_requires_grad on undefined tensor");
  check(node_->parents.empty(), "set_requires_grad is only valid on leaves");
  node_->requires_grad = value;
  if (!value) node_->grad.clear();
}

template <typename T>
bool TensorT<T>::has_grad() const {
  return defined() && node_->grad.size() == node_->value.size();
}

template <typename T>
std::span<const T> TensorT<T>::grad() const {
  check(has_grad(), "grad() but no gradient has been accumulated");
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void TensorT<T>::zero_grad() const {
  if (defined()) node_->grad.clear();
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
  check(defined(), "detach() on undefined tensor");
  return from_data(node_->shape, node_->value);
}

template <typename T>
TensorT<T> TensorT<T>::clone() const {
  check(defined(), "clone() on undefined tensor");
  TensorT t = from_data(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

template <typename T>
void TensorT<T>::backward() const {
  check(defined(), "backward() on undefined tensor");
  check(numel() == 1, "backward() needs a scalar, have " + shape_str(shape()));
  check(node_->requires_grad, "backward() on a tensor that requires no gradient");

  // Post-order DFS; reversed it gives a valid execution order for adjoints.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, cursor] = stack.back();
    if (cursor < node->parents.size()) {
      Node* parent = node->parents[cursor++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-sweep temporaries; only leaves accumulate
  // across repeated backward() calls.
  for (Node* node : topo)
    if (!node->parents.empty()) node->grad.clear();

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template <typename T>
TensorT<T> make_op(Shape shape, std::vector<T> value,
                   std::vector<TensorT<T>> parents,
                   std::function<void(detail::NodeT<T>&)> backward) {
  check(shape_numel(shape) == value.size(),
        "make_op: shape " + shape_str(shape) + " does not match value count " +
            std::to_string(value.size()));
  auto n = std::make_shared<detail::NodeT<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) {
    check(p.defined(), "make_op: undefined parent");
    needs = needs || p.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->backward_fn = std::move(backward);
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
  }
  return TensorT<T>::wrap(std::move(n));
}

// ---------------------------------------------------------------------------
// Broadcasting

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> dims;       // out shape padded to common rank
  std::vector<std::size_t> a_strides;  // 0 on broadcast axes
  std::vector<std::size_t> b_strides;
  std::size_t numel = 0;
  bool same = false;      // identical shapes
  bool a_scalar = false;  // a has one element
  bool b_scalar = false;
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  std::size_t rank = std::max(a.size(), b.size());
  p.dims.assign(rank, 1);
  std::vector<std::size_t> ad(rank, 1), bd(rank, 1);
  for (std::size_t i = 0; i < a.size(); ++i) ad[rank - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) bd[rank - b.size() + i] = b[i];
  for (std::size_t i = 0; i < rank; ++i) {
    if (ad[i] == bd[i]) {
      p.dims[i] = ad[i];
    } else if (ad[i] == 1) {
      p.dims[i] = bd[i];
    } else if (bd[i] == 1) {
      p.dims[i] = ad[i];
    } else {
      fail(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
           shape_str(b));
    }
  }
  // Row-major strides over the padded shapes, zeroed where the axis repeats.
  p.a_strides.assign(rank, 0);
  p.b_strides.assign(rank, 0);
  std::size_t as = 1, bs = 1;
  for (std::size_t i = rank; i-- > 0;) {
    p.a_strides[i] = (ad[i] == 1 && p.dims[i] != 1) ? 0 : as;
    p.b_strides[i] = (bd[i] == 1 && p.dims[i] != 1) ? 0 : bs;
    as *= ad[i];
    bs *= bd[i];
  }
  p.out_shape = (a.size() >= b.size()) ? a : b;
  for (std::size_t i = 0; i < rank; ++i)
    p.out_shape[i] = p.dims[i];
  p.numel = shape_numel(p.out_shape);
  p.same = (a == b);
  p.a_scalar = shape_numel(a) == 1;
  p.b_scalar = shape_numel(b) == 1;
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element, row-major.
template <typename F>
void for_each_bcast(const BroadcastPlan& p, F&& f) {
  std::size_t rank = p.dims.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t o = 0; o < p.numel; ++o) {
    f(o, ao, bo);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ao += p.a_strides[d];
      bo += p.b_strides[d];
      if (idx[d] < p.dims[d]) break;
      ao -= p.a_strides[d] * p.dims[d];
      bo -= p.b_strides[d] * p.dims[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename FwdF, typename BwdF>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b,
                     FwdF fwd, BwdF bwd) {
  check(a.defined() && b.defined(), std::string(name) + ": undefined operand");
  BroadcastPlan plan = broadcast_plan(name, a.shape(), b.shape());
  std::vector<T> out(plan.numel);
  const T* av = a.data().data();
  const T* bv = b.data().data();
  if (plan.same) {
    for (std::size_t i = 0; i < plan.numel; ++i) out[i] = fwd(av[i], bv[i]);
  } else if (plan.b_scalar) {
    T s = bv[0];
    for (std::size_t i = 0; i < plan.numel; ++i) out[i] = fwd(av[i], s);
  } else if (plan.a_scalar) {
    T s = av[0];
    for (std::size_t i = 0; i < plan.numel; ++i) out[i] = fwd(s, bv[i]);
  } else {
    for_each_bcast(plan, [&](std::size_t o, std::size_t ai, std::size_t bi) {
      out[o] = fwd(av[ai], bv[bi]);
    });
  }
  return make_op<T>(
      plan.out_shape, std::move(out), {a, b},
      [plan, bwd](detail::NodeT<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        bool ga = pa.requires_grad, gb = pb.requires_grad;
        if (ga) pa.ensure_grad();
        if (gb) pb.ensure_grad();
        const T* av = pa.value.data();
        const T* bv = pb.value.data();
        const T* g = n.grad.data();
        if (plan.same) {
          for (std::size_t i = 0; i < plan.numel; ++i) {
            T da = 0, db = 0;
            bwd(av[i], bv[i], g[i], da, db);
            if (ga) pa.grad[i] += da;
            if (gb) pb.grad[i] += db;
          }
        } else {
          for_each_bcast(plan, [&](std::size_t o, std::size_t ai, std::size_t bi) {
            T da = 0, db = 0;
            bwd(av[ai], bv[bi], g[o], da, db);
            if (ga) pa.grad[ai] += da;
            if (gb) pb.grad[bi] += db;
          });
        }
      });
}

template <typename T, typename FwdF, typename BwdF>
TensorT<T> unary_op(const char* name, const TensorT<T>& x, FwdF fwd, BwdF grad_of) {
  check(x.defined(), std::string(name) + ": undefined operand");
  std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* xv = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  return make_op<T>(x.shape(), std::move(out), {x},
                    [n, grad_of](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* xv = p.value.data();
                      const T* yv = node.value.data();
                      const T* g = node.grad.data();
                      for (std::size_t i = 0; i < n; ++i)
                        p.grad[i] += g[i] * grad_of(xv[i], yv[i]);
                    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
  return unary_op<T>("neg", x, [](T v) { return -v; },
                     [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> sin(const TensorT<T>& x) {
  return unary_op<T>("sin", x, [](T v) { return std::sin(v); },
                     [](T v, T) { return std::cos(v); });
}

template <typename T>
TensorT<T> cos(const TensorT<T>& x) {
  return unary_op<T>("cos", x, [](T v) { return std::cos(v); },
                     [](T v, T) { return -std::sin(v); });
}

template <typename T>
TensorT<T> abs(const TensorT<T>& x) {
  return unary_op<T>("abs", x, [](T v) { return std::abs(v); },
                     [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
TensorT<T> square(const TensorT<T>& x) {
  return unary_op<T>("square", x, [](T v) { return v * v; },
                     [](T v, T) { return T(2) * v; });
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& x) {
  return unary_op<T>("sqrt", x, [](T v) { return std::sqrt(v); },
                     [](T, T y) { return y > 0 ? T(1) / (T(2) * y) : T(0); });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return unary_op<T>("relu", x, [](T v) { return v > 0 ? v : T(0); },
                     [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  return unary_op<T>("leaky_relu", x,
                     [slope](T v) { return v > 0 ? v : slope * v; },
                     [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  return unary_op<T>("sigmoid", x,
                     [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                     [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& x) {
  return unary_op<T>("tanh", x, [](T v) { return std::tanh(v); },
                     [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> affine(const TensorT<T>& x, T scale, T shift) {
  return unary_op<T>("affine", x,
                     [scale, shift](T v) { return scale * v + shift; },
                     [scale](T, T) { return scale; });
}

template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& x, T e) {
  const T* xv = x.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    check(xv[i] >= 0, "pow_scalar: negative base at element " + std::to_string(i));
  return unary_op<T>("pow_scalar", x,
                     [e](T v) { return std::pow(v, e); },
                     [e](T v, T) {
                       if (v == 0) return T(0);
                       return e * std::pow(v, e - T(1));
                     });
}

// ---------------------------------------------------------------------------
// matmul / conv2d

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  check(a.defined() && b.defined(), "matmul: undefined operand");
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul: need rank-2 operands, have " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check(k == k2, "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  detail::gemm<T>(false, false, m, n, k, T(1), a.data().data(), k,
                  b.data().data(), n, T(0), out.data(), n);
  return make_op<T>(
      {m, n}, std::move(out), {a, b}, [m, n, k](detail::NodeT<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const T* g = node.grad.data();
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA += dC * B^T
          detail::gemm<T>(false, true, m, k, n, T(1), g, n, pb.value.data(), n,
                          T(1), pa.grad.data(), k);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB += A^T * dC
          detail::gemm<T>(true, false, k, n, m, T(1), pa.value.data(), k, g, n,
                          T(1), pb.grad.data(), n);
        }
      });
}

namespace {

template <typename T>
void im2col(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* row = col + (oy * ow + ox) * c_in * kh * kw;
      std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * stride) -
                           static_cast<std::ptrdiff_t>(pad);
      std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * stride) -
                           static_cast<std::ptrdiff_t>(pad);
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
            T v = T(0);
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w))
              v = x[(c * h + static_cast<std::size_t>(iy)) * w +
                    static_cast<std::size_t>(ix)];
            *row++ = v;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t c_in, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t stride,
                std::size_t pad, std::size_t oh, std::size_t ow, T* dx) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* row = col + (oy * ow + ox) * c_in * kh * kw;
      std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * stride) -
                           static_cast<std::ptrdiff_t>(pad);
      std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * stride) -
                           static_cast<std::ptrdiff_t>(pad);
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
            T v = *row++;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w))
              dx[(c * h + static_cast<std::size_t>(iy)) * w +
                 static_cast<std::size_t>(ix)] += v;
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  std::size_t stride, std::size_t padding) {
  check(x.defined() && w.defined(), "conv2d: undefined operand");
  check(x.shape().size() == 4, "conv2d: input must be [N,C,H,W], have " +
                                   shape_str(x.shape()));
  check(w.shape().size() == 4, "conv2d: kernel must be [OC,C,KH,KW], have " +
                                   shape_str(w.shape()));
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  std::size_t oc = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check(kc == c, "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                     " kernel " + shape_str(w.shape()));
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel size must be odd, have " +
                                        shape_str(w.shape()));
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(h + 2 * padding >= kh && wd + 2 * padding >= kw,
        "conv2d: input " + shape_str(x.shape()) + " too small for kernel " +
            shape_str(w.shape()));
  bool has_bias = b.defined();
  if (has_bias)
    check(b.shape() == Shape{oc}, "conv2d: bias must be [OC], have " +
                                      shape_str(b.shape()));
  std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  std::size_t ow = (wd + 2 * padding - kw) / stride + 1;
  std::size_t k = c * kh * kw;
  std::size_t ohw = oh * ow;

  auto col = std::make_shared<std::vector<T>>(n * ohw * k);
  const T* xv = x.data().data();
  for (std::size_t i = 0; i < n; ++i)
    im2col(xv + i * c * h * wd, c, h, wd, kh, kw, stride, padding, oh, ow,
           col->data() + i * ohw * k);

  std::vector<T> out(n * oc * ohw, T(0));
  const T* wv = w.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    // out_i [OC, OH*OW] = W [OC,K] * col_i^T, col_i stored [OH*OW, K]
    detail::gemm<T>(false, true, oc, ohw, k, T(1), wv, k,
                    col->data() + i * ohw * k, k, T(0),
                    out.data() + i * oc * ohw, ohw);
  }
  if (has_bias) {
    const T* bv = b.data().data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < oc; ++o) {
        T* dst = out.data() + (i * oc + o) * ohw;
        for (std::size_t p = 0; p < ohw; ++p) dst[p] += bv[o];
      }
  }

  std::vector<TensorT<T>> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_op<T>(
      {n, oc, oh, ow}, std::move(out), std::move(parents),
      [n, c, h, wd, oc, kh, kw, stride, padding, oh, ow, k, ohw,
       col](detail::NodeT<T>& node) {
        auto& px = *node.parents[0];
        auto& pw = *node.parents[1];
        const T* g = node.grad.data();
        if (pw.requires_grad) {
          pw.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            detail::gemm<T>(false, false, oc, k, ohw, T(1), g + i * oc * ohw,
                            ohw, col->data() + i * ohw * k, k, T(1),
                            pw.grad.data(), k);
        }
        if (node.parents.size() == 3 && node.parents[2]->requires_grad) {
          auto& pb = *node.parents[2];
          pb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < oc; ++o) {
              const T* src = g + (i * oc + o) * ohw;
              T s = 0;
              for (std::size_t p = 0; p < ohw; ++p) s += src[p];
              pb.grad[o] += s;
            }
        }
        if (px.requires_grad) {
          px.ensure_grad();
          std::vector<T> dcol(ohw * k);
          for (std::size_t i = 0; i < n; ++i) {
            // dcol_i [OH*OW, K] = dOut_i^T [OH*OW, OC] * W [OC, K]
            detail::gemm<T>(true, false, ohw, k, oc, T(1), g + i * oc * ohw,
                            ohw, pw.value.data(), k, T(0), dcol.data(), k);
            col2im_add(dcol.data(), c, h, wd, kh, kw, stride, padding, oh, ow,
                       px.grad.data() + i * c * h * wd);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<std::size_t> kept_dims, kept_strides;  // in-strides of kept axes
  std::vector<std::size_t> red_dims, red_strides;
  std::size_t out_numel = 1, red_numel = 1;
};

ReducePlan reduce_plan(const char* op, const Shape& shape, std::vector<int> axes) {
  std::size_t rank = shape.size();
  std::vector<bool> reduced(rank, false);
  if (axes.empty()) {
    reduced.assign(rank, true);
  } else {
    for (int a : axes) {
      int ax = a < 0 ? a + static_cast<int>(rank) : a;
      check(ax >= 0 && ax < static_cast<int>(rank),
            std::string(op) + ": axis " + std::to_string(a) + " out of range for " +
                shape_str(shape));
      check(!reduced[ax], std::string(op) + ": duplicate axis " + std::to_string(a));
      reduced[ax] = true;
    }
  }
  std::vector<std::size_t> strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  ReducePlan p;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      p.red_dims.push_back(shape[i]);
      p.red_strides.push_back(strides[i]);
      p.red_numel *= shape[i];
    } else {
      p.out_shape.push_back(shape[i]);
      p.kept_dims.push_back(shape[i]);
      p.kept_strides.push_back(strides[i]);
      p.out_numel *= shape[i];
    }
  }
  return p;
}

// Calls f(out_index, in_base) per output cell; g(in_base + red offset) is up
// to the caller via for_each_red.
template <typename F>
void for_each_kept(const ReducePlan& p, F&& f) {
  std::size_t r = p.kept_dims.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t base = 0;
  for (std::size_t o = 0; o < p.out_numel; ++o) {
    f(o, base);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      base += p.kept_strides[d];
      if (idx[d] < p.kept_dims[d]) break;
      base -= p.kept_strides[d] * p.kept_dims[d];
      idx[d] = 0;
    }
  }
}

template <typename F>
void for_each_red(const ReducePlan& p, std::size_t base, F&& f) {
  std::size_t r = p.red_dims.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = base;
  for (std::size_t i = 0; i < p.red_numel; ++i) {
    f(off);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += p.red_strides[d];
      if (idx[d] < p.red_dims[d]) break;
      off -= p.red_strides[d] * p.red_dims[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x, std::vector<int> axes) {
  check(x.defined(), "reduce_sum: undefined operand");
  auto plan = std::make_shared<ReducePlan>(
      reduce_plan("reduce_sum", x.shape(), std::move(axes)));
  std::vector<T> out(plan->out_numel, T(0));
  const T* xv = x.data().data();
  for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
    T s = 0;
    for_each_red(*plan, base, [&](std::size_t i) { s += xv[i]; });
    out[o] = s;
  });
  return make_op<T>(plan->out_shape, std::move(out), {x},
                    [plan](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
                        T go = g[o];
                        for_each_red(*plan, base,
                                     [&](std::size_t i) { p.grad[i] += go; });
                      });
                    });
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x, std::vector<int> axes) {
  check(x.defined(), "reduce_mean: undefined operand");
  auto plan = std::make_shared<ReducePlan>(
      reduce_plan("reduce_mean", x.shape(), std::move(axes)));
  check(plan->red_numel > 0, "reduce_mean: empty reduction");
  T inv = T(1) / static_cast<T>(plan->red_numel);
  std::vector<T> out(plan->out_numel, T(0));
  const T* xv = x.data().data();
  for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
    T s = 0;
    for_each_red(*plan, base, [&](std::size_t i) { s += xv[i]; });
    out[o] = s * inv;
  });
  return make_op<T>(plan->out_shape, std::move(out), {x},
                    [plan, inv](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
                        T go = g[o] * inv;
                        for_each_red(*plan, base,
                                     [&](std::size_t i) { p.grad[i] += go; });
                      });
                    });
}

template <typename T>
TensorT<T> reduce_std(const TensorT<T>& x, std::vector<int> axes) {
  check(x.defined(), "reduce_std: undefined operand");
  auto plan = std::make_shared<ReducePlan>(
      reduce_plan("reduce_std", x.shape(), std::move(axes)));
  check(plan->red_numel > 0, "reduce_std: empty reduction");
  T inv = T(1) / static_cast<T>(plan->red_numel);
  auto mean = std::make_shared<std::vector<T>>(plan->out_numel);
  std::vector<T> out(plan->out_numel, T(0));
  const T* xv = x.data().data();
  for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
    T s = 0;
    for_each_red(*plan, base, [&](std::size_t i) { s += xv[i]; });
    T mu = s * inv;
    (*mean)[o] = mu;
    T var = 0;
    for_each_red(*plan, base, [&](std::size_t i) {
      T d = xv[i] - mu;
      var += d * d;
    });
    out[o] = std::sqrt(var * inv);
  });
  return make_op<T>(
      plan->out_shape, std::move(out), {x},
      [plan, inv, mean](detail::NodeT<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const T* g = node.grad.data();
        const T* xv = p.value.data();
        const T* sd = node.value.data();
        for_each_kept(*plan, [&](std::size_t o, std::size_t base) {
          if (sd[o] <= 0) return;  // flat input, gradient defined as 0
          T scale = g[o] * inv / sd[o];
          T mu = (*mean)[o];
          for_each_red(*plan, base, [&](std::size_t i) {
            p.grad[i] += scale * (xv[i] - mu);
          });
        });
      });
}

// ---------------------------------------------------------------------------
// Spatial ops

namespace {

template <typename T>
void check_nchw(const char* op, const TensorT<T>& x) {
  check(x.defined(), std::string(op) + ": undefined operand");
  check(x.shape().size() == 4,
        std::string(op) + ": input must be [N,C,H,W], have " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x, std::size_t factor) {
  check_nchw("upsample_nearest2", x);
  check(factor >= 1, "upsample_nearest2: factor must be >= 1");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t oh = h * factor, ow = w * factor;
  std::vector<T> out(n * c * oh * ow);
  const T* xv = x.data().data();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = xv + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        dst[y * ow + xx] = src[(y / factor) * w + (xx / factor)];
  }
  return make_op<T>({n, c, oh, ow}, std::move(out), {x},
                    [n, c, h, w, factor, oh, ow](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t nc = 0; nc < n * c; ++nc) {
                        T* dst = p.grad.data() + nc * h * w;
                        const T* src = g + nc * oh * ow;
                        for (std::size_t y = 0; y < oh; ++y)
                          for (std::size_t xx = 0; xx < ow; ++xx)
                            dst[(y / factor) * w + (xx / factor)] +=
                                src[y * ow + xx];
                      }
                    });
}

template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
  check_nchw("avg_pool2", x);
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t oh = h / 2, ow = w / 2;
  check(oh >= 1 && ow >= 1, "avg_pool2: input too small " + shape_str(x.shape()));
  std::vector<T> out(n * c * oh * ow);
  const T* xv = x.data().data();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = xv + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        dst[y * ow + xx] =
            (src[(2 * y) * w + 2 * xx] + src[(2 * y) * w + 2 * xx + 1] +
             src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1]) *
            T(0.25);
  }
  return make_op<T>({n, c, oh, ow}, std::move(out), {x},
                    [n, c, h, w, oh, ow](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t nc = 0; nc < n * c; ++nc) {
                        T* dst = p.grad.data() + nc * h * w;
                        const T* src = g + nc * oh * ow;
                        for (std::size_t y = 0; y < oh; ++y)
                          for (std::size_t xx = 0; xx < ow; ++xx) {
                            T v = src[y * ow + xx] * T(0.25);
                            dst[(2 * y) * w + 2 * xx] += v;
                            dst[(2 * y) * w + 2 * xx + 1] += v;
                            dst[(2 * y + 1) * w + 2 * xx] += v;
                            dst[(2 * y + 1) * w + 2 * xx + 1] += v;
                          }
                      }
                    });
}

namespace {

struct BilinearTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

inline BilinearTap bilinear_tap(std::size_t o, std::size_t out_size,
                                std::size_t in_size) {
  double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_size) /
                   static_cast<double>(out_size) -
               0.5;
  if (src < 0) src = 0;
  double i0f = std::floor(src);
  std::size_t i0 = static_cast<std::size_t>(i0f);
  if (i0 >= in_size - 1) return {in_size - 1, in_size - 1, 0.0};
  return {i0, i0 + 1, src - i0f};
}

}  // namespace

template <typename T>
TensorT<T> downsample_bilinear(const TensorT<T>& x, std::size_t oh, std::size_t ow) {
  check_nchw("downsample_bilinear", x);
  check(oh >= 1 && ow >= 1, "downsample_bilinear: empty output");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(n * c * oh * ow);
  const T* xv = x.data().data();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = xv + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      BilinearTap ty = bilinear_tap(y, oh, h);
      for (std::size_t xx = 0; xx < ow; ++xx) {
        BilinearTap tx = bilinear_tap(xx, ow, w);
        double v = (1 - ty.w1) * ((1 - tx.w1) * src[ty.i0 * w + tx.i0] +
                                  tx.w1 * src[ty.i0 * w + tx.i1]) +
                   ty.w1 * ((1 - tx.w1) * src[ty.i1 * w + tx.i0] +
                            tx.w1 * src[ty.i1 * w + tx.i1]);
        dst[y * ow + xx] = static_cast<T>(v);
      }
    }
  }
  return make_op<T>(
      {n, c, oh, ow}, std::move(out), {x},
      [n, c, h, w, oh, ow](detail::NodeT<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const T* g = node.grad.data();
        for (std::size_t nc = 0; nc < n * c; ++nc) {
          T* dst = p.grad.data() + nc * h * w;
          const T* src = g + nc * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            BilinearTap ty = bilinear_tap(y, oh, h);
            for (std::size_t xx = 0; xx < ow; ++xx) {
              BilinearTap tx = bilinear_tap(xx, ow, w);
              T go = src[y * ow + xx];
              dst[ty.i0 * w + tx.i0] += go * static_cast<T>((1 - ty.w1) * (1 - tx.w1));
              dst[ty.i0 * w + tx.i1] += go * static_cast<T>((1 - ty.w1) * tx.w1);
              dst[ty.i1 * w + tx.i0] += go * static_cast<T>(ty.w1 * (1 - tx.w1));
              dst[ty.i1 * w + tx.i1] += go * static_cast<T>(ty.w1 * tx.w1);
            }
          }
        }
      });
}

template <typename T>
TensorT<T> pad_reflect2(const TensorT<T>& x, std::size_t pad) {
  check(x.defined(), "pad_reflect2: undefined operand");
  check(x.shape().size() >= 2, "pad_reflect2: need at least 2 axes, have " +
                                   shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  check(pad <= h - 1 && pad <= w - 1,
        "pad_reflect2: pad " + std::to_string(pad) + " too large for " +
            shape_str(s));
  std::size_t batch = x.numel() / (h * w);
  std::size_t oh = h + 2 * pad, ow = w + 2 * pad;
  auto mirror = [pad](std::size_t o, std::size_t size) {
    std::ptrdiff_t k = static_cast<std::ptrdiff_t>(o) -
                       static_cast<std::ptrdiff_t>(pad);
    if (k < 0) k = -k;
    if (k >= static_cast<std::ptrdiff_t>(size))
      k = 2 * static_cast<std::ptrdiff_t>(size) - 2 - k;
    return static_cast<std::size_t>(k);
  };
  Shape out_shape = s;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;
  std::vector<T> out(batch * oh * ow);
  const T* xv = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = xv + b * h * w;
    T* dst = out.data() + b * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      std::size_t sy = mirror(y, h);
      for (std::size_t xx = 0; xx < ow; ++xx)
        dst[y * ow + xx] = src[sy * w + mirror(xx, w)];
    }
  }
  return make_op<T>(std::move(out_shape), std::move(out), {x},
                    [batch, h, w, oh, ow, mirror](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t b = 0; b < batch; ++b) {
                        T* dst = p.grad.data() + b * h * w;
                        const T* src = g + b * oh * ow;
                        for (std::size_t y = 0; y < oh; ++y) {
                          std::size_t sy = mirror(y, h);
                          for (std::size_t xx = 0; xx < ow; ++xx)
                            dst[sy * w + mirror(xx, w)] += src[y * ow + xx];
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  check(x.defined(), "reshape: undefined operand");
  check(shape_numel(shape) == x.numel(),
        "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  std::size_t n = x.numel();
  return make_op<T>(std::move(shape), std::move(out), {x},
                    [n](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t i = 0; i < n; ++i) p.grad[i] += g[i];
                    });
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, std::vector<std::size_t> perm) {
  check(x.defined(), "permute: undefined operand");
  const Shape& s = x.shape();
  std::size_t rank = s.size();
  check(perm.size() == rank, "permute: order has " + std::to_string(perm.size()) +
                                 " axes for " + shape_str(s));
  std::vector<bool> used(rank, false);
  for (std::size_t a : perm) {
    check(a < rank && !used[a], "permute: invalid axis order");
    used[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // in_of[d] = stride in the input of output axis d
  auto in_of = std::make_shared<std::vector<std::size_t>>(rank);
  for (std::size_t i = 0; i < rank; ++i) (*in_of)[i] = in_strides[perm[i]];
  auto out_dims = std::make_shared<Shape>(out_shape);

  std::size_t total = x.numel();
  std::vector<T> out(total);
  const T* xv = x.data().data();
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < total; ++o) {
      out[o] = xv[src];
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        src += (*in_of)[d];
        if (idx[d] < (*out_dims)[d]) break;
        src -= (*in_of)[d] * (*out_dims)[d];
        idx[d] = 0;
      }
    }
  }
  return make_op<T>(std::move(out_shape), std::move(out), {x},
                    [total, rank, in_of, out_dims](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      std::vector<std::size_t> idx(rank, 0);
                      std::size_t src = 0;
                      for (std::size_t o = 0; o < total; ++o) {
                        p.grad[src] += g[o];
                        for (std::size_t d = rank; d-- > 0;) {
                          ++idx[d];
                          src += (*in_of)[d];
                          if (idx[d] < (*out_dims)[d]) break;
                          src -= (*in_of)[d] * (*out_dims)[d];
                          idx[d] = 0;
                        }
                      }
                    });
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::size_t axis) {
  check(!xs.empty(), "concat: no inputs");
  const Shape& s0 = xs[0].shape();
  std::size_t rank = s0.size();
  check(axis < rank, "concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
  std::size_t axis_total = 0;
  for (const auto& x : xs) {
    check(x.defined(), "concat: undefined input");
    const Shape& s = x.shape();
    check(s.size() == rank, "concat: rank mismatch " + shape_str(s0) + " vs " +
                                shape_str(s));
    for (std::size_t i = 0; i < rank; ++i)
      check(i == axis || s[i] == s0[i],
            "concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                " differ outside axis " + std::to_string(axis));
    axis_total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= s0[i];

  std::vector<T> out(shape_numel(out_shape));
  auto lens = std::make_shared<std::vector<std::size_t>>();
  std::size_t row = axis_total * inner;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    std::size_t len = x.dim(axis);
    lens->push_back(len);
    const T* xv = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(xv + o * len * inner, xv + (o + 1) * len * inner,
                out.data() + o * row + offset);
    offset += len * inner;
  }
  return make_op<T>(std::move(out_shape), std::move(out), xs,
                    [outer, inner, row, lens](detail::NodeT<T>& node) {
                      const T* g = node.grad.data();
                      std::size_t offset = 0;
                      for (std::size_t i = 0; i < node.parents.size(); ++i) {
                        auto& p = *node.parents[i];
                        std::size_t len = (*lens)[i];
                        if (p.requires_grad) {
                          p.ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* src = g + o * row + offset;
                            T* dst = p.grad.data() + o * len * inner;
                            for (std::size_t j = 0; j < len * inner; ++j)
                              dst[j] += src[j];
                          }
                        }
                        offset += len * inner;
                      }
                    });
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, std::size_t axis, std::size_t start,
                 std::size_t len) {
  check(x.defined(), "slice: undefined operand");
  const Shape& s = x.shape();
  std::size_t rank = s.size();
  check(axis < rank, "slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  check(len >= 1 && start + len <= s[axis],
        "slice: range [" + std::to_string(start) + "," +
            std::to_string(start + len) + ") out of bounds for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= s[i];
  std::size_t row = s[axis] * inner;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const T* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xv + o * row + start * inner, xv + o * row + (start + len) * inner,
              out.data() + o * len * inner);
  return make_op<T>(std::move(out_shape), std::move(out), {x},
                    [outer, inner, row, start, len](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t o = 0; o < outer; ++o) {
                        const T* src = g + o * len * inner;
                        T* dst = p.grad.data() + o * row + start * inner;
                        for (std::size_t j = 0; j < len * inner; ++j)
                          dst[j] += src[j];
                      }
                    });
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<std::uint32_t>& indices) {
  check(x.defined(), "gather_rows: undefined operand");
  check(x.shape().size() == 2, "gather_rows: input must be [R,C], have " +
                                   shape_str(x.shape()));
  std::size_t rows = x.dim(0), cols = x.dim(1);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(indices);
  for (std::size_t i = 0; i < idx->size(); ++i)
    check((*idx)[i] < rows, "gather_rows: index " + std::to_string((*idx)[i]) +
                                " out of range at position " + std::to_string(i));
  std::vector<T> out(idx->size() * cols);
  const T* xv = x.data().data();
  for (std::size_t i = 0; i < idx->size(); ++i)
    std::copy(xv + (*idx)[i] * cols, xv + ((*idx)[i] + 1) * cols,
              out.data() + i * cols);
  return make_op<T>({idx->size(), cols}, std::move(out), {x},
                    [idx, cols](detail::NodeT<T>& node) {
                      auto& p = *node.parents[0];
                      p.ensure_grad();
                      const T* g = node.grad.data();
                      for (std::size_t i = 0; i < idx->size(); ++i) {
                        T* dst = p.grad.data() + (*idx)[i] * cols;
                        const T* src = g + i * cols;
                        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                      }
                    });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define RETEX_INSTANTIATE(T)                                                   \
  template class TensorT<T>;                                                   \
  template TensorT<T> make_op<T>(Shape, std::vector<T>, std::vector<TensorT<T>>, \
                                 std::function<void(detail::NodeT<T>&)>);      \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> div<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> neg<T>(const TensorT<T>&);                               \
  template TensorT<T> sin<T>(const TensorT<T>&);                               \
  template TensorT<T> cos<T>(const TensorT<T>&);                               \
  template TensorT<T> abs<T>(const TensorT<T>&);                               \
  template TensorT<T> square<T>(const TensorT<T>&);                            \
  template TensorT<T> sqrt<T>(const TensorT<T>&);                              \
  template TensorT<T> relu<T>(const TensorT<T>&);                              \
  template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);                     \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                           \
  template TensorT<T> tanh<T>(const TensorT<T>&);                              \
  template TensorT<T> affine<T>(const TensorT<T>&, T, T);                      \
  template TensorT<T> pow_scalar<T>(const TensorT<T>&, T);                     \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);         \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&,          \
                                const TensorT<T>&, std::size_t, std::size_t);  \
  template TensorT<T> reduce_sum<T>(const TensorT<T>&, std::vector<int>);      \
  template TensorT<T> reduce_mean<T>(const TensorT<T>&, std::vector<int>);     \
  template TensorT<T> reduce_std<T>(const TensorT<T>&, std::vector<int>);      \
  template TensorT<T> upsample_nearest2<T>(const TensorT<T>&, std::size_t);    \
  template TensorT<T> avg_pool2<T>(const TensorT<T>&);                         \
  template TensorT<T> downsample_bilinear<T>(const TensorT<T>&, std::size_t,   \
                                             std::size_t);                     \
  template TensorT<T> pad_reflect2<T>(const TensorT<T>&, std::size_t);         \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                    \
  template TensorT<T> permute<T>(const TensorT<T>&, std::vector<std::size_t>); \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, std::size_t);  \
  template TensorT<T> slice<T>(const TensorT<T>&, std::size_t, std::size_t,    \
                               std::size_t);                                   \
  template TensorT<T> gather_rows<T>(const TensorT<T>&,                        \
                                     const std::vector<std::uint32_t>&);

RETEX_INSTANTIATE(float)
RETEX_INSTANTIATE(double)

#undef RETEX_INSTANTIATE

}  // namespace retex
