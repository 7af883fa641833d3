#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "retex/rng.hpp"
#include "retex/tensor.hpp"

using retex::Rng;
using retex::Shape;
using retex::Tensor;
using retex::TensorError;
using retex::TensorT;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad) {
  std::vector<double> v(retex::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return grad ? Tensor::param(std::move(shape), std::move(v))
              : Tensor::from_data(std::move(shape), std::move(v));
}

// Values with |v| in [0.2, 1.2]: safely away from the kinks of abs/relu and
// the poles of div.
Tensor rand_nonzero(Shape shape, Rng& rng, bool grad) {
  std::vector<double> v(retex::shape_numel(shape));
  for (auto& x : v) {
    double m = rng.uniform(0.2, 1.2);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return grad ? Tensor::param(std::move(shape), std::move(v))
              : Tensor::from_data(std::move(shape), std::move(v));
}

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor: construction, item and shape checks") {
  Tensor s = Tensor::scalar(2.5);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 2.5);
  CHECK(s.shape().empty());

  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.dim(0) == 2);
  CHECK(z.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), TensorError);
  CHECK_THROWS_AS(z.item(), TensorError);
}

TEST_CASE("tensor: broadcasting matches a manual loop") {
  Rng rng(11);
  Tensor a = rand_tensor({2, 3, 4}, rng, -1, 1, false);
  Tensor b = rand_tensor({3, 1}, rng, -1, 1, false);
  Tensor c = retex::mul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) {
        double want = a.data()[(i * 3 + j) * 4 + k] * b.data()[j];
        CHECK(c.data()[(i * 3 + j) * 4 + k] == doctest::Approx(want).epsilon(1e-12));
      }

  Tensor s = Tensor::scalar(3.0);
  Tensor d = retex::add(a, s);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(d.data()[i] == a.data()[i] + 3.0);
}

TEST_CASE("tensor: broadcast mismatch reports both shapes") {
  Tensor a = Tensor::zeros({2, 3, 4});
  Tensor b = Tensor::zeros({5});
  try {
    retex::add(a, b);
    FAIL("expected TensorError");
  } catch (const TensorError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3,4]") != std::string::npos);
    CHECK(msg.find("[5]") != std::string::npos);
  }
}

TEST_CASE("tensor: broadcast gradients reduce over repeated axes") {
  Rng rng(12);
  Tensor a = rand_tensor({2, 3}, rng, -1, 1, true);
  Tensor b = rand_tensor({3}, rng, -1, 1, true);
  retex::reduce_sum(retex::mul(a, b)).backward();
  // d/db_j sum_ij a_ij b_j = sum_i a_ij
  for (std::size_t j = 0; j < 3; ++j) {
    double want = a.data()[j] + a.data()[3 + j];
    CHECK(b.grad()[j] == doctest::Approx(want).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(a.grad()[i] == doctest::Approx(b.data()[i % 3]).epsilon(1e-12));
}

TEST_CASE("tensor: gradients accumulate across backward calls") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  Tensor loss = retex::reduce_sum(retex::square(x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  x.zero_grad();
  CHECK(!x.has_grad());
}

TEST_CASE("tensor: no-grad tensors never receive gradient buffers") {
  Rng rng(13);
  Tensor data = rand_tensor({4}, rng, -1, 1, false);
  Tensor w = rand_tensor({4}, rng, -1, 1, true);
  retex::reduce_sum(retex::mul(data, w)).backward();
  CHECK(!data.has_grad());
  CHECK(w.has_grad());

  Tensor detached = retex::sigmoid(w).detach();
  CHECK(!detached.requires_grad());
  retex::reduce_sum(retex::mul(detached, w)).backward();
  CHECK(!detached.has_grad());
}

TEST_CASE("tensor: backward of a weighted sum is the weighted sum of backwards") {
  Rng rng(14);
  Tensor x = rand_nonzero({5}, rng, true);

  auto l1 = [&] { return retex::reduce_sum(retex::square(x)); };
  auto l2 = [&] { return retex::reduce_sum(retex::sin(x)); };

  l1().backward();
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  l2().backward();
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  x.zero_grad();

  double alpha = 0.7, beta = -1.3;
  retex::add(retex::affine(l1(), alpha, 0.0), retex::affine(l2(), beta, 0.0))
      .backward();
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(x.grad()[i] == doctest::Approx(alpha * g1[i] + beta * g2[i]).epsilon(1e-12));
}

TEST_CASE("tensor: set_requires_grad only works on leaves") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  Tensor y = retex::square(x);
  CHECK_THROWS_AS(y.set_requires_grad(false), TensorError);
  x.set_requires_grad(false);
  CHECK(!x.requires_grad());
}

TEST_CASE("tensor: backward requires a scalar with requires_grad") {
  Tensor x = Tensor::param({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(retex::square(x).backward(), TensorError);
  Tensor c = Tensor::scalar(1.0);
  CHECK_THROWS_AS(c.backward(), TensorError);
}

TEST_CASE("tensor: elementwise gradients agree with finite differences") {
  Rng rng(15);
  Tensor x = rand_nonzero({3, 4}, rng, true);
  Tensor xpos = rand_tensor({3, 4}, rng, 0.2, 1.2, true);
  Tensor w = rand_nonzero({3, 4}, rng, false);

  auto probe = [&](const Tensor& p, auto op) {
    auto loss = [&, op] { return retex::reduce_sum(retex::mul(op(p), w)); };
    FdReport r = fd_check({p}, loss);
    CHECK(r.max_rel_err < 1e-4);
  };

  probe(x, [](const Tensor& t) { return retex::neg(t); });
  probe(x, [](const Tensor& t) { return retex::sin(t); });
  probe(x, [](const Tensor& t) { return retex::cos(t); });
  probe(x, [](const Tensor& t) { return retex::abs(t); });
  probe(x, [](const Tensor& t) { return retex::square(t); });
  probe(x, [](const Tensor& t) { return retex::relu(t); });
  probe(x, [](const Tensor& t) { return retex::leaky_relu(t, 0.2); });
  probe(x, [](const Tensor& t) { return retex::sigmoid(t); });
  probe(x, [](const Tensor& t) { return retex::tanh(t); });
  probe(x, [](const Tensor& t) { return retex::affine(t, 1.7, -0.3); });
  probe(xpos, [](const Tensor& t) { return retex::sqrt(t); });
  probe(xpos, [](const Tensor& t) { return retex::pow_scalar(t, 0.7); });
}

TEST_CASE("tensor: binary op gradients agree with finite differences") {
  Rng rng(16);
  Tensor a = rand_nonzero({2, 3}, rng, true);
  Tensor b = rand_nonzero({3}, rng, true);
  auto check_op = [&](auto op) {
    auto loss = [&, op] { return retex::reduce_sum(retex::square(op(a, b))); };
    FdReport r = fd_check({a, b}, loss);
    CHECK(r.max_rel_err < 1e-4);
  };
  check_op([](const Tensor& x, const Tensor& y) { return retex::add(x, y); });
  check_op([](const Tensor& x, const Tensor& y) { return retex::sub(x, y); });
  check_op([](const Tensor& x, const Tensor& y) { return retex::mul(x, y); });
  check_op([](const Tensor& x, const Tensor& y) { return retex::div(x, y); });
}

TEST_CASE("tensor: matmul matches a naive triple loop and finite differences") {
  Rng rng(17);
  Tensor a = rand_tensor({3, 5}, rng, -1, 1, true);
  Tensor b = rand_tensor({5, 4}, rng, -1, 1, true);
  Tensor c = retex::matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double want = 0;
      for (std::size_t k = 0; k < 5; ++k)
        want += a.data()[i * 5 + k] * b.data()[k * 4 + j];
      CHECK(c.data()[i * 4 + j] == doctest::Approx(want).epsilon(1e-10));
    }
  FdReport r = fd_check({a, b}, [&] {
    return retex::reduce_mean(retex::square(retex::matmul(a, b)));
  });
  CHECK(r.max_rel_err < 1e-4);

  CHECK_THROWS_AS(retex::matmul(a, retex::matmul(a, b)), TensorError);
}

namespace {

std::vector<double> conv_naive(const std::vector<double>& x, std::size_t n,
                               std::size_t c, std::size_t h, std::size_t w,
                               const std::vector<double>& k, std::size_t oc,
                               std::size_t kh, std::size_t kw,
                               const std::vector<double>* bias,
                               std::size_t stride, std::size_t pad) {
  std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * oc * oh * ow, 0.0);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                acc += x[((ni * c + ci) * h + iy) * w + ix] *
                       k[((o * c + ci) * kh + ky) * kw + kx];
              }
          out[((ni * oc + o) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor: conv2d matches a naive direct convolution") {
  Rng rng(18);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1},
                             {2, 1},
                             {1, 0},
                             {2, 2}}) {
    Tensor x = rand_tensor({2, 3, 6, 5}, rng, -1, 1, false);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    Tensor b = rand_tensor({4}, rng, -1, 1, false);
    std::vector<double> bias(b.data().begin(), b.data().end());
    Tensor y = retex::conv2d(x, w, b, stride, pad);
    std::vector<double> want =
        conv_naive({x.data().begin(), x.data().end()}, 2, 3, 6, 5,
                   {w.data().begin(), w.data().end()}, 4, 3, 3, &bias, stride, pad);
    REQUIRE(y.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("tensor: conv2d gradients agree with finite differences") {
  Rng rng(19);
  Tensor x = rand_tensor({2, 2, 5, 4}, rng, -1, 1, true);
  Tensor w = rand_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  Tensor b = rand_tensor({3}, rng, -1, 1, true);
  FdReport r = fd_check({x, w, b}, [&] {
    return retex::reduce_mean(retex::square(retex::conv2d(x, w, b, 2, 1)));
  });
  CHECK(r.max_rel_err < 1e-4);

  // Without bias.
  Tensor none;
  FdReport r2 = fd_check({x, w}, [&] {
    return retex::reduce_mean(retex::square(retex::conv2d(x, w, none, 1, 1)));
  });
  CHECK(r2.max_rel_err < 1e-4);
}

TEST_CASE("tensor: conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w_even = Tensor::zeros({1, 2, 2, 2});
  Tensor w_chan = Tensor::zeros({1, 3, 3, 3});
  Tensor none;
  CHECK_THROWS_AS(retex::conv2d(x, w_even, none, 1, 1), TensorError);
  CHECK_THROWS_AS(retex::conv2d(x, w_chan, none, 1, 1), TensorError);
}

TEST_CASE("tensor: reductions match manual sums") {
  Rng rng(20);
  Tensor x = rand_tensor({2, 3, 4}, rng, -1, 1, false);
  Tensor s = retex::reduce_sum(x, {1});
  REQUIRE(s.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double want = 0;
      for (std::size_t j = 0; j < 3; ++j) want += x.data()[(i * 3 + j) * 4 + k];
      CHECK(s.data()[i * 4 + k] == doctest::Approx(want).epsilon(1e-12));
    }

  Tensor m = retex::reduce_mean(x);
  double want = 0;
  for (double v : x.data()) want += v;
  CHECK(m.item() == doctest::Approx(want / 24).epsilon(1e-12));

  Tensor sd = retex::reduce_std(x, {0, 2});
  REQUIRE(sd.shape() == Shape{3});
  for (std::size_t j = 0; j < 3; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) mu += x.data()[(i * 3 + j) * 4 + k];
    mu /= 8;
    double var = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) {
        double d = x.data()[(i * 3 + j) * 4 + k] - mu;
        var += d * d;
      }
    CHECK(sd.data()[j] == doctest::Approx(std::sqrt(var / 8)).epsilon(1e-12));
  }
}

TEST_CASE("tensor: population std of a constant input is zero with zero gradient") {
  Tensor x = Tensor::param({4}, {0.7, 0.7, 0.7, 0.7});
  Tensor sd = retex::reduce_std(x);
  CHECK(sd.item() == 0.0);
  sd.backward();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("tensor: reduction gradients agree with finite differences") {
  Rng rng(21);
  Tensor x = rand_tensor({2, 3, 4}, rng, -1, 1, true);
  for (auto axes : std::vector<std::vector<int>>{{}, {0}, {1, 2}, {-1}}) {
    FdReport r1 = fd_check({x}, [&] {
      return retex::reduce_mean(retex::square(retex::reduce_sum(x, axes)));
    });
    CHECK(r1.max_rel_err < 1e-4);
    FdReport r2 = fd_check({x}, [&] {
      return retex::reduce_mean(retex::square(retex::reduce_mean(x, axes)));
    });
    CHECK(r2.max_rel_err < 1e-4);
    FdReport r3 = fd_check({x}, [&] {
      return retex::reduce_mean(retex::square(retex::reduce_std(x, axes)));
    });
    CHECK(r3.max_rel_err < 1e-4);
  }
}

TEST_CASE("tensor: upsample and avg_pool invert on constant blocks") {
  Rng rng(22);
  Tensor x = rand_tensor({1, 2, 3, 3}, rng, -1, 1, true);
  Tensor up = retex::upsample_nearest2(x, 2);
  REQUIRE(up.shape() == Shape{1, 2, 6, 6});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t xx = 0; xx < 6; ++xx)
        CHECK(up.data()[(c * 6 + y) * 6 + xx] ==
              x.data()[(c * 3 + y / 2) * 3 + xx / 2]);
  Tensor round = retex::avg_pool2(up);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(round.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));

  FdReport r = fd_check({x}, [&] {
    return retex::reduce_mean(
        retex::square(retex::avg_pool2(retex::upsample_nearest2(x, 2))));
  });
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("tensor: bilinear downsample preserves constants and ramps") {
  Tensor c = Tensor::full({1, 1, 8, 8}, 0.37);
  Tensor down = retex::downsample_bilinear(c, 3, 5);
  for (double v : down.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  // A horizontal ramp r(x) = x stays a ramp under the half-pixel convention:
  // src = (o + 0.5) * W/ow - 0.5 away from the clamped borders.
  std::vector<double> ramp(8 * 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) ramp[y * 8 + x] = static_cast<double>(x);
  Tensor r = Tensor::from_data({1, 1, 8, 8}, std::move(ramp));
  Tensor d = retex::downsample_bilinear(r, 8, 4);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t o = 1; o < 3; ++o) {
      double src = (o + 0.5) * 2.0 - 0.5;
      CHECK(d.data()[y * 4 + o] == doctest::Approx(src).epsilon(1e-12));
    }

  Rng rng(23);
  Tensor x = rand_tensor({1, 2, 6, 7}, rng, -1, 1, true);
  FdReport fd = fd_check({x}, [&] {
    return retex::reduce_mean(retex::square(retex::downsample_bilinear(x, 3, 4)));
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("tensor: reflection padding mirrors without repeating the edge") {
  Tensor x = Tensor::from_data({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor p = retex::pad_reflect2(x, 1);
  REQUIRE(p.shape() == Shape{1, 1, 4, 5});
  // Row mirror of [1 2 3; 4 5 6] with pad 1:
  std::vector<double> want = {
      5, 4, 5, 6, 5,
      2, 1, 2, 3, 2,
      5, 4, 5, 6, 5,
      2, 1, 2, 3, 2,
  };
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(p.data()[i] == want[i]);

  CHECK_THROWS_AS(retex::pad_reflect2(x, 2), TensorError);

  Rng rng(24);
  Tensor y = rand_tensor({2, 1, 4, 4}, rng, -1, 1, true);
  FdReport fd = fd_check({y}, [&] {
    return retex::reduce_mean(retex::square(retex::pad_reflect2(y, 2)));
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("tensor: layout ops round-trip and carry gradients") {
  Rng rng(25);
  Tensor x = rand_tensor({2, 3, 4}, rng, -1, 1, true);

  Tensor p = retex::permute(x, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(p.data()[(k * 2 + i) * 3 + j] == x.data()[(i * 3 + j) * 4 + k]);
  Tensor back = retex::permute(p, {1, 2, 0});
  CHECK(bits_equal(back.data(), x.data()));

  Tensor r = retex::reshape(x, {6, 4});
  CHECK(bits_equal(r.data(), x.data()));
  CHECK_THROWS_AS(retex::reshape(x, {5, 5}), TensorError);

  Tensor a = retex::slice(x, 1, 0, 2);
  Tensor b = retex::slice(x, 1, 2, 1);
  Tensor joined = retex::concat(std::vector<Tensor>{a, b}, 1);
  CHECK(bits_equal(joined.data(), x.data()));

  FdReport fd = fd_check({x}, [&] {
    Tensor t = retex::permute(x, {2, 0, 1});
    t = retex::reshape(t, {4, 6});
    t = retex::concat(std::vector<Tensor>{retex::slice(t, 0, 0, 1),
                                          retex::slice(t, 0, 1, 3)},
                      0);
    return retex::reduce_mean(retex::square(t));
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("tensor: gather_rows accumulates duplicate indices") {
  Tensor x = Tensor::param({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = retex::gather_rows(x, {2, 0, 2});
  REQUIRE(g.shape() == Shape{3, 2});
  CHECK(g.data()[0] == 5);
  CHECK(g.data()[3] == 2);
  retex::reduce_sum(g).backward();
  CHECK(x.grad()[0] == 1.0);  // row 0 used once
  CHECK(x.grad()[4] == 2.0);  // row 2 used twice
  CHECK(x.grad()[2] == 0.0);  // row 1 never used

  CHECK_THROWS_AS(retex::gather_rows(x, {3}), TensorError);
}

TEST_CASE("tensor: re-running a seeded graph is bit identical") {
  auto run = [](std::vector<double>* values, std::vector<double>* grads) {
    Rng rng(404);
    Tensor x = rand_tensor({2, 3, 8, 8}, rng, -1, 1, true);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = rand_tensor({4}, rng, -0.1, 0.1, true);
    Tensor y = retex::conv2d(x, w, b, 2, 1);
    y = retex::leaky_relu(y, 0.2);
    Tensor loss = retex::reduce_mean(retex::square(y));
    loss.backward();
    values->assign(y.data().begin(), y.data().end());
    values->push_back(loss.item());
    for (const Tensor& t : {x, w, b})
      grads->insert(grads->end(), t.grad().begin(), t.grad().end());
  };
  std::vector<double> v1, g1, v2, g2;
  run(&v1, &g1);
  run(&v2, &g2);
  CHECK(bits_equal(v1, v2));
  CHECK(bits_equal(g1, g2));
}

TEST_CASE("tensor: float instantiation tracks the double path") {
  Rng rng(26);
  std::vector<double> xd(2 * 2 * 4 * 4), wd(2 * 2 * 3 * 3);
  for (auto& v : xd) v = rng.uniform(-1, 1);
  for (auto& v : wd) v = rng.uniform(-0.5, 0.5);
  std::vector<float> xf(xd.begin(), xd.end()), wf(wd.begin(), wd.end());

  Tensor x64 = Tensor::param({2, 2, 4, 4}, xd);
  Tensor w64 = Tensor::param({2, 2, 3, 3}, wd);
  TensorT<float> x32 = TensorT<float>::param({2, 2, 4, 4}, xf);
  TensorT<float> w32 = TensorT<float>::param({2, 2, 3, 3}, wf);

  Tensor none64;
  TensorT<float> none32;
  Tensor l64 = retex::reduce_mean(
      retex::square(retex::sigmoid(retex::conv2d(x64, w64, none64, 1, 1))));
  TensorT<float> l32 = retex::reduce_mean(
      retex::square(retex::sigmoid(retex::conv2d(x32, w32, none32, 1, 1))));
  l64.backward();
  l32.backward();
  CHECK(static_cast<double>(l32.item()) == doctest::Approx(l64.item()).epsilon(1e-4));
  for (std::size_t i = 0; i < x64.numel(); ++i)
    CHECK(static_cast<double>(x32.grad()[i]) ==
          doctest::Approx(x64.grad()[i]).epsilon(5e-3).scale(1.0));
}
