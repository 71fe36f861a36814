// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "moec/error.hpp"
#include "moec/nn/grad_check.hpp"
#include "moec/nn/layers.hpp"
#include "unit/helpers.hpp"

using namespace moec;
using namespace moec::nn;
using moec::test::dot;
using moec::test::random_matrix;
using moec::test::random_vector;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_SUITE("numeric-core") {

TEST_CASE("linear_forward hand cases") {
  auto [y1, t1] = linear_forward(Matrix{{1, 2}}, Matrix{{1, 0}, {0, 1}}, std::vector<double>{0, 0});
  CHECK(y1 == Matrix{{1, 2}});
  auto [y2, t2] = linear_forward(Matrix{{1, 1}}, Matrix{{2}, {3}}, std::vector<double>{1});
  CHECK(y2 == Matrix{{6}});
}

TEST_CASE("linear_forward matches naive triple loop") {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 3, 4);
  const Matrix w = random_matrix(rng, 4, 2);
  const auto b = random_vector(rng, 2);
  auto [y, tape] = linear_forward(x, w, b);
  const Matrix ref = naive_matmul(x, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(y(i, j) == doctest::Approx(ref(i, j) + b[j]).epsilon(1e-14));
  CHECK(matmul(x, w) == ref);
}

TEST_CASE("linear_forward rejects shape mismatch") {
  CHECK_THROWS_AS(linear_forward(Matrix(2, 3), Matrix(4, 2), std::vector<double>(2)), DimensionError);
  CHECK_THROWS_AS(linear_forward(Matrix(2, 4), Matrix(4, 2), std::vector<double>(3)), DimensionError);
}

TEST_CASE("linear_backward") {
  auto [y, tape] = linear_forward(Matrix{{3, 4}}, Matrix{{1, 0}, {0, 1}}, std::vector<double>{0, 0});
  auto g = linear_backward(tape, Matrix{{1, 0}});
  CHECK(g.dx == Matrix{{1, 0}});

  Rng rng(11);
  const Matrix x = random_matrix(rng, 5, 3);
  const Matrix w = random_matrix(rng, 3, 4);
  const auto b = random_vector(rng, 4);
  const Matrix r = random_matrix(rng, 5, 4);
  auto [y2, tape2] = linear_forward(x, w, b);
  const auto grads = linear_backward(tape2, r);
  for (std::size_t j = 0; j < 4; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 5; ++i) col += r(i, j);
    CHECK(grads.dbias[j] == doctest::Approx(col).epsilon(1e-15));
  }

  // dx
  auto fx = [&](std::span<const double> p) {
    return dot(linear_forward(Matrix(5, 3, {p.begin(), p.end()}), w, b).first.values(), r.values());
  };
  CHECK(grad_check(fx, x.values(), grads.dx.values()).max_relative_error < 1e-6);
  // dW
  auto fw = [&](std::span<const double> p) {
    return dot(linear_forward(x, Matrix(3, 4, {p.begin(), p.end()}), b).first.values(), r.values());
  };
  CHECK(grad_check(fw, w.values(), grads.dweight.values()).max_relative_error < 1e-6);
  // db
  auto fb = [&](std::span<const double> p) {
    return dot(linear_forward(x, w, p).first.values(), r.values());
  };
  CHECK(grad_check(fb, b, grads.dbias).max_relative_error < 1e-6);

  CHECK_THROWS_AS(linear_backward(tape2, Matrix(5, 3)), DimensionError);
}

TEST_CASE("sine layer") {
  auto [y0, t0] = sine_forward(Matrix{{0.0, 0.0}}, 30.0);
  CHECK(y0(0, 0) == 0.0);
  auto [y1, t1] = sine_forward(Matrix{{std::numbers::pi / 60.0}}, 30.0);
  CHECK(y1(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS(sine_forward(Matrix{{1.0}}, 0.0));

  Rng rng(3);
  const Matrix x = random_matrix(rng, 4, 3, 0.2);
  const Matrix r = random_matrix(rng, 4, 3);
  auto [y, tape] = sine_forward(x, 30.0);
  const Matrix dx = sine_backward(tape, r);
  auto f = [&](std::span<const double> p) {
    return dot(sine_forward(Matrix(4, 3, {p.begin(), p.end()}), 30.0).first.values(), r.values());
  };
  CHECK(grad_check(f, x.values(), dx.values()).max_relative_error < 1e-6);
}

TEST_CASE("relu layer") {
  auto [y, tape] = relu_forward(Matrix{{-1, 0, 2}});
  CHECK(y == Matrix{{0, 0, 2}});
  CHECK(relu_backward(tape, Matrix{{5, 5, 5}}) == Matrix{{0, 0, 5}});

  Rng rng(5);
  Matrix x = random_matrix(rng, 6, 3);
  for (double& v : x.values())
    if (std::abs(v) < 0.05) v = 0.5;  // keep the probe away from the kink
  const Matrix r = random_matrix(rng, 6, 3);
  auto [y2, tape2] = relu_forward(x);
  const Matrix dx = relu_backward(tape2, r);
  auto f = [&](std::span<const double> p) {
    return dot(relu_forward(Matrix(6, 3, {p.begin(), p.end()})).first.values(), r.values());
  };
  CHECK(grad_check(f, x.values(), dx.values()).max_relative_error < 1e-6);
}

TEST_CASE("softmax") {
  const Matrix p = softmax_forward(Matrix{{0.3, 0.3, 0.3, 0.3}});
  for (std::size_t j = 0; j < 4; ++j) CHECK(p(0, j) == 0.25);
  CHECK(softmax_forward(Matrix{{-7.5}, {1e6}})(0, 0) == 1.0);
  CHECK(softmax_forward(Matrix{{-7.5}, {1e6}})(1, 0) == 1.0);

  Rng rng(9);
  const Matrix logits = random_matrix(rng, 5, 4, 3.0);
  const Matrix probs = softmax_forward(logits);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const Matrix r = random_matrix(rng, 5, 4);
  const Matrix dl = softmax_backward(probs, r);
  auto f = [&](std::span<const double> q) {
    return dot(softmax_forward(Matrix(5, 4, {q.begin(), q.end()})).values(), r.values());
  };
  CHECK(grad_check(f, logits.values(), dl.values()).max_relative_error < 1e-6);
}

TEST_CASE("softmax stays finite for extreme logits") {
  const Matrix p = softmax_forward(Matrix{{1e6, -1e6, 0.0}, {-1e6, -1e6, -1e6}});
  CHECK(p.all_finite());
  CHECK(p(0, 0) == 1.0);
  CHECK(p(1, 1) == doctest::Approx(1.0 / 3.0));
  auto [s, st] = sine_forward(Matrix{{1e6, -1e6}}, 30.0);
  CHECK(s.all_finite());
}

TEST_CASE("mse_loss") {
  const std::vector<double> a{1.0, -2.0, 3.5};
  CHECK(mse_loss(a, a).loss == 0.0);
  const auto r = mse_loss(std::vector<double>{0.0}, std::vector<double>{2.0});
  CHECK(r.loss == 4.0);
  CHECK(r.dpred[0] == -4.0);
  CHECK_THROWS_AS(mse_loss(std::vector<double>{}, std::vector<double>{}), DimensionError);
  CHECK_THROWS_AS(mse_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), DimensionError);

  Rng rng(13);
  const auto pred = random_vector(rng, 7, 5.0);
  const auto target = random_vector(rng, 7, 5.0);
  const auto g = mse_loss(pred, target);
  auto f = [&](std::span<const double> p) { return mse_loss(p, target).loss; };
  CHECK(grad_check(f, pred, g.dpred).max_relative_error < 1e-6);
}

TEST_CASE("grad_check harness") {
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> x{1.5};
  CHECK_THROWS(grad_check(f, x, std::vector<double>{3.0}, 1e-8));
  CHECK_THROWS(grad_check(f, x, std::vector<double>{3.0}, 1e-2));
  CHECK(grad_check(f, x, std::vector<double>{3.0}, 1e-4).max_relative_error < 1e-9);
  const auto bad = grad_check(f, x, std::vector<double>{2.0}, 1e-4);
  CHECK(bad.max_relative_error > 0.3);
  CHECK(bad.worst_index == 0);
}

TEST_CASE("grad_check on a 5x3 linear layer and an omega=30 sine layer") {
  Rng rng(17);
  const Matrix x = random_matrix(rng, 5, 3);
  const Matrix w = random_matrix(rng, 3, 3);
  const auto b = random_vector(rng, 3);
  const Matrix r = random_matrix(rng, 5, 3);
  // sin(30·(xW + b)) composed, checked with respect to W
  auto f = [&](std::span<const double> p) {
    auto [z, lt] = linear_forward(x, Matrix(3, 3, {p.begin(), p.end()}), b);
    return dot(sine_forward(z, 30.0).first.values(), r.values());
  };
  auto [z, lt] = linear_forward(x, w, b);
  auto [a, st] = sine_forward(z, 30.0);
  const auto g = linear_backward(lt, sine_backward(st, r));
  CHECK(grad_check(f, w.values(), g.dweight.values()).max_relative_error < 1e-6);
}

}  // TEST_SUITE
