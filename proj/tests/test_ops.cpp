#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mlt/errors.hpp"
#include "mlt/gradcheck.hpp"
#include "mlt/ops.hpp"
#include "test_util.hpp"

using namespace mlt;
using mlt::testing::randn;
using mlt::testing::uniform;

namespace {

// Naive triple loop used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    }
  }
  return c;
}

double probe_grad_err(const std::function<Tensor(const Tensor&)>& op, const Tensor& x, Rng& rng) {
  const Tensor w = randn(op(x).shape(), rng);
  return gradcheck([&](const Tensor& t) { return sum(mul(op(t), w)); }, x);
}

}  // namespace

TEST_CASE("matmul identity and hand example") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(mlt::testing::bitwise_equal(matmul(eye, b), b));
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor c({2, 1}, {5, 6});
  const auto oracle = naive_matmul({1, 2, 3, 4}, {5, 6}, 2, 2, 1);
  const Tensor r = matmul(a, c);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.data()[0] == oracle[0]);
  CHECK(r.data()[1] == oracle[1]);
  CHECK(r.data()[0] == 17.0);
  CHECK(r.data()[1] == 39.0);
}

TEST_CASE("batched matmul matches the naive oracle with broadcast batches") {
  Rng rng(1);
  const Tensor a = randn({2, 3, 4}, rng);
  const Tensor b = randn({4, 5}, rng);
  const Tensor bb = randn({1, 4, 5}, rng);
  for (const Tensor* rhs : {&b, &bb}) {
    const Tensor r = matmul(a, *rhs);
    REQUIRE(r.shape() == Shape{2, 3, 5});
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<double> as(a.data().begin() + s * 12, a.data().begin() + (s + 1) * 12);
      std::vector<double> bs(rhs->data().begin(), rhs->data().end());
      const auto o = naive_matmul(as, bs, 3, 4, 5);
      for (std::size_t i = 0; i < 15; ++i) CHECK(std::abs(r.data()[s * 15 + i] - o[i]) < 1e-12);
    }
  }
}

TEST_CASE("gradient of sum(a@b) w.r.t. a is ones@b^T") {
  Rng rng(2);
  Tensor a = randn({3, 4}, rng);
  const Tensor b = randn({4, 2}, rng);
  a.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    auto scope = tape.record();
    loss = sum(matmul(a, b));
  }
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t p = 0; p < 4; ++p) {
      const double expected = b.data()[p * 2] + b.data()[p * 2 + 1];
      CHECK(std::abs(a.grad()[i * 4 + p] - expected) < 1e-12);
    }
  }
  CHECK(gradcheck([&](const Tensor& t) { return sum(matmul(t, b)); }, a.clone()) < 1e-6);
}

TEST_CASE("matmul shape errors name both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 2})), ShapeError);
}

TEST_CASE("broadcasting follows trailing alignment and rejects mismatches") {
  CHECK(broadcast_shape({2, 3, 4}, {4}) == Shape{2, 3, 4});
  CHECK(broadcast_shape({3, 1}, {2, 1, 5}) == Shape{2, 3, 5});
  CHECK_THROWS_AS(broadcast_shape({2, 3}, {4}), ShapeError);
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor col({2, 1}, {10, 20});
  const Tensor r = add(a, col);
  CHECK(r.data()[0] == 11);
  CHECK(r.data()[1] == 12);
  CHECK(r.data()[2] == 23);
  CHECK(r.data()[3] == 24);
  const Tensor row({2}, {100, 200});
  const Tensor s = sub(a, row);
  CHECK(s.data()[3] == -196);
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax_lastdim(Tensor({3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(std::abs(v - 1.0 / 3.0) < 1e-15);
  // exp(0) : exp(ln 2) = 1 : 2
  const Tensor r = softmax_lastdim(Tensor({2}, {0, std::log(2.0)}));
  CHECK(std::abs(r.data()[0] - 1.0 / 3.0) < 1e-9);
  CHECK(std::abs(r.data()[1] - 2.0 / 3.0) < 1e-9);
}

TEST_CASE("softmax is shift invariant, normalized and positive") {
  Rng rng(3);
  const Tensor x = randn({4, 7}, rng, 5.0);
  const Tensor shifted = add_scalar(x, 123.0);
  const Tensor a = softmax_lastdim(x);
  const Tensor b = softmax_lastdim(shifted);
  CHECK(mlt::testing::max_abs_diff(a, b) < 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(a.data()[r * 7 + j] > 0.0);
      total += a.data()[r * 7 + j];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  const Tensor big = softmax_lastdim(Tensor({2}, {1000.0, -1000.0}));
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == 1.0);
}

TEST_CASE("layer_norm examples and invariants") {
  const Tensor g = Tensor::ones({2});
  const Tensor b = Tensor::zeros({2});
  const Tensor c = layer_norm(Tensor({2}, {3, 3}), g, b);
  for (double v : c.data()) CHECK(v == 0.0);
  // [1, 3]: mean 2, biased variance 1 -> [-1, 1] / sqrt(1 + eps)
  const Tensor r = layer_norm(Tensor({2}, {1, 3}), g, b, 1e-12);
  CHECK(std::abs(r.data()[0] + 1.0) < 1e-9);
  CHECK(std::abs(r.data()[1] - 1.0) < 1e-9);

  Rng rng(4);
  const Tensor x = randn({5, 8}, rng, 3.0);
  const Tensor y = layer_norm(x, Tensor::ones({8}), Tensor::zeros({8}));
  for (std::size_t row = 0; row < 5; ++row) {
    double m = 0.0, v = 0.0, xm = 0.0, xv = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      m += y.data()[row * 8 + j];
      xm += x.data()[row * 8 + j];
    }
    m /= 8;
    xm /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
      v += std::pow(y.data()[row * 8 + j] - m, 2);
      xv += std::pow(x.data()[row * 8 + j] - xm, 2);
    }
    v /= 8;
    xv /= 8;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - xv / (xv + 1e-5)) < 1e-10);
  }
  CHECK_THROWS_AS(layer_norm(x, Tensor::ones({7}), Tensor::zeros({8})), ShapeError);
}

TEST_CASE("gelu examples") {
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(std::abs(gelu(Tensor::scalar(10.0)).item() - 10.0) < 1e-9);
  // 1 * Phi(1) with Phi from erf.
  const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(std::abs(gelu(Tensor::scalar(1.0)).item() - phi1) < 1e-12);
  CHECK(std::abs(gelu(Tensor::scalar(1.0)).item() - 0.8413447460685429) < 1e-12);
}

TEST_CASE("sigmoid examples and stability") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(std::abs(sigmoid(Tensor::scalar(std::log(3.0))).item() - 0.75) < 1e-12);
  Rng rng(5);
  const Tensor x = randn({20}, rng, 10.0);
  const Tensor a = sigmoid(x);
  const Tensor b = sigmoid(scale(x, -1.0));
  for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(a.data()[i] + b.data()[i] - 1.0) < 1e-15);
  const Tensor extreme = sigmoid(Tensor({2}, {-800.0, 800.0}));
  CHECK(extreme.data()[0] == 0.0);
  CHECK(extreme.data()[1] == 1.0);
}

TEST_CASE("dropout modes and invalid rates") {
  Rng rng(6);
  const Tensor x = randn({10}, rng);
  CHECK(mlt::testing::bitwise_equal(dropout(x, 0.0, true, rng), x));
  CHECK(mlt::testing::bitwise_equal(dropout(x, 0.1, false, rng), x));
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), std::invalid_argument);
}

TEST_CASE("dropout zero fraction over a million elements") {
  Rng rng(2024);
  const Tensor x = Tensor::ones({1000, 1000});
  const Tensor y = dropout(x, 0.5, true, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK_MESSAGE(v == 2.0, "survivors are scaled by 1/(1-rate)");
    }
  }
  const double frac = static_cast<double>(zeros) / 1e6;
  CHECK(std::abs(frac - 0.5) <= 0.002);
}

TEST_CASE("log and clamp") {
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, 0.0})), std::domain_error);
  const Tensor c = clamp(Tensor({3}, {-2, 0.5, 2}), -1, 1);
  CHECK(c.data()[0] == -1);
  CHECK(c.data()[1] == 0.5);
  CHECK(c.data()[2] == 1);
}

TEST_CASE("shape ops") {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor t = transpose(x);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at({2, 1}) == 6);
  CHECK_THROWS_AS(reshape(x, {4}), ShapeError);
  const Tensor parts[] = {x, Tensor({2, 1}, {7, 8})};
  const Tensor c = concat(parts, 1);
  CHECK(c.shape() == Shape{2, 4});
  CHECK(c.at({1, 3}) == 8);
  const Tensor s = slice(c, 1, 1, 2);
  CHECK(s.at({0, 0}) == 2);
  CHECK(s.at({1, 1}) == 6);
  CHECK_THROWS_AS(slice(c, 1, 3, 2), ShapeError);
  const Tensor sa = sum_axis(x, 0);
  CHECK(sa.shape() == Shape{3});
  CHECK(sa.data()[2] == 9);
  const std::size_t idx[] = {1, 1, 0};
  const Tensor g = gather_rows(x, idx);
  CHECK(g.at({0, 2}) == 6);
  CHECK(g.at({2, 0}) == 1);
  const std::size_t bad[] = {2};
  CHECK_THROWS(gather_rows(x, bad));
  CHECK(mean(x).item() == 3.5);
}

TEST_CASE("every differentiable primitive passes gradcheck on 20 seeds") {
  using Op = std::function<Tensor(const Tensor&)>;
  const std::vector<std::pair<const char*, Op>> unary = {
      {"scale", [](const Tensor& t) { return scale(t, -1.3); }},
      {"add_scalar", [](const Tensor& t) { return add_scalar(t, 0.7); }},
      {"broadcast_to", [](const Tensor& t) { return broadcast_to(slice(t, 0, 0, 1), {2, 3, 4}); }},
      {"transpose", transpose},
      {"reshape", [](const Tensor& t) { return reshape(t, {4, 3}); }},
      {"slice", [](const Tensor& t) { return slice(t, 1, 1, 2); }},
      {"sum_axis", [](const Tensor& t) { return sum_axis(t, 1); }},
      {"softmax", softmax_lastdim},
      {"gelu", gelu},
      {"sigmoid", sigmoid},
      {"gather_rows", [](const Tensor& t) {
         const std::size_t idx[] = {2, 0, 2};
         return gather_rows(t, idx);
       }},
      {"layer_norm", [](const Tensor& t) { return layer_norm(t, Tensor::ones({4}), Tensor::zeros({4})); }},
      {"mean", [](const Tensor& t) { return mean(mul(t, t)); }},
  };
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    for (const auto& [name, op] : unary) {
      const double err = probe_grad_err(op, randn({3, 4}, rng), rng);
      CHECK_MESSAGE(err < 1e-6, name);
      worst = std::max(worst, err);
    }
    const Tensor pos = uniform({3, 4}, rng, 0.2, 3.0);
    CHECK(probe_grad_err([](const Tensor& t) { return log(t); }, pos, rng) < 1e-6);
    const Tensor b = uniform({4}, rng, 0.5, 2.0);
    const Tensor a = randn({3, 4}, rng);
    CHECK(probe_grad_err([&](const Tensor& t) { return add(t, b); }, a, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) { return sub(a, t); }, b, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) { return mul(a, t); }, b, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) { return div(a, t); }, b, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) { return div(t, b); }, a, rng) < 1e-6);
    const Tensor m = randn({4, 2}, rng);
    CHECK(probe_grad_err([&](const Tensor& t) { return matmul(t, m); }, a, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) { return matmul(a, t); }, m, rng) < 1e-6);
    CHECK(probe_grad_err([&](const Tensor& t) {
            const Tensor parts[] = {t, a};
            return concat(parts, 0);
          },
          randn({2, 4}, rng), rng) < 1e-6);
    const std::uint64_t ds = rng();
    CHECK(probe_grad_err([&](const Tensor& t) {
            Rng local(ds);
            return dropout(t, 0.3, true, local);
          },
          a, rng) < 1e-6);
  }
  MESSAGE("worst unary primitive error " << worst);
}
