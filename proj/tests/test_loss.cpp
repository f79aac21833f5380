#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mlt/errors.hpp"
#include "mlt/gradcheck.hpp"
#include "mlt/loss.hpp"
#include "mlt/ops.hpp"
#include "test_util.hpp"

using namespace mlt;
using mlt::testing::grad_of;
using mlt::testing::uniform;

namespace {

constexpr double kLn2 = std::numbers::ln2;

// Scalar recomputation of total_loss, written independently of the tensor ops.
double brute_total(const std::vector<double>& y, const std::vector<double>& mask, const std::vector<double>& p,
                   std::size_t batch, std::size_t labels, const std::vector<double>& w, double eps_ls,
                   double dice_weight, double dice_smooth) {
  double bce_sum = 0.0, count = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < labels; ++t) {
      const std::size_t i = b * labels + t;
      if (mask[i] == 0.0) continue;
      const double ys = y[i] * (1.0 - eps_ls) + eps_ls / 2.0;
      bce_sum += w[t] * -(ys * std::log(p[i]) + (1.0 - ys) * std::log(1.0 - p[i]));
      count += 1.0;
    }
  }
  double dice_sum = 0.0, dice_labels = 0.0;
  for (std::size_t t = 0; t < labels; ++t) {
    double py = 0.0, pp = 0.0, yy = 0.0, n = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t i = b * labels + t;
      if (mask[i] == 0.0) continue;
      py += p[i] * y[i];
      pp += p[i] * p[i];
      yy += y[i] * y[i];
      n += 1.0;
    }
    if (n == 0.0) continue;
    dice_sum += (2.0 * py + dice_smooth) / (pp + yy + dice_smooth);
    dice_labels += 1.0;
  }
  return bce_sum / count + dice_weight * (1.0 - dice_sum / dice_labels);
}

}  // namespace

TEST_CASE("scalar bce") {
  CHECK(std::abs(bce(1.0, 0.5) - kLn2) < 1e-9);
  CHECK(std::abs(bce(0.0, 0.5) - kLn2) < 1e-9);
  CHECK(bce(1.0, 1.0) < 1e-11);
  CHECK(std::isfinite(bce(1.0, 0.0)));
  CHECK(std::abs(bce(1.0, 0.0) + std::log(1e-12)) < 1e-9);
}

TEST_CASE("weighted masked bce") {
  const Tensor y({1, 2}, {1, 0});
  const Tensor p({1, 2}, {0.5, 0.5});
  const Tensor full = Tensor::ones({1, 2});
  const std::vector<double> w = {2.0, 1.0};
  CHECK(std::abs(weighted_masked_bce(y, full, p, w).item() - 1.5 * kLn2) < 1e-9);
  CHECK(std::abs(weighted_masked_bce(y, full, p, {}).item() - kLn2) < 1e-9);

  // Doubling the weights doubles the loss.
  const std::vector<double> w2 = {4.0, 2.0};
  CHECK(std::abs(weighted_masked_bce(y, full, p, w2).item() - 2.0 * 1.5 * kLn2) < 1e-12);

  CHECK_THROWS_AS(weighted_masked_bce(y, Tensor::zeros({1, 2}), p, w), EmptyBatchError);
  CHECK_THROWS_AS(weighted_masked_bce(y, full, Tensor({2, 1}, {0.5, 0.5}), w), ShapeError);
  const std::vector<double> w3 = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(weighted_masked_bce(y, full, p, w3), ShapeError);
}

TEST_CASE("a fully masked sample is the same as dropping it") {
  Rng rng(1);
  const Tensor p = uniform({3, 4}, rng, 0.05, 0.95);
  const Tensor y({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0});
  std::vector<double> m(12, 1.0);
  for (std::size_t t = 0; t < 4; ++t) m[4 + t] = 0.0;
  const Tensor mask({3, 4}, m);
  const auto keep = [](const Tensor& t) {
    std::vector<double> v;
    for (std::size_t i : {0, 1, 2, 3, 8, 9, 10, 11}) v.push_back(t.data()[i]);
    return Tensor({2, 4}, v);
  };
  const std::vector<double> w = {1.2, 0.3, 2.0, 0.5};
  CHECK(std::abs(weighted_masked_bce(y, mask, p, w).item() -
                 weighted_masked_bce(keep(y), Tensor::ones({2, 4}), keep(p), w).item()) < 1e-14);
  CHECK(std::abs(dice_loss(y, mask, p).item() - dice_loss(keep(y), Tensor::ones({2, 4}), keep(p)).item()) < 1e-14);
}

TEST_CASE("frequency weights") {
  const std::vector<double> r = {0.1, 0.4};
  const auto w = frequency_weights(r);
  REQUIRE(w.size() == 2);
  CHECK(std::abs(w[0] - 1.6) < 1e-9);
  CHECK(std::abs(w[1] - 0.4) < 1e-9);

  const std::vector<double> equal(5, 0.3);
  for (double v : frequency_weights(equal)) CHECK(std::abs(v - 1.0) < 1e-12);

  const std::vector<double> mixed = {0.05, 0.11, 0.2, 0.37, 0.5, 0.9};
  double s = 0.0;
  for (double v : frequency_weights(mixed)) s += v;
  CHECK(std::abs(s - 6.0) < 1e-12);

  const std::vector<double> zero = {0.0, 0.5};
  const std::vector<double> one = {1.0, 0.5};
  CHECK_THROWS_AS(frequency_weights(zero), std::invalid_argument);
  CHECK_THROWS_AS(frequency_weights(one), std::invalid_argument);
}

TEST_CASE("label weight resolution") {
  LossConfig cfg;
  const std::vector<double> r = {0.1, 0.4};
  CHECK(resolve_label_weights(cfg, 2, r) == frequency_weights(r));
  cfg.frequency_weights = false;
  CHECK(resolve_label_weights(cfg, 2, r) == std::vector<double>{1.0, 1.0});
  cfg.weights = {3.0, 1.0};
  CHECK(resolve_label_weights(cfg, 2, r) == cfg.weights);
  CHECK_THROWS_AS(resolve_label_weights(cfg, 3, r), ConfigError);
}

TEST_CASE("dice loss") {
  const Tensor one({1, 1}, {1.0});
  CHECK(std::abs(dice_loss(one, one, Tensor({1, 1}, {0.0})).item() - 0.5) < 1e-9);

  const Tensor y({2, 3}, {1, 0, 1, 0, 0, 1});
  CHECK(dice_loss(y, Tensor::ones({2, 3}), y).item() == 0.0);
  CHECK(dice_loss(y, Tensor::ones({2, 3}), y, 1e-3).item() == 0.0);

  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const Tensor p = uniform({2, 3}, rng, 0.0, 1.0);
    const double v = dice_loss(y, Tensor::ones({2, 3}), p).item();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }

  // Labels with no annotated entry drop out of the mean.
  const Tensor mask({2, 3}, {1, 0, 1, 1, 0, 1});
  const Tensor p({2, 3}, {0.9, 0.2, 0.7, 0.1, 0.6, 0.8});
  const auto sub = [](const Tensor& t) {
    return Tensor({2, 2}, {t.data()[0], t.data()[2], t.data()[3], t.data()[5]});
  };
  CHECK(std::abs(dice_loss(y, mask, p).item() - dice_loss(sub(y), Tensor::ones({2, 2}), sub(p)).item()) < 1e-14);
  CHECK_THROWS_AS(dice_loss(y, Tensor::zeros({2, 3}), p), EmptyBatchError);
}

TEST_CASE("label smoothing") {
  const Tensor y({1, 3}, {1, 0, 1});
  const Tensor s = smooth_labels(y, 0.1);
  CHECK(std::abs(s.data()[0] - 0.95) < 1e-9);
  CHECK(std::abs(s.data()[1] - 0.05) < 1e-9);
  const Tensor id = smooth_labels(y, 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(id.data()[i] == y.data()[i]);
  CHECK_THROWS_AS(smooth_labels(y, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(smooth_labels(y, -0.1), std::invalid_argument);
}

TEST_CASE("total loss reductions") {
  Rng rng(3);
  const Tensor y({2, 3}, {1, 0, 1, 0, 0, 1});
  const Tensor mask = Tensor::ones({2, 3});
  const Tensor p = uniform({2, 3}, rng, 0.1, 0.9);

  LossConfig plain;
  plain.dice_weight = 0.0;
  const LossTerms t = total_loss(y, mask, p, plain, {});
  double mean = 0.0;
  for (std::size_t i = 0; i < 6; ++i) mean += bce(y.data()[i], p.data()[i]);
  CHECK(std::abs(t.total.item() - mean / 6.0) < 1e-12);

  LossConfig cfg;
  const LossTerms perfect = total_loss(y, mask, y, cfg, {});
  CHECK(perfect.total.item() >= 0.0);
  CHECK(perfect.total.item() < 1e-10);
}

TEST_CASE("total loss matches the scalar recomputation") {
  const std::vector<double> y = {1, 0, 1, 0, 1, 1};
  const std::vector<double> m = {1, 1, 0, 1, 1, 1};
  const std::vector<double> p = {0.8, 0.3, 0.6, 0.2, 0.55, 0.9};
  const std::vector<double> w = {1.7, 0.6, 0.7};
  LossConfig cfg;
  cfg.label_smoothing = 0.1;
  cfg.dice_weight = 0.7;
  const LossTerms t = total_loss(Tensor({2, 3}, y), Tensor({2, 3}, m), Tensor({2, 3}, p), cfg, w);
  const double expected = brute_total(y, m, p, 2, 3, w, 0.1, 0.7, 1.0);
  CHECK(std::abs(t.total.item() - expected) < 1e-12);
  CHECK(std::abs(t.total.item() - (t.bce.item() + 0.7 * t.dice.item())) < 1e-15);
}

TEST_CASE("masked entries receive exactly zero gradient") {
  Rng rng(4);
  const Tensor y({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0});
  const Tensor mask({3, 4}, {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1});
  Tensor p = uniform({3, 4}, rng, 0.05, 0.95);
  p.set_requires_grad(true);
  LossConfig cfg;
  cfg.label_smoothing = 0.1;
  const std::vector<double> w = {1.0, 0.5, 2.0, 0.5};
  Tape tape;
  Tensor loss;
  {
    auto scope = tape.record();
    loss = total_loss(y, mask, p, cfg, w).total;
  }
  tape.backward(loss);
  const auto g = grad_of(p);
  for (std::size_t i = 0; i < 12; ++i) {
    if (mask.data()[i] == 0.0) {
      CHECK(g[i] == 0.0);
    } else {
      CHECK(g[i] != 0.0);
    }
  }
  const std::vector<Tensor> wrt = {p};
  const auto errs = gradcheck([&] { return total_loss(y, mask, p, cfg, w).total; }, wrt);
  CHECK(errs.front() < 1e-6);
}

TEST_CASE("loss config json") {
  LossConfig cfg;
  cfg.weights = {1.0, 2.0};
  cfg.label_smoothing = 0.1;
  const LossConfig back = LossConfig::from_json(cfg.to_json());
  CHECK(back.weights == cfg.weights);
  CHECK(back.label_smoothing == 0.1);
  CHECK_THROWS_AS(LossConfig::from_json({{"label_smoothing", 0.5}}), ConfigError);
  CHECK_THROWS_AS(LossConfig::from_json({{"weights", {1.0, -1.0}}}), ConfigError);
  CHECK_THROWS_AS(LossConfig::from_json({{"focal", true}}), ConfigError);
}
