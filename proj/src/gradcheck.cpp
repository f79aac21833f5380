#include "mlt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mlt/errors.hpp"

namespace mlt {

std::vector<double> gradcheck(const ClosedScalarFn& f, std::span<const Tensor> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("gradcheck step must be positive");
  std::vector<Tensor> xs(params.begin(), params.end());
  std::vector<bool> had_grad_flag;
  for (Tensor& x : xs) {
    had_grad_flag.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss;
    {
      auto scope = tape.record();
      loss = f();
    }
    if (loss.numel() != 1) throw ShapeError("gradcheck needs a scalar function, got " + shape_str(loss.shape()));
    if (loss.requires_grad()) tape.backward(loss);
    for (Tensor& x : xs) {
      auto g = x.grad_accumulator();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  std::vector<double> worst(xs.size(), 0.0);
  for (std::size_t p = 0; p < xs.size(); ++p) {
    auto values = xs[p].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst[p] = std::max(worst[p], std::isfinite(err) ? err : INFINITY);
    }
  }

  for (std::size_t p = 0; p < xs.size(); ++p) {
    xs[p].zero_grad();
    xs[p].set_requires_grad(had_grad_flag[p]);
  }
  return worst;
}

double gradcheck(const ScalarFn& f, const Tensor& x, double h) {
  const Tensor params[] = {x};
  return gradcheck([&] { return f(x); }, params, h).front();
}

}  // namespace mlt
