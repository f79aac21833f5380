#include "mlt/loss.hpp"

#include <cmath>

#include "mlt/errors.hpp"
#include "mlt/json_fields.hpp"
#include "mlt/ops.hpp"

namespace mlt {

namespace {

void check_same_shape(const Tensor& y, const Tensor& mask, const Tensor& p) {
  if (p.rank() != 2 || y.shape() != p.shape() || mask.shape() != p.shape()) {
    throw ShapeError("loss needs matching [B, L] targets, mask and predictions, got " + shape_str(y.shape()) +
                     ", " + shape_str(mask.shape()) + " and " + shape_str(p.shape()));
  }
}

}  // namespace

void LossConfig::validate() const {
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("loss: weights must be strictly positive");
  }
  if (!(dice_weight >= 0.0)) throw ConfigError("loss: dice_weight must be >= 0");
  if (!(dice_smooth > 0.0)) throw ConfigError("loss: dice_smooth must be > 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 0.5)) {
    throw ConfigError("loss: label_smoothing must lie in [0, 0.5)");
  }
  if (!(prob_clamp > 0.0 && prob_clamp < 0.5)) throw ConfigError("loss: prob_clamp must lie in (0, 0.5)");
}

nlohmann::json LossConfig::to_json() const {
  return {{"frequency_weights", frequency_weights}, {"weights", weights},
          {"dice_weight", dice_weight},             {"dice_smooth", dice_smooth},
          {"label_smoothing", label_smoothing},     {"prob_clamp", prob_clamp}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig cfg;
  FieldReader r(j, "loss");
  r.read("frequency_weights", cfg.frequency_weights);
  r.read("weights", cfg.weights);
  r.read("dice_weight", cfg.dice_weight);
  r.read("dice_smooth", cfg.dice_smooth);
  r.read("label_smoothing", cfg.label_smoothing);
  r.read("prob_clamp", cfg.prob_clamp);
  r.finish();
  cfg.validate();
  return cfg;
}

double bce(double y, double p, double clamp) {
  const double q = std::clamp(p, clamp, 1.0 - clamp);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

Tensor bce(const Tensor& y, const Tensor& p, double clamp) {
  const Tensor q = mlt::clamp(p, clamp, 1.0 - clamp);
  const Tensor positive = mul(y, log(q));
  const Tensor negative = mul(add_scalar(scale(y, -1.0), 1.0), log(add_scalar(scale(q, -1.0), 1.0)));
  return scale(add(positive, negative), -1.0);
}

std::vector<double> frequency_weights(std::span<const double> positive_rates) {
  if (positive_rates.empty()) throw std::invalid_argument("frequency_weights needs at least one rate");
  double inverse_total = 0.0;
  for (double r : positive_rates) {
    if (!(r > 0.0 && r < 1.0)) {
      throw std::invalid_argument("positive rate " + std::to_string(r) + " is outside (0, 1)");
    }
    inverse_total += 1.0 / r;
  }
  const double labels = static_cast<double>(positive_rates.size());
  std::vector<double> w;
  w.reserve(positive_rates.size());
  for (double r : positive_rates) w.push_back(labels * (1.0 / r) / inverse_total);
  return w;
}

std::vector<double> resolve_label_weights(const LossConfig& cfg, std::size_t num_labels,
                                          std::span<const double> positive_rates) {
  if (!cfg.weights.empty()) {
    if (cfg.weights.size() != num_labels) {
      throw ConfigError("loss: " + std::to_string(cfg.weights.size()) + " weights given for " +
                        std::to_string(num_labels) + " labels");
    }
    return cfg.weights;
  }
  if (!cfg.frequency_weights) return std::vector<double>(num_labels, 1.0);
  if (positive_rates.size() != num_labels) {
    throw ConfigError("loss: frequency weights need one positive rate per label");
  }
  return frequency_weights(positive_rates);
}

Tensor weighted_masked_bce(const Tensor& y, const Tensor& mask, const Tensor& p,
                           std::span<const double> weights, double clamp) {
  check_same_shape(y, mask, p);
  const std::size_t labels = p.dim(1);
  if (!weights.empty() && weights.size() != labels) {
    throw ShapeError("got " + std::to_string(weights.size()) + " label weights for " + std::to_string(labels) +
                     " labels");
  }
  double annotated = 0.0;
  for (double m : mask.data()) annotated += m;
  if (annotated <= 0.0) throw EmptyBatchError("every label entry in the batch is masked");

  Tensor per_entry = mul(mask, bce(y, p, clamp));
  if (!weights.empty()) per_entry = mul(per_entry, Tensor({labels}, {weights.begin(), weights.end()}));
  return scale(sum(per_entry), 1.0 / annotated);
}

Tensor dice_loss(const Tensor& y, const Tensor& mask, const Tensor& p, double smooth) {
  check_same_shape(y, mask, p);
  if (!(smooth > 0.0)) throw std::invalid_argument("dice smoothing must be positive");
  const std::size_t labels = p.dim(1);
  const Tensor counts = sum_axis(mask, 0);
  std::vector<double> include(labels, 0.0);
  double included = 0.0;
  for (std::size_t t = 0; t < labels; ++t) {
    if (counts.data()[t] > 0.0) {
      include[t] = 1.0;
      included += 1.0;
    }
  }
  if (included == 0.0) throw EmptyBatchError("no label has an annotated entry");

  const Tensor pm = mul(p, mask);
  const Tensor ym = mul(y, mask);
  const Tensor overlap = sum_axis(mul(pm, y), 0);
  const Tensor p_sq = sum_axis(mul(pm, p), 0);
  const Tensor y_sq = sum_axis(mul(ym, y), 0);
  const Tensor dice = div(add_scalar(scale(overlap, 2.0), smooth), add_scalar(add(p_sq, y_sq), smooth));
  const Tensor mean_dice = scale(sum(mul(dice, Tensor({labels}, include))), 1.0 / included);
  return add_scalar(scale(mean_dice, -1.0), 1.0);
}

Tensor smooth_labels(const Tensor& y, double eps) {
  if (!(eps >= 0.0 && eps < 0.5)) throw std::invalid_argument("label smoothing must lie in [0, 0.5)");
  if (eps == 0.0) return y;
  return add_scalar(scale(y, 1.0 - eps), eps / 2.0);
}

LossTerms total_loss(const Tensor& y, const Tensor& mask, const Tensor& p, const LossConfig& cfg,
                     std::span<const double> weights) {
  LossTerms terms;
  terms.bce = weighted_masked_bce(smooth_labels(y, cfg.label_smoothing), mask, p, weights, cfg.prob_clamp);
  if (cfg.dice_weight > 0.0) {
    terms.dice = dice_loss(y, mask, p, cfg.dice_smooth);
    terms.total = add(terms.bce, scale(terms.dice, cfg.dice_weight));
  } else {
    terms.dice = Tensor::scalar(0.0);
    terms.total = terms.bce;
  }
  return terms;
}

}  // namespace mlt
