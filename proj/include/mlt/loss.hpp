#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

struct LossConfig {
  /// Derive per-label weights from the training split's positive rates.
  bool frequency_weights = true;
  /// Explicit per-label weights; overrides `frequency_weights` when nonempty.
  std::vector<double> weights;
  double dice_weight = 1.0;
  double dice_smooth = 1.0;
  double label_smoothing = 0.0;
  double prob_clamp = 1e-12;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

/// -[y log p + (1 - y) log(1 - p)] with p clamped to [clamp, 1 - clamp].
double bce(double y, double p, double clamp = 1e-12);

/// Elementwise BCE of soft or hard targets `y` against probabilities `p`.
Tensor bce(const Tensor& y, const Tensor& p, double clamp = 1e-12);

/// w_t = L * (1 / r_t) / sum_i (1 / r_i). Throws std::invalid_argument unless
/// every rate is in (0, 1).
std::vector<double> frequency_weights(std::span<const double> positive_rates);

/// Per-label weights a LossConfig resolves to for `num_labels` labels, given
/// the training split's positive rates.
std::vector<double> resolve_label_weights(const LossConfig& cfg, std::size_t num_labels,
                                          std::span<const double> positive_rates);

/// sum over annotated (b, t) of w_t * BCE, divided by the annotated count.
/// `weights` may be empty (all ones). Throws EmptyBatchError if nothing is
/// annotated.
Tensor weighted_masked_bce(const Tensor& y, const Tensor& mask, const Tensor& p,
                           std::span<const double> weights, double clamp = 1e-12);

/// 1 - mean over labels with annotations of
/// (2 sum py + eps) / (sum p^2 + sum y^2 + eps), sums over annotated entries.
Tensor dice_loss(const Tensor& y, const Tensor& mask, const Tensor& p, double smooth = 1.0);

/// y (1 - eps) + eps / 2.
Tensor smooth_labels(const Tensor& y, double eps);

struct LossTerms {
  Tensor bce;
  Tensor dice;
  Tensor total;
};

/// BCE on smoothed targets plus dice_weight times Dice on the raw targets.
/// `weights` are the resolved per-label weights (empty = all ones).
LossTerms total_loss(const Tensor& y, const Tensor& mask, const Tensor& p, const LossConfig& cfg,
                     std::span<const double> weights);

}  // namespace mlt
