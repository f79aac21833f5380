#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static AdamWHyper from_json(const nlohmann::json& j);
};

/// Moments for one parameter tensor.
struct AdamWMoments {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One decoupled-weight-decay step:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
void adamw_step(std::span<double> param, std::span<const double> grad, AdamWMoments& state, double lr,
                const AdamWHyper& hyper);

enum class ScheduleKind { exp_decay, warmup };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::warmup;
  // exp_decay
  double lr0 = 5e-4;
  double decay = 0.99;
  /// Steps per decay period; 0 means one epoch, resolved by the trainer.
  double interval = 0.0;
  // warmup
  std::size_t scale_dim = 0;  // 0 means derive from the model (n_x or L)
  std::size_t warmup_steps = 4000;

  /// Checks ranges; `interval` and `scale_dim` must already be resolved.
  void validate() const;
  nlohmann::json to_json() const;
  static ScheduleSpec from_json(const nlohmann::json& j, ScheduleKind default_kind);

  static ScheduleSpec exp_decay(double lr0 = 5e-4, double decay = 0.99, double interval = 1.0);
  static ScheduleSpec warmup(std::size_t scale_dim, std::size_t warmup_steps = 4000);
};

/// lr0 * decay^(step / interval), continuous in `step` (counted from 0).
double lr_exp_decay(double step, const ScheduleSpec& spec);
/// scale_dim^-0.5 * min(step^-0.5, step * warmup_steps^-1.5); step >= 1.
double lr_warmup(std::uint64_t step, const ScheduleSpec& spec);
/// Rate for the `update`-th optimizer step (1-based) under either schedule.
double scheduled_lr(std::uint64_t update, const ScheduleSpec& spec);

/// AdamW over named parameter groups, each driven by its own schedule.
class AdamW {
 public:
  struct Group {
    std::string name;
    ScheduleSpec schedule;
    std::vector<Tensor> params;
  };

  AdamW(std::vector<Group> groups, AdamWHyper hyper);

  /// Applies one update from the parameters' accumulated gradients and
  /// returns the learning rate used by each group.
  std::vector<double> step();
  void zero_grad();

  std::uint64_t steps_taken() const { return steps_; }
  const std::vector<Group>& groups() const { return groups_; }
  /// Rates the next call to step() will use.
  std::vector<double> next_learning_rates() const;

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<AdamWMoments>> moments_;
  AdamWHyper hyper_;
  std::uint64_t steps_ = 0;
};

}  // namespace mlt
