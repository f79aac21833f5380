#include "mlt/optim.hpp"

#include <algorithm>
#include <cmath>

#include "mlt/errors.hpp"
#include "mlt/json_fields.hpp"

namespace mlt {

void AdamWHyper::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim.adamw: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optim.adamw: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.adamw: weight_decay must be >= 0");
}

nlohmann::json AdamWHyper::to_json() const {
  return {{"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"weight_decay", weight_decay}};
}

AdamWHyper AdamWHyper::from_json(const nlohmann::json& j) {
  AdamWHyper h;
  FieldReader r(j, "optim.adamw");
  r.read("beta1", h.beta1);
  r.read("beta2", h.beta2);
  r.read("eps", h.eps);
  r.read("weight_decay", h.weight_decay);
  r.finish();
  h.validate();
  return h;
}

void adamw_step(std::span<double> param, std::span<const double> grad, AdamWMoments& state, double lr,
                const AdamWHyper& hyper) {
  if (grad.size() != param.size()) {
    throw ShapeError("adamw: gradient length " + std::to_string(grad.size()) + " differs from parameter length " +
                     std::to_string(param.size()));
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * param[i]);
  }
}

void ScheduleSpec::validate() const {
  if (kind == ScheduleKind::exp_decay) {
    if (!(lr0 > 0.0)) throw ConfigError("schedule: lr0 must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("schedule: decay must lie in (0, 1]");
    if (!(interval > 0.0)) throw ConfigError("schedule: interval must be positive");
  } else {
    if (warmup_steps < 1) throw ConfigError("schedule: warmup_steps must be >= 1");
    if (scale_dim < 1) throw ConfigError("schedule: scale_dim must be >= 1");
  }
}

nlohmann::json ScheduleSpec::to_json() const {
  if (kind == ScheduleKind::exp_decay) {
    return {{"kind", "exp_decay"}, {"lr0", lr0}, {"decay", decay}, {"interval", interval}};
  }
  return {{"kind", "warmup"}, {"scale_dim", scale_dim}, {"warmup_steps", warmup_steps}};
}

ScheduleSpec ScheduleSpec::from_json(const nlohmann::json& j, ScheduleKind default_kind) {
  ScheduleSpec s;
  s.kind = default_kind;
  FieldReader r(j, "optim.schedule");
  std::string kind = default_kind == ScheduleKind::exp_decay ? "exp_decay" : "warmup";
  r.read("kind", kind);
  if (kind == "exp_decay") {
    s.kind = ScheduleKind::exp_decay;
  } else if (kind == "warmup") {
    s.kind = ScheduleKind::warmup;
  } else {
    throw ConfigError("schedule: unknown kind \"" + kind + "\"");
  }
  r.read("lr0", s.lr0);
  r.read("decay", s.decay);
  r.read("interval", s.interval);
  r.read("scale_dim", s.scale_dim);
  r.read("warmup_steps", s.warmup_steps);
  r.finish();
  return s;
}

ScheduleSpec ScheduleSpec::exp_decay(double lr0, double decay, double interval) {
  ScheduleSpec s;
  s.kind = ScheduleKind::exp_decay;
  s.lr0 = lr0;
  s.decay = decay;
  s.interval = interval;
  return s;
}

ScheduleSpec ScheduleSpec::warmup(std::size_t scale_dim, std::size_t warmup_steps) {
  ScheduleSpec s;
  s.kind = ScheduleKind::warmup;
  s.scale_dim = scale_dim;
  s.warmup_steps = warmup_steps;
  return s;
}

double lr_exp_decay(double step, const ScheduleSpec& spec) {
  if (step < 0.0) throw std::invalid_argument("schedule step must be >= 0");
  return spec.lr0 * std::pow(spec.decay, step / spec.interval);
}

double lr_warmup(std::uint64_t step, const ScheduleSpec& spec) {
  if (step == 0) throw std::invalid_argument("warmup schedule is defined for step >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(spec.warmup_steps);
  return std::pow(static_cast<double>(spec.scale_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double scheduled_lr(std::uint64_t update, const ScheduleSpec& spec) {
  if (update == 0) throw std::invalid_argument("optimizer updates are counted from 1");
  if (spec.kind == ScheduleKind::exp_decay) return lr_exp_decay(static_cast<double>(update - 1), spec);
  return lr_warmup(update, spec);
}

AdamW::AdamW(std::vector<Group> groups, AdamWHyper hyper) : groups_(std::move(groups)), hyper_(hyper) {
  hyper_.validate();
  for (const auto& g : groups_) {
    g.schedule.validate();
    moments_.emplace_back(g.params.size());
  }
}

std::vector<double> AdamW::next_learning_rates() const {
  std::vector<double> lrs;
  for (const auto& g : groups_) lrs.push_back(scheduled_lr(steps_ + 1, g.schedule));
  return lrs;
}

std::vector<double> AdamW::step() {
  const auto lrs = next_learning_rates();
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      Tensor& p = group.params[pi];
      adamw_step(p.mutable_data(), p.grad_accumulator(), moments_[gi][pi], lrs[gi], hyper_);
    }
  }
  ++steps_;
  return lrs;
}

void AdamW::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) p.zero_grad();
  }
}

}  // namespace mlt
