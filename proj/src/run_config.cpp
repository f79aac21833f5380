#include "mlt/run_config.hpp"

#include <fstream>

#include "mlt/errors.hpp"
#include "mlt/json_fields.hpp"

namespace mlt {

namespace {

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace

nlohmann::json OptimConfig::to_json() const {
  return {{"adamw", adamw.to_json()},
          {"backbone", backbone.to_json()},
          {"encoder", encoder.to_json()},
          {"decoder", decoder.to_json()}};
}

OptimConfig OptimConfig::from_json(const nlohmann::json& j) {
  OptimConfig o;
  FieldReader r(j, "optim");
  if (auto* c = r.child("adamw")) o.adamw = AdamWHyper::from_json(*c);
  if (auto* c = r.child("backbone")) o.backbone = ScheduleSpec::from_json(*c, ScheduleKind::exp_decay);
  if (auto* c = r.child("encoder")) o.encoder = ScheduleSpec::from_json(*c, ScheduleKind::warmup);
  if (auto* c = r.child("decoder")) o.decoder = ScheduleSpec::from_json(*c, ScheduleKind::warmup);
  r.finish();
  return o;
}

nlohmann::json DataConfig::to_json() const {
  return {{"train", train},         {"eval", eval},
          {"batch_size", batch_size}, {"mixup", mixup},
          {"mixup_alpha", mixup_alpha}, {"noise_augment", noise_augment}};
}

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  DataConfig d;
  FieldReader r(j, "data");
  r.read("train", d.train);
  r.read("eval", d.eval);
  r.read("batch_size", d.batch_size);
  r.read("mixup", d.mixup);
  r.read("mixup_alpha", d.mixup_alpha);
  r.read("noise_augment", d.noise_augment);
  r.finish();
  return d;
}

nlohmann::json EvalConfig::to_json() const { return {{"threshold", threshold}, {"window", window}}; }

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig e;
  FieldReader r(j, "eval");
  r.read("threshold", e.threshold);
  r.read("window", e.window);
  r.finish();
  return e;
}

nlohmann::json RunSettings::to_json() const {
  return {{"epochs", epochs},
          {"max_steps", max_steps},
          {"seed", seed},
          {"checkpoint_dir", checkpoint_dir},
          {"log_path", log_path},
          {"eval_every", eval_every}};
}

RunSettings RunSettings::from_json(const nlohmann::json& j) {
  RunSettings s;
  FieldReader r(j, "run");
  r.read("epochs", s.epochs);
  r.read("max_steps", s.max_steps);
  r.read("seed", s.seed);
  r.read("checkpoint_dir", s.checkpoint_dir);
  r.read("log_path", s.log_path);
  r.read("eval_every", s.eval_every);
  r.finish();
  return s;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optim.adamw.validate();
  if (!loss.weights.empty() && loss.weights.size() != model.num_labels) {
    throw ConfigError("loss: weights needs one entry per label");
  }
  if (optim.backbone.kind != ScheduleKind::exp_decay) throw ConfigError("optim.backbone must use exp_decay");
  if (data.batch_size == 0) throw ConfigError("data: batch_size must be positive");
  if (!(data.mixup_alpha > 0.0)) throw ConfigError("data: mixup_alpha must be positive");
  if (!(data.noise_augment >= 0.0)) throw ConfigError("data: noise_augment must be >= 0");
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval: threshold must lie in (0, 1)");
  if (eval.window == 0) throw ConfigError("eval: window must be >= 1");
  if (run.epochs == 0) throw ConfigError("run: epochs must be positive");
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"loss", loss.to_json()}, {"optim", optim.to_json()},
          {"data", data.to_json()},   {"eval", eval.to_json()}, {"run", run.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  FieldReader r(j, "config");
  if (auto* m = r.child("model")) c.model = ModelConfig::from_json(*m);
  if (auto* m = r.child("loss")) c.loss = LossConfig::from_json(*m);
  if (auto* m = r.child("optim")) c.optim = OptimConfig::from_json(*m);
  if (auto* m = r.child("data")) c.data = DataConfig::from_json(*m);
  if (auto* m = r.child("eval")) c.eval = EvalConfig::from_json(*m);
  if (auto* m = r.child("run")) c.run = RunSettings::from_json(*m);
  r.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  const auto base = path.parent_path();
  c.data.train = resolve(base, c.data.train);
  c.data.eval = resolve(base, c.data.eval);
  c.run.checkpoint_dir = resolve(base, c.run.checkpoint_dir);
  c.run.log_path = resolve(base, c.run.log_path);
  return c;
}

void RunConfig::override_seed(std::uint64_t seed) {
  model.seed = seed;
  run.seed = seed;
}

}  // namespace mlt
