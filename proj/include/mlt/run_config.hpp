#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "mlt/loss.hpp"
#include "mlt/model.hpp"
#include "mlt/optim.hpp"

namespace mlt {

/// Per-group schedules plus AdamW settings. The backbone group (patch
/// encoder) decays exponentially; encoder and decoder groups warm up, scaled
/// by n_x and L respectively unless scale_dim is set.
struct OptimConfig {
  AdamWHyper adamw;
  ScheduleSpec backbone = ScheduleSpec::exp_decay(5e-4, 0.99, 0.0);
  ScheduleSpec encoder = ScheduleSpec::warmup(0, 4000);
  ScheduleSpec decoder = ScheduleSpec::warmup(0, 4000);

  nlohmann::json to_json() const;
  static OptimConfig from_json(const nlohmann::json& j);
};

struct DataConfig {
  std::string train;
  std::string eval;
  std::size_t batch_size = 32;
  bool mixup = false;
  double mixup_alpha = 0.2;
  /// Stddev of additive Gaussian noise on training patches; 0 disables.
  double noise_augment = 0.0;

  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

struct EvalConfig {
  double threshold = 0.5;
  std::size_t window = 20;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct RunSettings {
  std::size_t epochs = 1;
  /// Stop after this many updates; 0 means run every epoch.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_dir = "checkpoints";
  std::string log_path = "train_log.jsonl";
  /// Held-out evaluation period in steps; 0 evaluates once per epoch.
  std::size_t eval_every = 0;

  nlohmann::json to_json() const;
  static RunSettings from_json(const nlohmann::json& j);
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  EvalConfig eval;
  RunSettings run;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// Parses the file and resolves relative data/checkpoint/log paths against
  /// the file's directory.
  static RunConfig load(const std::filesystem::path& path);
  /// Sets both the initialization seed and the run seed.
  void override_seed(std::uint64_t seed);
};

}  // namespace mlt
