#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "mlt/data.hpp"
#include "mlt/metrics.hpp"
#include "mlt/model.hpp"
#include "mlt/optim.hpp"
#include "mlt/run_config.hpp"

namespace mlt {

/// Optimizer groups for `params`: backbone on the exp-decay schedule,
/// encoder on warmup scaled by n_x, decoder and head on warmup scaled by L.
/// Unresolved schedule fields (interval 0, scale_dim 0) are filled in here.
std::vector<AdamW::Group> parameter_groups(const ModelParams& params, const ModelConfig& model,
                                           const OptimConfig& optim, std::size_t steps_per_epoch);

struct StepLog {
  std::uint64_t step = 0;
  double lr_backbone = 0.0;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
};

struct EvalResult {
  Tensor raw;       // [N x L]
  Tensor smoothed;  // [N x L]
  F1Report raw_f1;
  F1Report smoothed_f1;

  /// {"threshold", "window", "unsmoothed": report, "smoothed": report}.
  nlohmann::json to_json(std::span<const std::string> label_names, const EvalConfig& cfg) const;
};

/// Eval-mode probabilities for every sample, in chunks of `chunk` samples.
Tensor predict_dataset(const ModelParams& params, const ModelConfig& cfg, const Dataset& ds,
                       std::size_t chunk = 256);

/// Scores probabilities against the dataset's labels and mask, with and
/// without per-sequence moving-mean smoothing.
EvalResult evaluate_probabilities(const Tensor& probabilities, const Dataset& ds, const EvalConfig& cfg);
EvalResult evaluate(const ModelParams& params, const ModelConfig& model, const Dataset& ds,
                    const EvalConfig& cfg);

struct TrainOptions {
  /// Receives one JSON line per optimizer step.
  std::ostream* log = nullptr;
  /// Write best.ckpt and final.ckpt under cfg.run.checkpoint_dir.
  bool write_checkpoints = false;
  std::function<void(const StepLog&)> on_step;
  /// Starting parameters; initialized from cfg.model.seed when empty.
  const ModelParams* initial = nullptr;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> steps;
  /// Held-out smoothed macro F1 of the best evaluation; -1 without eval data.
  double best_macro_f1 = -1.0;
  std::uint64_t best_step = 0;
};

/// Deterministic given (cfg, data). Throws DivergenceError on a non-finite
/// loss and EmptyBatchError when a batch has no annotated entry.
TrainResult train(const RunConfig& cfg, const Dataset& train_set, const Dataset* eval_set,
                  const TrainOptions& options = {});

}  // namespace mlt
