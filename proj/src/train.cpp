#include "mlt/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mlt/checkpoint.hpp"
#include "mlt/errors.hpp"
#include "mlt/loss.hpp"

namespace mlt {

namespace {

// Distinct streams for batch order and dropout so that toggling dropout does
// not reshuffle the data.
constexpr std::uint64_t kOrderStream = 0x5851F42D4C957F2DULL;
constexpr std::uint64_t kDropoutStream = 0x14057B7EF767814FULL;

// Training allocates and frees the same few megabyte-sized buffers every
// step; keep them in the heap instead of mapping and faulting them in anew.
void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

void add_noise(Tensor& patches, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : patches.mutable_data()) v += dist(rng);
}

Batch permuted_rows(const Batch& b, std::span<const std::size_t> order) {
  auto permute = [&](const Tensor& t) {
    const std::size_t row = t.numel() / t.dim(0);
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::copy_n(t.data().begin() + order[i] * row, row, out.begin() + i * row);
    }
    return Tensor(t.shape(), std::move(out));
  };
  return {permute(b.patches), permute(b.labels), permute(b.mask)};
}

}  // namespace

std::vector<AdamW::Group> parameter_groups(const ModelParams& params, const ModelConfig& model,
                                           const OptimConfig& optim, std::size_t steps_per_epoch) {
  AdamW::Group backbone{"backbone", optim.backbone, {}};
  AdamW::Group encoder{"encoder", optim.encoder, {}};
  AdamW::Group decoder{"decoder", optim.decoder, {}};
  encoder.schedule.scale_dim = encoder.schedule.scale_dim == 0 ? model.num_patches : encoder.schedule.scale_dim;
  decoder.schedule.scale_dim = decoder.schedule.scale_dim == 0 ? model.num_labels : decoder.schedule.scale_dim;
  for (auto* g : {&backbone, &encoder, &decoder}) {
    if (g->schedule.kind == ScheduleKind::exp_decay && g->schedule.interval == 0.0) {
      g->schedule.interval = static_cast<double>(std::max<std::size_t>(steps_per_epoch, 1));
    }
    if (g->schedule.kind == ScheduleKind::warmup && g->schedule.scale_dim == 0) {
      throw ConfigError("optim." + g->name + ": scale_dim must be set");
    }
    g->schedule.validate();
  }
  for (const auto& p : params.named()) {
    switch (p.group) {
      case ParamGroup::backbone:
        backbone.params.push_back(p.tensor);
        break;
      case ParamGroup::encoder:
        encoder.params.push_back(p.tensor);
        break;
      case ParamGroup::decoder:
        decoder.params.push_back(p.tensor);
        break;
    }
  }
  return {std::move(backbone), std::move(encoder), std::move(decoder)};
}

nlohmann::json StepLog::to_json() const {
  return {{"step", step}, {"lr_backbone", lr_backbone}, {"lr_encoder", lr_encoder}, {"lr_decoder", lr_decoder},
          {"bce", bce},   {"dice", dice},               {"total", total}};
}

nlohmann::json EvalResult::to_json(std::span<const std::string> label_names, const EvalConfig& cfg) const {
  return {{"threshold", cfg.threshold},
          {"window", cfg.window},
          {"unsmoothed", raw_f1.to_json(label_names)},
          {"smoothed", smoothed_f1.to_json(label_names)}};
}

Tensor predict_dataset(const ModelParams& params, const ModelConfig& cfg, const Dataset& ds, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("chunk must be positive");
  if (ds.num_labels() != cfg.num_labels) {
    throw ShapeError("dataset has " + std::to_string(ds.num_labels()) + " labels, model expects " +
                     std::to_string(cfg.num_labels));
  }
  retain_freed_memory();
  const std::size_t n = ds.size();
  const std::size_t L = cfg.num_labels;
  std::vector<double> out(n * L);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(ds, idx);
    const Tensor p = predict(params, cfg, b.patches);
    std::copy(p.data().begin(), p.data().end(), out.begin() + start * L);
  }
  return Tensor({n, L}, std::move(out));
}

EvalResult evaluate_probabilities(const Tensor& probabilities, const Dataset& ds, const EvalConfig& cfg) {
  if (probabilities.shape() != ds.labels.shape()) {
    throw ShapeError("predictions " + shape_str(probabilities.shape()) + " do not match labels " +
                     shape_str(ds.labels.shape()));
  }
  EvalResult r;
  r.raw = probabilities;
  r.smoothed = moving_mean(probabilities, ds.sequences, cfg.window);
  r.raw_f1 = f1_scores(threshold(r.raw, cfg.threshold), ds.labels, ds.mask);
  r.smoothed_f1 = f1_scores(threshold(r.smoothed, cfg.threshold), ds.labels, ds.mask);
  return r;
}

EvalResult evaluate(const ModelParams& params, const ModelConfig& model, const Dataset& ds, const EvalConfig& cfg) {
  return evaluate_probabilities(predict_dataset(params, model, ds), ds, cfg);
}

TrainResult train(const RunConfig& cfg, const Dataset& train_set, const Dataset* eval_set,
                  const TrainOptions& options) {
  cfg.validate();
  train_set.validate();
  const ModelConfig& mc = cfg.model;
  if (train_set.num_labels() != mc.num_labels || train_set.patches.dim(1) != mc.num_patches ||
      train_set.patches.dim(2) != mc.patch_dim) {
    throw ShapeError("training data " + shape_str(train_set.patches.shape()) + " with " +
                     std::to_string(train_set.num_labels()) + " labels does not fit the model config");
  }
  if (eval_set != nullptr) {
    eval_set->validate();
    if (eval_set->num_labels() != mc.num_labels) throw ShapeError("held-out data label count differs from model");
  }

  retain_freed_memory();
  TrainResult result;
  result.params = options.initial != nullptr ? options.initial->clone() : init_params(mc);

  const std::size_t n = train_set.size();
  const std::size_t batch_size = std::min(cfg.data.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch_size - 1) / batch_size;
  AdamW opt(parameter_groups(result.params, mc, cfg.optim, steps_per_epoch), cfg.optim.adamw);

  const std::vector<double> rates = train_set.positive_rates();
  const std::vector<double> weights = resolve_label_weights(cfg.loss, mc.num_labels, rates);

  Rng order_rng(cfg.run.seed ^ kOrderStream);
  Rng dropout_rng(cfg.run.seed ^ kDropoutStream);
  std::vector<std::size_t> order(n);

  std::filesystem::path ckpt_dir(cfg.run.checkpoint_dir);
  if (options.write_checkpoints) std::filesystem::create_directories(ckpt_dir);

  auto run_eval = [&](std::uint64_t step) {
    if (eval_set == nullptr) return;
    const EvalResult ev = evaluate(result.params, mc, *eval_set, cfg.eval);
    if (ev.smoothed_f1.macro > result.best_macro_f1) {
      result.best_macro_f1 = ev.smoothed_f1.macro;
      result.best_step = step;
      if (options.write_checkpoints) save_checkpoint(result.params, mc, ckpt_dir / "best.ckpt");
    }
  };

  std::uint64_t step = 0;
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.run.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t len = std::min(batch_size, n - start);
      Batch batch = make_batch(train_set, std::span<const std::size_t>(order).subspan(start, len));
      if (cfg.data.noise_augment > 0.0) add_noise(batch.patches, cfg.data.noise_augment, order_rng);
      if (cfg.data.mixup) {
        std::vector<std::size_t> partner(len);
        std::iota(partner.begin(), partner.end(), 0);
        std::shuffle(partner.begin(), partner.end(), order_rng);
        const double lambda = sample_mixup_lambda(cfg.data.mixup_alpha, order_rng);
        batch = mixup(batch, permuted_rows(batch, partner), lambda);
      }

      StepLog log;
      {
        Tape tape;
        auto scope = tape.record();
        const Tensor p = forward(result.params, mc, batch.patches, true, dropout_rng);
        const LossTerms terms = total_loss(batch.labels, batch.mask, p, cfg.loss, weights);
        log.bce = terms.bce.item();
        log.dice = terms.dice.item();
        log.total = terms.total.item();
        if (!std::isfinite(log.total)) {
          throw DivergenceError("non-finite loss at step " + std::to_string(step + 1) +
                                " (bce=" + std::to_string(log.bce) + ", dice=" + std::to_string(log.dice) + ")");
        }
        tape.backward(terms.total);
      }
      const std::vector<double> lrs = opt.step();
      opt.zero_grad();
      ++step;
      log.step = step;
      log.lr_backbone = lrs[0];
      log.lr_encoder = lrs[1];
      log.lr_decoder = lrs[2];
      if (options.log != nullptr) *options.log << log.to_json().dump() << '\n';
      if (options.on_step) options.on_step(log);
      result.steps.push_back(log);

      if (cfg.run.eval_every > 0 && step % cfg.run.eval_every == 0) run_eval(step);
      if (cfg.run.max_steps > 0 && step >= cfg.run.max_steps) {
        done = true;
        break;
      }
    }
    if (cfg.run.eval_every == 0) run_eval(step);
  }
  if (cfg.run.eval_every > 0 && step % cfg.run.eval_every != 0) run_eval(step);
  if (options.write_checkpoints) {
    save_checkpoint(result.params, mc, ckpt_dir / "final.ckpt");
    if (eval_set == nullptr) save_checkpoint(result.params, mc, ckpt_dir / "best.ckpt");
  }
  return result;
}

}  // namespace mlt
