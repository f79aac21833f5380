#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/loss.hpp"
#include "mlt/run_config.hpp"
#include "mlt/train.hpp"
#include "test_util.hpp"

using namespace mlt;
using mlt::testing::bitwise_equal;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_patches = 16;
  s.grid_side = 4;
  s.patch_dim = 4;
  s.num_labels = 3;
  s.num_samples = 96;
  s.holdout_samples = 48;
  s.sequence_length = 48;
  s.min_segment = 4;
  s.max_segment = 12;
  s.positive_rates = {0.2, 0.3, 0.4};
  return s;
}

RunConfig small_run() {
  RunConfig cfg;
  cfg.model.embed_dim = 16;
  cfg.model.num_heads = 2;
  cfg.model.num_patches = 16;
  cfg.model.patch_dim = 4;
  cfg.model.num_labels = 3;
  cfg.model.mlp_dim = 32;
  cfg.data.batch_size = 16;
  cfg.run.epochs = 2;
  return cfg;
}

}  // namespace

TEST_CASE("first logged loss equals total_loss recomputed on the batch") {
  const Dataset ds = generate_dataset(small_spec());
  RunConfig cfg = small_run();
  cfg.model.dropout = 0.0;
  cfg.data.batch_size = ds.size();
  cfg.run.epochs = 1;
  cfg.loss.label_smoothing = 0.1;
  const TrainResult r = train(cfg, ds, nullptr);
  REQUIRE(r.steps.size() == 1);

  // One full-size batch: the loss is order-independent up to rounding.
  const ModelParams init = init_params(cfg.model);
  const Tensor p = predict(init, cfg.model, ds.patches);
  const auto w = frequency_weights(ds.positive_rates());
  const LossTerms expected = total_loss(ds.labels, ds.mask, p, cfg.loss, w);
  CHECK(std::abs(r.steps[0].total - expected.total.item()) < 1e-12);
  CHECK(std::abs(r.steps[0].bce - expected.bce.item()) < 1e-12);
  CHECK(std::abs(r.steps[0].dice - expected.dice.item()) < 1e-12);
}

TEST_CASE("step log records per-group learning rates") {
  const Dataset ds = generate_dataset(small_spec());
  const RunConfig cfg = small_run();
  const TrainResult r = train(cfg, ds, nullptr);
  REQUIRE(r.steps.size() == 12);
  const auto groups = parameter_groups(init_params(cfg.model), cfg.model, cfg.optim, 6);
  for (const auto& s : r.steps) {
    CHECK(s.lr_backbone == scheduled_lr(s.step, groups[0].schedule));
    CHECK(s.lr_encoder == scheduled_lr(s.step, groups[1].schedule));
    CHECK(s.lr_decoder == scheduled_lr(s.step, groups[2].schedule));
  }
  const auto j = r.steps[3].to_json();
  for (const char* key : {"step", "lr_backbone", "lr_encoder", "lr_decoder", "bce", "dice", "total"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.size() == 7);
}

TEST_CASE("training is deterministic") {
  const Dataset ds = generate_dataset(small_spec());
  RunConfig cfg = small_run();
  cfg.data.mixup = true;
  cfg.data.noise_augment = 0.1;
  std::ostringstream log_a, log_b;
  TrainOptions oa, ob;
  oa.log = &log_a;
  ob.log = &log_b;
  const TrainResult a = train(cfg, ds, nullptr, oa);
  const TrainResult b = train(cfg, ds, nullptr, ob);
  CHECK(log_a.str() == log_b.str());
  CHECK(!log_a.str().empty());
  const auto na = a.params.named(), nb = b.params.named();
  for (std::size_t i = 0; i < na.size(); ++i) CHECK(bitwise_equal(na[i].tensor, nb[i].tensor));

  cfg.override_seed(1);
  const TrainResult c = train(cfg, ds, nullptr);
  CHECK(c.steps[0].total != a.steps[0].total);
}

TEST_CASE("untrained loss sits near ln 2 without dice, weights or smoothing") {
  SyntheticSpec spec;
  spec.num_samples = 256;
  const Dataset ds = generate_dataset(spec);
  RunConfig cfg;
  cfg.loss.dice_weight = 0.0;
  cfg.loss.frequency_weights = false;
  cfg.data.batch_size = 256;
  cfg.run.max_steps = 1;
  const TrainResult r = train(cfg, ds, nullptr);
  REQUIRE(r.steps.size() == 1);
  CHECK(std::abs(r.steps[0].bce - std::numbers::ln2) < 0.05);
}

TEST_CASE("loss decreases on the small task and evaluation reports both variants") {
  const DatasetSplits s = generate_splits(small_spec());
  RunConfig cfg = small_run();
  cfg.run.epochs = 20;
  cfg.optim.encoder.warmup_steps = 40;
  cfg.optim.decoder.warmup_steps = 40;
  const TrainResult r = train(cfg, s.train, &s.heldout);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    first += r.steps[i].total;
    last += r.steps[r.steps.size() - 1 - i].total;
  }
  CHECK(last < first);
  CHECK(r.best_macro_f1 >= 0.0);
  CHECK(r.best_step > 0);

  const EvalResult ev = evaluate(r.params, cfg.model, s.heldout, cfg.eval);
  const auto j = ev.to_json(s.heldout.label_names, cfg.eval);
  CHECK(j.contains("smoothed"));
  CHECK(j.contains("unsmoothed"));
  CHECK(j.at("window") == 20);
}

TEST_CASE("ground truth scores perfectly") {
  const Dataset ds = generate_dataset(small_spec());
  const EvalResult ev = evaluate_probabilities(ds.labels, ds, EvalConfig{});
  CHECK(ev.raw_f1.macro == 1.0);
}

TEST_CASE("masked entries cannot influence training") {
  // Two sources share labels {s0, s1}; each also has a private label whose
  // annotations are masked out. Replacing the masked targets changes nothing.
  SyntheticSpec spec = small_spec();
  spec.num_labels = 3;
  Dataset d1 = generate_dataset(spec);
  spec.seed = 99;
  Dataset d2 = generate_dataset(spec);
  for (auto& s : d2.sequences) s.id = "b" + s.id;
  d1.label_names = {"s0", "s1", "p1"};
  d2.label_names = {"s0", "s1", "p2"};
  const std::vector<Dataset> full = {d1, d2};
  Dataset a = merge_label_universes(full);
  REQUIRE(a.label_names == std::vector<std::string>{"s0", "s1", "p1", "p2"});
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t c : {2, 3}) {
      a.mask.mutable_data()[i * 4 + c] = 0.0;
      a.labels.mutable_data()[i * 4 + c] = 1.0;
    }
  }
  Dataset b = a;
  b.labels = a.labels.clone();
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t c : {2, 3}) b.labels.mutable_data()[i * 4 + c] = 0.0;
  }
  RunConfig cfg = small_run();
  cfg.model.num_labels = 4;
  cfg.loss.weights = {1.0, 1.0, 1.0, 1.0};
  cfg.loss.label_smoothing = 0.1;
  const TrainResult ra = train(cfg, a, nullptr);
  const TrainResult rb = train(cfg, b, nullptr);
  REQUIRE(ra.steps.size() == rb.steps.size());
  for (std::size_t i = 0; i < ra.steps.size(); ++i) CHECK(std::abs(ra.steps[i].total - rb.steps[i].total) < 1e-9);
}

TEST_CASE("training rejects mismatched data and fully masked batches") {
  const Dataset ds = generate_dataset(small_spec());
  RunConfig cfg = small_run();
  cfg.model.num_labels = 4;
  CHECK_THROWS_AS(train(cfg, ds, nullptr), ShapeError);
  cfg = small_run();
  Dataset masked = ds;
  masked.mask = Tensor::zeros(ds.mask.shape());
  cfg.loss.frequency_weights = false;
  CHECK_THROWS_AS(train(cfg, masked, nullptr), EmptyBatchError);
}

TEST_CASE("run config") {
  const RunConfig def;
  CHECK(RunConfig::from_json(def.to_json()).to_json() == def.to_json());
  CHECK_THROWS_AS(RunConfig::from_json({{"modle", nlohmann::json::object()}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"batch_size", 0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"loss", {{"weights", {1.0, 2.0}}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"optim", {{"backbone", {{"kind", "warmup"}}}}}}), ConfigError);
  RunConfig c;
  c.override_seed(42);
  CHECK(c.model.seed == 42);
  CHECK(c.run.seed == 42);
}
