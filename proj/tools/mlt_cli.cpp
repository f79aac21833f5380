#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mlt/commands.hpp"

namespace {

struct Flags {
  std::string config, checkpoint, data, out, predictions, inject_fault;
  std::uint64_t seed = 0;
};

mlt::CommandArgs to_args(const Flags& f, const CLI::App& sub) {
  mlt::CommandArgs a;
  if (!f.config.empty()) a.config = f.config;
  if (!f.checkpoint.empty()) a.checkpoint = f.checkpoint;
  if (!f.data.empty()) a.data = f.data;
  if (!f.out.empty()) a.out = f.out;
  if (!f.predictions.empty()) a.predictions = f.predictions;
  if (const auto* opt = sub.get_option_no_throw("--seed"); opt != nullptr && opt->count() > 0) a.seed = f.seed;
  a.inject_fault = f.inject_fault;
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label transformer: synthetic data, training, evaluation, prediction, gradient checks"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Generate train/ and heldout/ synthetic datasets");
  gen->add_option("--config", f.config, "SyntheticSpec JSON (defaults if omitted)");
  gen->add_option("--out", f.out, "Output directory")->required();
  gen->add_option("--seed", f.seed, "Overrides the spec seed");

  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", f.config, "Run config JSON")->required();
  train->add_option("--data", f.data, "Overrides data.train");
  train->add_option("--out", f.out, "Checkpoint and log directory");
  train->add_option("--seed", f.seed, "Overrides model and run seeds");

  auto* eval = app.add_subcommand("eval", "Macro F1 with and without smoothing");
  auto* ckpt_opt = eval->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--predictions", f.predictions, "predict output directory or raw tensor")->excludes(ckpt_opt);
  eval->add_option("--data", f.data, "Dataset directory")->required();
  eval->add_option("--config", f.config, "Run config or {threshold, window}");
  eval->add_option("--out", f.out, "Report path (stdout if omitted)");

  auto* predict = app.add_subcommand("predict", "Write raw and smoothed per-frame probabilities");
  predict->add_option("--checkpoint", f.checkpoint, "Checkpoint")->required();
  predict->add_option("--data", f.data, "Dataset directory")->required();
  predict->add_option("--out", f.out, "Output directory")->required();
  predict->add_option("--config", f.config, "Run config or {threshold, window}");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable component");
  grad->add_option("--config", f.config, "Model config (tiny config if omitted)");
  grad->add_option("--seed", f.seed, "Overrides the check seed");
  grad->add_option("--out", f.out, "JSON report path");
  grad->add_option("--inject-fault", f.inject_fault, "Corrupt the backward pass of one op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mlt::kExitOk : mlt::kExitUsage;
  }

  if (gen->parsed()) return mlt::cmd_gen_data(to_args(f, *gen), std::cout, std::cerr);
  if (train->parsed()) return mlt::cmd_train(to_args(f, *train), std::cout, std::cerr);
  if (eval->parsed()) return mlt::cmd_eval(to_args(f, *eval), std::cout, std::cerr);
  if (predict->parsed()) return mlt::cmd_predict(to_args(f, *predict), std::cout, std::cerr);
  return mlt::cmd_gradcheck(to_args(f, *grad), std::cout, std::cerr);
}
