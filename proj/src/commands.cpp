#include "mlt/commands.hpp"

#include <algorithm>
#include <iterator>
#include <fstream>
#include <iomanip>

#include "json.hpp"
#include "mlt/checkpoint.hpp"
#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/gradcheck_suite.hpp"
#include "mlt/metrics.hpp"
#include "mlt/run_config.hpp"
#include "mlt/tensor_io.hpp"
#include "mlt/train.hpp"

namespace mlt {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFaultableOps[] = {
    "add",     "sub",     "mul",      "div",        "scale",      "add_scalar", "broadcast_to",
    "matmul",  "transpose", "reshape", "concat",    "slice",      "sum",        "sum_axis",
    "gather_rows", "softmax", "layer_norm", "gelu", "sigmoid",    "log",        "clamp",
    "dropout"};

template <typename F>
int guarded(std::ostream& err, const char* command, F&& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    err << command << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

const fs::path& required(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw ConfigError(std::string("missing required flag ") + flag);
  return *p;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  atomic_write(path, [&](std::ostream& o) { o << text; });
}

EvalConfig eval_config_from(const std::optional<fs::path>& path) {
  if (!path) return {};
  const nlohmann::json j = read_json(*path);
  if (j.is_object() && (j.contains("threshold") || j.contains("window")) && !j.contains("eval")) {
    EvalConfig e = EvalConfig::from_json(j);
    RunConfig probe;
    probe.eval = e;
    probe.validate();
    return e;
  }
  return RunConfig::from_json(j).eval;
}

}  // namespace

int cmd_gen_data(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "gen-data", [&] {
    SyntheticSpec spec;
    if (args.config) spec = SyntheticSpec::from_json(read_json(*args.config));
    if (args.seed) spec.seed = *args.seed;
    spec.validate();
    const fs::path dir = required(args.out, "--out");

    const DatasetSplits splits = generate_splits(spec);
    // Stage both splits, then swap them in, so a failure leaves no half
    // written dataset under --out.
    const fs::path staging = dir / ".staging";
    fs::remove_all(staging);
    try {
      save_dataset(splits.train, staging / "train");
      save_dataset(splits.heldout, staging / "heldout");
      for (const char* name : {"train", "heldout"}) {
        fs::remove_all(dir / name);
        fs::rename(staging / name, dir / name);
      }
      fs::remove_all(staging);
    } catch (...) {
      fs::remove_all(staging);
      throw;
    }
    nlohmann::json summary = {{"train", (dir / "train").string()},
                              {"heldout", (dir / "heldout").string()},
                              {"train_samples", splits.train.size()},
                              {"heldout_samples", splits.heldout.size()},
                              {"labels", splits.train.label_names},
                              {"positive_rates", splits.train.positive_rates()}};
    out << summary.dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_train(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "train", [&] {
    RunConfig cfg = RunConfig::load(required(args.config, "--config"));
    if (args.seed) cfg.override_seed(*args.seed);
    if (args.data) cfg.data.train = args.data->string();
    if (args.out) {
      cfg.run.checkpoint_dir = args.out->string();
      cfg.run.log_path = (*args.out / "train_log.jsonl").string();
    }
    if (cfg.data.train.empty()) throw ConfigError("data.train is not set");
    const Dataset train_set = load_dataset(cfg.data.train);
    std::optional<Dataset> eval_set;
    if (!cfg.data.eval.empty()) eval_set = load_dataset(cfg.data.eval);

    const fs::path log_path(cfg.run.log_path);
    if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
    fs::path tmp_log = log_path;
    tmp_log += ".tmp";
    TrainResult result;
    {
      std::ofstream log(tmp_log, std::ios::binary | std::ios::trunc);
      if (!log) throw IoError("cannot write " + tmp_log.string());
      log << std::setprecision(17);
      TrainOptions options;
      options.log = &log;
      options.write_checkpoints = true;
      try {
        result = train(cfg, train_set, eval_set ? &*eval_set : nullptr, options);
      } catch (...) {
        log.close();
        fs::remove(tmp_log);
        throw;
      }
      log.flush();
      if (!log) throw IoError("failed writing " + tmp_log.string());
    }
    fs::rename(tmp_log, log_path);

    nlohmann::json summary = {{"steps", result.steps.size()},
                              {"final_checkpoint", (fs::path(cfg.run.checkpoint_dir) / "final.ckpt").string()},
                              {"best_checkpoint", (fs::path(cfg.run.checkpoint_dir) / "best.ckpt").string()},
                              {"log", log_path.string()}};
    if (!result.steps.empty()) summary["final_loss"] = result.steps.back().to_json();
    if (eval_set) {
      summary["best_macro_f1"] = result.best_macro_f1;
      summary["best_step"] = result.best_step;
    }
    out << summary.dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_eval(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval", [&] {
    if (args.checkpoint.has_value() == args.predictions.has_value()) {
      throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
    }
    const EvalConfig ecfg = eval_config_from(args.config);
    const Dataset ds = load_dataset(required(args.data, "--data"));

    Tensor probs;
    if (args.checkpoint) {
      const Checkpoint ckpt = load_checkpoint(*args.checkpoint);
      probs = predict_dataset(ckpt.params, ckpt.config, ds);
    } else {
      const fs::path p = fs::is_directory(*args.predictions) ? *args.predictions / "raw.mlt" : *args.predictions;
      probs = load_tensor(p);
    }
    const EvalResult result = evaluate_probabilities(probs, ds, ecfg);
    const std::string text = result.to_json(ds.label_names, ecfg).dump(2) + "\n";
    if (args.out) {
      write_text(*args.out, text);
    } else {
      out << text;
    }
    return kExitOk;
  });
}

int cmd_predict(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "predict", [&] {
    const EvalConfig ecfg = eval_config_from(args.config);
    const fs::path dir = required(args.out, "--out");
    const Checkpoint ckpt = load_checkpoint(required(args.checkpoint, "--checkpoint"));
    const Dataset ds = load_dataset(required(args.data, "--data"));

    const Tensor raw = predict_dataset(ckpt.params, ckpt.config, ds);
    const Tensor smoothed = moving_mean(raw, ds.sequences, ecfg.window);
    nlohmann::json sequences = nlohmann::json::array();
    for (const auto& s : ds.sequences) sequences.push_back({{"id", s.id}, {"start", s.start}, {"length", s.length}});
    const nlohmann::json table = {{"num_samples", ds.size()},
                                  {"labels", ds.label_names},
                                  {"window", ecfg.window},
                                  {"sequences", sequences},
                                  {"raw", "raw.mlt"},
                                  {"smoothed", "smoothed.mlt"}};
    fs::create_directories(dir);
    save_tensor(dir / "raw.mlt", raw);
    save_tensor(dir / "smoothed.mlt", smoothed);
    write_text(dir / "sequences.json", table.dump(2) + "\n");
    out << nlohmann::json({{"out", dir.string()}, {"frames", ds.size()}, {"labels", ds.num_labels()}}).dump(2)
        << '\n';
    return kExitOk;
  });
}

int cmd_gradcheck(const CommandArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "gradcheck", [&] {
    ModelConfig cfg = tiny_model_config();
    if (args.config) {
      const nlohmann::json j = read_json(*args.config);
      cfg = ModelConfig::from_json(j.contains("model") ? j.at("model") : j);
    }
    if (args.seed) cfg.seed = *args.seed;
    if (!args.inject_fault.empty()) {
      if (std::find_if(std::begin(kFaultableOps), std::end(kFaultableOps), [&](const char* op) {
            return args.inject_fault == op;
          }) == std::end(kFaultableOps)) {
        throw ConfigError("unknown op for --inject-fault: " + args.inject_fault);
      }
      debug::inject_gradient_fault(args.inject_fault);
    }
    GradcheckOptions options;
    options.base_seed = cfg.seed;
    std::vector<GradcheckEntry> entries;
    try {
      entries = run_gradcheck_suite(cfg, options);
    } catch (...) {
      debug::clear_gradient_fault();
      throw;
    }
    debug::clear_gradient_fault();

    bool all = true;
    out << std::left << std::setw(24) << "component" << std::setw(11) << "kind" << std::setw(14) << "max_rel_err"
        << std::setw(10) << "tol" << "result\n";
    for (const auto& e : entries) {
      out << std::left << std::setw(24) << e.component << std::setw(11) << e.kind << std::setw(14)
          << std::scientific << std::setprecision(3) << e.max_rel_error << std::setw(10) << std::setprecision(0)
          << e.tolerance << std::defaultfloat << (e.passed() ? "PASS" : "FAIL") << '\n';
      all = all && e.passed();
    }
    if (args.out) write_text(*args.out, gradcheck_report(entries).dump(2) + "\n");
    out << (all ? "gradcheck: all components passed\n" : "gradcheck: FAILED\n");
    return all ? kExitOk : kExitRuntime;
  });
}

}  // namespace mlt
