// Runs the built `mlt` binary end to end.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mlt/data.hpp"
#include "mlt/metrics.hpp"
#include "mlt/tensor_io.hpp"

using namespace mlt;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`; stderr is discarded.
Run mlt_cli(const std::string& args) {
  const std::string cmd = std::string(MLT_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mlt_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

nlohmann::json small_spec() {
  return {{"n_x", 16}, {"grid_side", 4},       {"patch_dim", 4},      {"L", 3},
          {"num_samples", 192}, {"holdout_samples", 96}, {"sequence_length", 48}, {"min_segment", 4},
          {"max_segment", 12},  {"positive_rates", {0.2, 0.3, 0.4}}};
}

nlohmann::json small_run() {
  return {{"model", {{"d", 16}, {"N_h", 2}, {"n_x", 16}, {"patch_dim", 4}, {"L", 3}, {"d_mlp", 32}}},
          {"data", {{"train", "data/train"}, {"eval", "data/heldout"}, {"batch_size", 32}}},
          {"run", {{"epochs", 2}}}};
}

// Generated data plus a run config in one directory.
fs::path prepared(const std::string& name) {
  const fs::path dir = scratch(name);
  write_json(dir / "spec.json", small_spec());
  write_json(dir / "run.json", small_run());
  REQUIRE(mlt_cli("gen-data --config " + (dir / "spec.json").string() + " --out " + (dir / "data").string()).code ==
          0);
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(mlt_cli("").code == 1);
  CHECK(mlt_cli("frobnicate").code == 1);
  CHECK(mlt_cli("train").code == 1);
  CHECK(mlt_cli("train --config x.json --bogus").code == 1);
  CHECK(mlt_cli("--help").code == 0);

  const fs::path dir = scratch("usage");
  write_json(dir / "bad.json", {{"modle", nlohmann::json::object()}});
  CHECK(mlt_cli("train --config " + (dir / "bad.json").string()).code == 1);
  write_json(dir / "badspec.json", {{"grid_side", 3}});
  CHECK(mlt_cli("gen-data --config " + (dir / "badspec.json").string() + " --out " + (dir / "d").string()).code == 1);
  CHECK_FALSE(fs::exists(dir / "d" / "train"));
  CHECK(mlt_cli("gradcheck --inject-fault no_such_op").code == 1);
}

TEST_CASE("gen-data is deterministic and fast") {
  const fs::path dir = scratch("gen");
  const auto t0 = std::chrono::steady_clock::now();
  const Run a = mlt_cli("gen-data --out " + (dir / "a").string());
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(a.code == 0);
  CHECK(elapsed < 10.0);
  REQUIRE(mlt_cli("gen-data --out " + (dir / "b").string()).code == 0);
  for (const char* split : {"train", "heldout"}) {
    for (const char* f : {"manifest.json", "patches.mlt", "labels.mlt", "mask.mlt"}) {
      CHECK(slurp(dir / "a" / split / f) == slurp(dir / "b" / split / f));
    }
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "train" / "manifest.json"));
  for (const char* key : {"version", "num_samples", "sequences", "labels", "positive_rates", "tensors"}) {
    CHECK(manifest.contains(key));
  }
  CHECK(manifest.at("num_samples") == 8000);
  CHECK(load_dataset(dir / "a" / "heldout").size() == 2000);
  CHECK_FALSE(fs::exists(dir / "a" / ".staging"));

  REQUIRE(mlt_cli("gen-data --seed 3 --out " + (dir / "c").string()).code == 0);
  CHECK(slurp(dir / "a" / "train" / "patches.mlt") != slurp(dir / "c" / "train" / "patches.mlt"));
}

TEST_CASE("train, predict and eval pipeline") {
  const fs::path dir = prepared("pipeline");
  const Run t = mlt_cli("train --config " + (dir / "run.json").string() + " --out " + (dir / "out").string());
  REQUIRE(t.code == 0);
  const auto summary = nlohmann::json::parse(t.out);
  CHECK(summary.at("steps") == 12);

  std::ifstream log(dir / "out" / "train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == lines + 1);
    for (const char* key : {"lr_backbone", "lr_encoder", "lr_decoder", "bce", "dice", "total"}) CHECK(j.contains(key));
    ++lines;
  }
  CHECK(lines == 12);
  CHECK(fs::exists(dir / "out" / "final.ckpt"));
  CHECK(fs::exists(dir / "out" / "best.ckpt"));

  const std::string ckpt = (dir / "out" / "final.ckpt").string();
  const std::string heldout = (dir / "data" / "heldout").string();
  REQUIRE(mlt_cli("predict --checkpoint " + ckpt + " --data " + heldout + " --out " + (dir / "pred").string()).code ==
          0);
  const Dataset ds = load_dataset(heldout);
  const Tensor raw = load_tensor(dir / "pred" / "raw.mlt");
  const Tensor smoothed = load_tensor(dir / "pred" / "smoothed.mlt");
  CHECK(raw.shape() == Shape{ds.size(), 3});
  for (double v : raw.data()) CHECK((v > 0.0 && v < 1.0));
  const Tensor expected = moving_mean(raw, ds.sequences, 20);
  CHECK(smoothed.data().size() == expected.data().size());
  bool same = true;
  for (std::size_t i = 0; i < expected.numel(); ++i) same = same && smoothed.data()[i] == expected.data()[i];
  CHECK(same);
  const auto seqs = nlohmann::json::parse(slurp(dir / "pred" / "sequences.json"));
  CHECK(seqs.at("num_samples") == ds.size());
  CHECK(seqs.at("sequences").size() == ds.sequences.size());

  const Run e = mlt_cli("eval --checkpoint " + ckpt + " --data " + heldout);
  REQUIRE(e.code == 0);
  const auto report = nlohmann::json::parse(e.out);
  CHECK(report.contains("smoothed"));
  CHECK(report.contains("unsmoothed"));
  CHECK(report.at("smoothed").at("per_label_f1").size() == 3);

  // Scoring the predict output directly gives the same numbers.
  const Run ep = mlt_cli("eval --predictions " + (dir / "pred").string() + " --data " + heldout);
  REQUIRE(ep.code == 0);
  CHECK(nlohmann::json::parse(ep.out) == report);

  // A different window through a bare eval config.
  write_json(dir / "eval.json", {{"threshold", 0.5}, {"window", 1}});
  const Run e1 = mlt_cli("eval --checkpoint " + ckpt + " --data " + heldout + " --config " +
                         (dir / "eval.json").string() + " --out " + (dir / "report.json").string());
  REQUIRE(e1.code == 0);
  const auto r1 = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(r1.at("window") == 1);
  CHECK(r1.at("smoothed").at("macro_f1") == r1.at("unsmoothed").at("macro_f1"));
}

TEST_CASE("ground truth as predictions scores 1") {
  const fs::path dir = prepared("truth");
  const fs::path heldout = dir / "data" / "heldout";
  save_tensor(dir / "truth.mlt", load_dataset(heldout).labels);
  write_json(dir / "eval.json", {{"window", 1}});
  const Run e = mlt_cli("eval --predictions " + (dir / "truth.mlt").string() + " --data " + heldout.string() +
                        " --config " + (dir / "eval.json").string());
  REQUIRE(e.code == 0);
  CHECK(nlohmann::json::parse(e.out).at("unsmoothed").at("macro_f1") == 1.0);
}

TEST_CASE("training twice with one seed gives identical files") {
  const fs::path dir = prepared("determinism");
  const std::string cfg = (dir / "run.json").string();
  REQUIRE(mlt_cli("train --config " + cfg + " --seed 5 --out " + (dir / "a").string()).code == 0);
  REQUIRE(mlt_cli("train --config " + cfg + " --seed 5 --out " + (dir / "b").string()).code == 0);
  REQUIRE(mlt_cli("train --config " + cfg + " --seed 6 --out " + (dir / "c").string()).code == 0);
  for (const char* f : {"train_log.jsonl", "final.ckpt", "best.ckpt"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  CHECK(slurp(dir / "a" / "train_log.jsonl") != slurp(dir / "c" / "train_log.jsonl"));
}

TEST_CASE("runtime failures exit 2 and leave no partial output") {
  const fs::path dir = prepared("failures");
  const Run missing_data =
      mlt_cli("train --config " + (dir / "run.json").string() + " --data " + (dir / "nowhere").string() + " --out " +
              (dir / "out").string());
  CHECK(missing_data.code == 2);
  CHECK_FALSE(fs::exists(dir / "out" / "train_log.jsonl"));
  CHECK_FALSE(fs::exists(dir / "out" / "train_log.jsonl.tmp"));

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK(mlt_cli("eval --checkpoint " + (dir / "junk.ckpt").string() + " --data " + (dir / "data" / "heldout").string())
            .code == 2);
  CHECK(mlt_cli("predict --checkpoint " + (dir / "junk.ckpt").string() + " --data " +
                (dir / "data" / "heldout").string() + " --out " + (dir / "pred").string())
            .code == 2);
  CHECK_FALSE(fs::exists(dir / "pred" / "raw.mlt"));
}

TEST_CASE("gradcheck passes and catches an injected fault") {
  const fs::path dir = scratch("gradcheck");
  const Run ok = mlt_cli("gradcheck --out " + (dir / "report.json").string());
  CHECK(ok.code == 0);
  CHECK(ok.out.find("gradcheck: all components passed") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("passed") == true);
  std::map<std::string, int> model_groups;
  for (const auto& c : report.at("components")) {
    if (c.at("kind") == "model") ++model_groups[c.at("component").get<std::string>()];
  }
  CHECK(model_groups == std::map<std::string, int>{{"model.backbone", 1}, {"model.decoder", 1}, {"model.encoder", 1}});

  const Run bad = mlt_cli("gradcheck --inject-fault softmax");
  CHECK(bad.code == 2);
  CHECK(bad.out.find("gradcheck: FAILED") != std::string::npos);
  CHECK(bad.out.find("softmax") != std::string::npos);
}
