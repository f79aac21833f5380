#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace mlt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct CommandArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> predictions;
  std::optional<std::uint64_t> seed;
  std::string inject_fault;
};

// Every command validates its inputs before writing anything, writes files
// through temporaries, and maps errors to exit codes: ConfigError and other
// invalid-argument failures to 1, everything else to 2.

/// --config: SyntheticSpec JSON (optional); --out: directory receiving
/// train/ and heldout/ datasets.
int cmd_gen_data(const CommandArgs& args, std::ostream& out, std::ostream& err);

/// --config: RunConfig; --data overrides data.train; --out redirects the
/// checkpoint directory and the log (out/train_log.jsonl).
int cmd_train(const CommandArgs& args, std::ostream& out, std::ostream& err);

/// --checkpoint or --predictions (a predict output directory), --data, and an
/// optional --config (RunConfig or bare {"threshold", "window"}). Writes the
/// JSON report to --out or stdout.
int cmd_eval(const CommandArgs& args, std::ostream& out, std::ostream& err);

/// --checkpoint, --data, --out directory receiving raw.mlt, smoothed.mlt and
/// sequences.json.
int cmd_predict(const CommandArgs& args, std::ostream& out, std::ostream& err);

/// Optional --config (ModelConfig, bare or under "model"); defaults to the
/// tiny configuration. --inject-fault corrupts one op's backward pass.
int cmd_gradcheck(const CommandArgs& args, std::ostream& out, std::ostream& err);

}  // namespace mlt
