#pragma once

// Subcommands of the resa_cli tool. Each returns a process exit code.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "resa/bench.hpp"
#include "resa/config.hpp"
#include "resa/lane.hpp"

namespace resa {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheckFailed = 3 };

struct GenArgs {
  std::filesystem::path out;
  int count = 100;
  Difficulty difficulty = Difficulty::kCrowded;
  std::uint64_t seed = 1;
  Index height = 96;
  Index width = 160;
};

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
};

struct EvalArgs {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> config;  // default: config.resolved next to checkpoints/
  std::optional<std::filesystem::path> predictions;  // directory of lane files mirroring the labels
  std::filesystem::path data;
  std::string metric = "culane";
  std::optional<std::filesystem::path> out;
};

struct InferArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> config;
  std::filesystem::path image;
  std::filesystem::path out;
};

struct GradcheckArgs {
  std::string scope = "all";
  std::uint64_t seed = 1;
  int seeds = 1;
};

struct InspectArgs {
  char axis = 'h';
  Index length = 8;
  int iterations = 3;
  StridePolicy policy = StridePolicy::kFloorDivision;
  std::filesystem::path out;
};

struct BenchArgs {
  BenchConfig config;
  std::optional<std::filesystem::path> out;  // CSV path
};

int cmd_gen(const GenArgs& args, std::ostream& log);
int cmd_train(const TrainArgs& args, std::ostream& log);
int cmd_eval(const EvalArgs& args, std::ostream& log);
int cmd_infer(const InferArgs& args, std::ostream& log);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log);
int cmd_inspect(const InspectArgs& args, std::ostream& log);
int cmd_bench(const BenchArgs& args, std::ostream& log);

/// Runs a command body, mapping exceptions to exit codes and messages on err.
int run_command(const std::function<int()>& body, std::ostream& err);

/// Positions reached from an impulse at 0 by one RESA direction (identity
/// kernel) along an axis of length L; row k is the support after iterations 0..k.
std::vector<std::vector<bool>> impulse_support(Index length, int iterations, StridePolicy policy,
                                               Axis axis = Axis::kHorizontal);

// Checkpoint sidecar ("<checkpoint>.meta", key=value lines).
struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  int iter = 0;
  std::uint64_t seed = 0;
};
void write_checkpoint_meta(const std::filesystem::path& checkpoint, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint);

/// Reads a run configuration: file, then key=value overrides.
ModelConfig resolve_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace resa
