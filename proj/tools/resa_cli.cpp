#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "resa/commands.hpp"

using namespace resa;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string item; std::getline(is, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::pair<std::string, std::string> split_key_value(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RESA lane-detection toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  std::string gen_difficulty = "crowded";
  auto* g = app.add_subcommand("gen", "generate a synthetic lane dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--count", gen.count, "number of samples");
  g->add_option("--difficulty", gen_difficulty, "normal | crowded | noline");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--height", gen.height, "image height");
  g->add_option("--width", gen.width, "image width");

  TrainArgs train;
  std::string train_config;
  std::vector<std::string> train_sets;
  std::optional<std::uint64_t> train_seed;
  auto* t = app.add_subcommand("train", "train a lane model");
  t->add_option("--config", train_config, "key=value config file");
  t->add_option("--out", train.out, "run directory")->required();
  t->add_option("--set", train_sets, "config override key=value (repeatable)");
  t->add_option("--seed", train_seed, "override the config seed");

  EvalArgs eval;
  std::string eval_checkpoint, eval_config, eval_pred, eval_out;
  auto* e = app.add_subcommand("eval", "score predictions against a dataset");
  e->add_option("--checkpoint", eval_checkpoint, "trained checkpoint");
  e->add_option("--pred", eval_pred, "directory of predicted lane files instead of a checkpoint");
  e->add_option("--config", eval_config, "config of the checkpoint (default: run's config.resolved)");
  e->add_option("--data", eval.data, "dataset directory")->required();
  e->add_option("--metric", eval.metric, "culane | tusimple");
  e->add_option("--out", eval_out, "directory for reports/");

  InferArgs infer;
  std::string infer_config;
  auto* inf = app.add_subcommand("infer", "draw predicted lanes on an image");
  inf->add_option("--checkpoint", infer.checkpoint, "trained checkpoint")->required();
  inf->add_option("--config", infer_config, "config of the checkpoint");
  inf->add_option("--image", infer.image, "input PNG")->required();
  inf->add_option("--out", infer.out, "output PNG")->required();

  GradcheckArgs gc;
  auto* gcs = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gcs->add_option("--scope", gc.scope, "tensor | resa | busd | model | all")
      ->check(CLI::IsMember({"tensor", "resa", "busd", "model", "all"}));
  gcs->add_option("--seed", gc.seed, "first seed");
  gcs->add_option("--seeds", gc.seeds, "number of seeds");

  InspectArgs inspect;
  std::string inspect_axis = "h";
  std::string inspect_policy = "floor";
  auto* ins = app.add_subcommand("inspect", "impulse-response support of one RESA direction");
  ins->add_option("--axis", inspect_axis, "h | v")->check(CLI::IsMember({"h", "v"}));
  ins->add_option("--L", inspect.length, "axis length")->required();
  ins->add_option("--K", inspect.iterations, "iterations")->required();
  ins->add_option("--stride-policy", inspect_policy, "floor | pow2")->check(CLI::IsMember({"floor", "pow2"}));
  ins->add_option("--out", inspect.out, "output PNG")->required();

  BenchArgs bench;
  std::string bench_widths = "7,9,11";
  std::string bench_sizes = "128x36x100";
  std::string bench_methods = "resa,scnn_seq";
  std::string bench_out;
  auto* b = app.add_subcommand("bench", "time RESA against sequential propagation");
  b->add_option("--widths", bench_widths, "kernel widths, comma separated");
  b->add_option("--sizes", bench_sizes, "feature sizes CxHxW, comma separated");
  b->add_option("--methods", bench_methods, "resa,scnn_seq");
  b->add_option("--iterations", bench.config.iterations, "RESA iterations K");
  b->add_option("--warmup", bench.config.warmup, "untimed runs");
  b->add_option("--runs", bench.config.runs, "timed runs");
  b->add_option("--threads", bench.config.threads, "also time slice-parallel RESA with this many threads");
  b->add_option("--seed", bench.config.seed, "input seed");
  b->add_option("--out", bench_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return run_command(
      [&]() -> int {
        if (g->parsed()) {
          gen.difficulty = parse_difficulty(gen_difficulty);
          return cmd_gen(gen, std::cout);
        }
        if (t->parsed()) {
          if (!train_config.empty()) train.config = train_config;
          for (const auto& kv : train_sets) train.overrides.push_back(split_key_value(kv));
          if (train_seed) train.overrides.emplace_back("seed", std::to_string(*train_seed));
          return cmd_train(train, std::cout);
        }
        if (e->parsed()) {
          if (!eval_checkpoint.empty()) eval.checkpoint = eval_checkpoint;
          if (!eval_pred.empty()) eval.predictions = eval_pred;
          if (!eval_config.empty()) eval.config = eval_config;
          if (!eval_out.empty()) eval.out = eval_out;
          return cmd_eval(eval, std::cout);
        }
        if (inf->parsed()) {
          if (!infer_config.empty()) infer.config = infer_config;
          return cmd_infer(infer, std::cout);
        }
        if (gcs->parsed()) return cmd_gradcheck(gc, std::cout);
        if (ins->parsed()) {
          inspect.axis = inspect_axis.front();
          inspect.policy = inspect_policy == "pow2" ? StridePolicy::kPowersOfTwo : StridePolicy::kFloorDivision;
          return cmd_inspect(inspect, std::cout);
        }
        if (b->parsed()) {
          bench.config.widths.clear();
          for (const auto& w : split_commas(bench_widths)) bench.config.widths.push_back(std::stoll(w));
          bench.config.sizes.clear();
          for (const auto& s : split_commas(bench_sizes)) bench.config.sizes.push_back(parse_feature_size(s));
          bench.config.methods = split_commas(bench_methods);
          if (!bench_out.empty()) bench.out = bench_out;
          return cmd_bench(bench, std::cout);
        }
        return kExitUsage;
      },
      std::cerr);
}
