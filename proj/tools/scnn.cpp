#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "scnn/scnn.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Shortcut CNN training and verification"};
  app.require_subcommand(1);
  scnn::RunOptions opts;
  std::string config, data_dir, out, checkpoint, si;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    cmd->add_option("--si", si, "shortcut indicator bits, e.g. 010");
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out, "output directory");
  };
  auto* train = app.add_subcommand("train", "train one network, write history.csv and a checkpoint");
  common(train, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory (default <out>/checkpoint)");
  auto* sweep = app.add_subcommand("sweep", "train every listed SI and write sweep.csv");
  common(sweep, true);
  sweep->add_option("--jobs", opts.jobs, "concurrent trainings")->check(CLI::PositiveNumber);
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  common(grad, false);
  grad->add_option("--threshold", opts.threshold, "maximum relative error (default 1e-5)");
  grad->add_option("--epsilon", opts.epsilon, "finite-difference step (default 1e-5)");
  grad->add_flag("--inject-fault", opts.inject_fault, "corrupt the analytic gradient (self-test)");
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint's manifest and array stats");
  inspect->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
  for (auto* cmd : {train, eval, sweep}) {
    cmd->add_option("--data-dir", data_dir, std::string("dataset directory (fallback $") + scnn::kDataDirEnv + ")");
    cmd->add_flag("--deterministic", opts.deterministic, "fixed reduction order and single-job scheduling");
  }

  CLI11_PARSE(app, argc, argv);

  if (!config.empty()) opts.config = config;
  if (!data_dir.empty()) opts.data_dir = data_dir;
  if (!out.empty()) opts.out = out;
  if (!checkpoint.empty()) opts.checkpoint = checkpoint;
  if (!si.empty()) opts.si = si;
  for (auto* cmd : {train, eval, sweep, grad}) {
    if (cmd->count("--seed")) opts.seed = seed;
  }

  if (*train) return scnn::run_train(opts);
  if (*eval) return scnn::run_eval(opts);
  if (*sweep) return scnn::run_sweep(opts);
  if (*grad) return scnn::run_gradcheck(opts);
  return scnn::inspect_checkpoint(checkpoint);
}
