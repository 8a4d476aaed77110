// tools/seqopt.cc

// Copyright 2026  The seqopt authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqopt/driver.h"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string precision;
  long long seed = -1;
  int workers = 0;
};

void AddCommonOptions(CLI::App *cmd, CommonArgs *args, bool config_required) {
  auto *opt = cmd->add_option("--config", args->config_path, "run configuration file");
  if (config_required) opt->required();
  cmd->add_option("--out", args->out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args->seed, "random seed (overrides config)");
  cmd->add_option("--workers", args->workers, "worker count (overrides config)");
  cmd->add_option("--precision", args->precision, "f32 or f64 (overrides config)")
      ->check(CLI::IsMember({"f32", "f64"}));
}

seqopt::RunConfig ResolveConfig(const CommonArgs &args) {
  seqopt::RunConfig cfg = args.config_path.empty()
                              ? seqopt::RunConfig()
                              : seqopt::RunConfig::Load(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
  if (args.workers > 0) cfg.workers = args.workers;
  if (!args.precision.empty()) cfg.precision = seqopt::PrecisionFromName(args.precision);
  return cfg;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"seqopt: CG-based sequence-discriminative training toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, bench_args;
  std::string eval_checkpoint, eval_split;
  std::vector<std::string> lattice_files;

  CLI::App *gen = app.add_subcommand("gen-data", "generate a synthetic task");
  AddCommonOptions(gen, &gen_args, /*config_required=*/false);

  CLI::App *train = app.add_subcommand("train", "run training");
  AddCommonOptions(train, &train_args, /*config_required=*/true);

  CLI::App *eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  AddCommonOptions(eval, &eval_args, /*config_required=*/false);
  eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
  eval->add_option("--split", eval_split, "dataset split directory")->required();

  CLI::App *check = app.add_subcommand("lattice-check", "parse and validate lattice files");
  check->add_option("files", lattice_files, "lattice files")->required();

  CLI::App *bench = app.add_subcommand("cg-bench", "CG micro-benchmarks");
  AddCommonOptions(bench, &bench_args, /*config_required=*/false);

  std::string command = "?";
  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      command = "gen-data";
      seqopt::GenDataRun(ResolveConfig(gen_args));
      std::printf("gen-data: wrote dataset\n");
    } else if (train->parsed()) {
      command = "train";
      seqopt::TrainResult res = seqopt::TrainRun(ResolveConfig(train_args));
      std::printf("train: %zu updates, metrics in %s\n", res.reports.size(),
                  res.metrics_csv.c_str());
      if (res.best_epoch >= 0)
        std::printf("train: best epoch %d (valid MPE accuracy %.6f) -> %s\n",
                    res.best_epoch, res.best_valid_accuracy,
                    res.best_checkpoint.c_str());
    } else if (eval->parsed()) {
      command = "eval";
      seqopt::EvalMetrics m =
          seqopt::EvalRun(ResolveConfig(eval_args), eval_checkpoint, eval_split);
      std::printf("eval: split=%s utts=%d mean_loss=%.6f mpe_accuracy=%.6f frame_error=%.6f\n",
                  eval_split.c_str(), m.utterances, m.mean_loss, m.mpe_accuracy,
                  m.frame_error);
    } else if (check->parsed()) {
      command = "lattice-check";
      std::vector<int> counts = seqopt::LatticeCheckRun(lattice_files);
      for (size_t i = 0; i < lattice_files.size(); i++)
        std::printf("lattice-check: %s: %d lattices ok\n", lattice_files[i].c_str(),
                    counts[i]);
    } else if (bench->parsed()) {
      command = "cg-bench";
      seqopt::CgBenchRun(ResolveConfig(bench_args));
      std::printf("cg-bench: wrote cg_bench.csv\n");
    }
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  } catch (const std::exception &e) {
    nlohmann::json err = {{"error", {{"command", command}, {"message", e.what()}}}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
