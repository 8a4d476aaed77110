// seqopt/driver.h

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

#ifndef SEQOPT_DRIVER_H_
#define SEQOPT_DRIVER_H_

#include <string>
#include <vector>

#include "seqopt/config.h"
#include "seqopt/optim.h"

namespace seqopt {

struct TrainResult {
  ModelSpec spec;
  ParamVector params;  // final parameters
  std::vector<UpdateReport> reports;
  double best_valid_accuracy = 0.0;
  int best_epoch = -1;
  std::string best_checkpoint;
  std::string metrics_csv;
  std::string cg_trace_csv;
};

// Runs the configured training: writes resolved.cfg, metrics.csv,
// cg_trace.csv, per-epoch checkpoints and the best-on-validation marker
// into cfg.out_dir.
TrainResult TrainRun(const RunConfig &cfg);

// Evaluates a checkpoint on one dataset split and appends to <out>/eval.csv.
EvalMetrics EvalRun(const RunConfig &cfg, const std::string &checkpoint_path,
                    const std::string &split_dir);

// Generates the synthetic task into cfg.out_dir (deterministic per seed).
void GenDataRun(const RunConfig &cfg);

// Parses and validates lattice files; returns per-file record counts.
std::vector<int> LatticeCheckRun(const std::vector<std::string> &paths);

// CG micro-benchmarks: SPD spectra, damping sweeps, f32 stabilisation and
// shared-parameter preconditioning; writes <out>/cg_bench.csv.
void CgBenchRun(const RunConfig &cfg);

}  // namespace seqopt

#endif  // SEQOPT_DRIVER_H_
