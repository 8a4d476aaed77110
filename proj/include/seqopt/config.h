// seqopt/config.h

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

#ifndef SEQOPT_CONFIG_H_
#define SEQOPT_CONFIG_H_

#include <string>

#include "seqopt/data.h"
#include "seqopt/loss.h"
#include "seqopt/optim.h"

namespace seqopt {

// Resolved experiment configuration.  Parsed from a plain key = value file;
// unknown keys are rejected and every run writes its resolved copy next to
// its metrics.
struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  std::string model_text;
  std::string init_checkpoint;
  double init_scale = 0.1;

  LossConfig loss;
  OptimizerConfig optim;
  std::string precondition_mode = "auto";  // auto | on | off

  int epochs = 1;
  uint64_t seed = 1;
  Precision precision = Precision::kFloat64;
  int workers = 1;
  int valid_every = 1;  // CG optimizers: updates between validation passes; 0 = epoch end

  SyntheticTaskConfig task;  // gen-data keys

  static RunConfig Load(const std::string &path);
  static RunConfig FromText(const std::string &text);
  std::string ToText() const;
  void Validate() const;
};

}  // namespace seqopt

#endif  // SEQOPT_CONFIG_H_
