// seqopt/cg.h

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

#ifndef SEQOPT_CG_H_
#define SEQOPT_CG_H_

#include <functional>
#include <limits>
#include <vector>

#include "seqopt/common.h"
#include "seqopt/model.h"

namespace seqopt {

struct CGConfig {
  int max_iters = 8;              // M
  double tikhonov_damping = 0.0;  // eta, adds eta*v to each product
  bool stabilize = true;
  bool precondition = true;       // divide r_0 and products by the share counts
  int eval_every = 1;

  void Validate() const {
    SEQOPT_CHECK(max_iters >= 1, "cg: max_iters must be >= 1");
    SEQOPT_CHECK(tikhonov_damping >= 0, "cg: damping must be >= 0");
    SEQOPT_CHECK(eval_every >= 1, "cg: eval_every must be >= 1");
  }
};

struct UpdateCandidate {
  ParamVector delta;  // proposed update at this iteration
  double quad_model = 0.0;
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
  int iteration = 0;  // 1-based
};

struct CgIterationTrace {
  int iteration = 0;
  double alpha = 0.0, beta = 0.0;
  double residual_norm = 0.0;
  double quad_model = 0.0;
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
};

struct CgResult {
  std::vector<UpdateCandidate> candidates;
  std::vector<CgIterationTrace> trace;
  int iterations = 0;
  bool negative_curvature = false;  // stopped on v.Bv <= 0
  bool non_finite = false;          // stopped on a non-finite intermediate
  bool fallback_direction = false;  // tripped before any iteration; candidate is r_0
};

using ApplyOp = std::function<ParamVector(const ParamVector &)>;
using EvalOp = std::function<double(const ParamVector &)>;

// Elementwise division by the share counts.
ParamVector Precondition(const ParamVector &vec, const ShareCounts &counts);

// Computes s = |theta| / |v| and returns (1/s) * apply(s * v); equal to
// apply(v) in exact arithmetic, but keeps the directional-derivative pass at
// the parameter scale.  |v| = 0 returns a zero vector.
ParamVector StabilizedProduct(const ApplyOp &apply_raw, const ParamVector &v,
                              const ParamVector &theta);
ParamVector StabilizedProductWithNorm(const ApplyOp &apply_raw, const ParamVector &v,
                                      double theta_norm);

// Linear CG on B delta = b with the curvature product supplied as a callback.
// b is the negated gradient (or the NG direction).  Records one candidate per
// iteration; stops early on negative curvature or non-finite values.
// theta_norm is used by the stabilised product; pass 0 to disable rescaling.
CgResult CgRun(const ParamVector &b, const ApplyOp &apply_b, const ShareCounts &counts,
               const CGConfig &cfg, double theta_norm);

struct SelectionResult {
  int index = -1;  // into candidates; -1 if all evaluations were non-finite
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
  int evaluations = 0;
  bool failed = false;
};

// Evaluates every eval_every-th candidate plus the last one and returns the
// minimiser; ties go to the earlier (smaller) candidate.
SelectionResult SelectUpdate(std::vector<UpdateCandidate> *candidates,
                             const EvalOp &evaluate, int eval_every);

}  // namespace seqopt

#endif  // SEQOPT_CG_H_
