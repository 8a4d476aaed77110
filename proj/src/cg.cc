// seqopt/cg.cc

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

#include "seqopt/cg.h"

#include <cmath>

namespace seqopt {

ParamVector Precondition(const ParamVector &vec, const ShareCounts &counts) {
  SEQOPT_CHECK(vec.Dim() == counts.counts.size(), "precondition: dim mismatch %zu vs %zu",
               vec.Dim(), counts.counts.size());
  ParamVector out = vec;
  for (size_t i = 0; i < out.Dim(); i++) out.data[i] /= counts.counts[i];
  return out;
}

ParamVector StabilizedProductWithNorm(const ApplyOp &apply_raw, const ParamVector &v,
                                      double theta_norm) {
  const double vnorm = Norm2(v);
  if (vnorm == 0.0) return ParamVector(v.Dim(), v.prec);
  const double s = theta_norm / vnorm;
  ParamVector scaled = v;
  Scale(s, &scaled);
  ParamVector out = apply_raw(scaled);
  Scale(1.0 / s, &out);
  return out;
}

ParamVector StabilizedProduct(const ApplyOp &apply_raw, const ParamVector &v,
                              const ParamVector &theta) {
  return StabilizedProductWithNorm(apply_raw, v, Norm2(theta));
}

CgResult CgRun(const ParamVector &b, const ApplyOp &apply_b, const ShareCounts &counts,
               const CGConfig &cfg, double theta_norm) {
  cfg.Validate();
  SEQOPT_CHECK(b.AllFinite(), "cg: right-hand side has non-finite entries");
  const size_t dim = b.Dim();
  const bool precond = cfg.precondition && counts.counts.size() == dim;

  CgResult res;
  ParamVector r = precond ? Precondition(b, counts) : b;
  const ParamVector r0 = r;
  ParamVector v = r;
  ParamVector delta(dim, b.prec);
  ParamVector b_delta(dim, b.prec);  // accumulated (effective) B * delta

  auto product = [&](const ParamVector &dir) {
    ParamVector p = cfg.stabilize && theta_norm > 0.0
                        ? StabilizedProductWithNorm(apply_b, dir, theta_norm)
                        : apply_b(dir);
    if (precond) p = Precondition(p, counts);
    if (cfg.tikhonov_damping > 0.0) Axpy(cfg.tikhonov_damping, dir, &p);
    return p;
  };

  double rr = Dot(r, r);
  for (int m = 0; m < cfg.max_iters; m++) {
    if (rr == 0.0) break;  // solved exactly
    ParamVector p = product(v);
    if (!p.AllFinite()) {
      res.non_finite = true;
      break;
    }
    const double vbv = Dot(v, p);
    if (vbv <= 0.0 || !std::isfinite(vbv)) {
      res.negative_curvature = true;
      if (m == 0) {
        // No usable curvature at all: fall back to the (preconditioned)
        // gradient direction so the caller still has a candidate to evaluate.
        UpdateCandidate cand;
        cand.delta = r0;
        cand.quad_model = 0.5 * Dot(r0, p) - Dot(r0, r0);
        cand.iteration = 1;
        res.candidates.push_back(std::move(cand));
        res.fallback_direction = true;
      }
      break;
    }
    const double alpha = rr / vbv;
    Axpy(alpha, v, &delta);
    Axpy(alpha, p, &b_delta);
    Axpy(-alpha, p, &r);
    const double rr_new = Dot(r, r);
    const double beta = rr_new / rr;
    if (!delta.AllFinite() || !std::isfinite(rr_new)) {
      res.non_finite = true;
      break;
    }
    const double quad = 0.5 * Dot(delta, b_delta) - Dot(delta, r0);

    UpdateCandidate cand;
    cand.delta = delta;
    cand.quad_model = quad;
    cand.iteration = m + 1;
    res.candidates.push_back(std::move(cand));

    CgIterationTrace tr;
    tr.iteration = m + 1;
    tr.alpha = alpha;
    tr.beta = beta;
    tr.residual_norm = std::sqrt(rr_new);
    tr.quad_model = quad;
    res.trace.push_back(tr);

    for (size_t i = 0; i < dim; i++) v.data[i] = r.data[i] + beta * v.data[i];
    rr = rr_new;
  }
  res.iterations = static_cast<int>(res.candidates.size());
  return res;
}

SelectionResult SelectUpdate(std::vector<UpdateCandidate> *candidates,
                             const EvalOp &evaluate, int eval_every) {
  SEQOPT_CHECK(!candidates->empty(), "select_update: no candidates");
  SEQOPT_CHECK(eval_every >= 1, "select_update: eval_every must be >= 1");
  SelectionResult sel;
  const int n = static_cast<int>(candidates->size());
  for (int i = 0; i < n; i++) {
    const bool scheduled = i % eval_every == 0 || i == n - 1;
    if (!scheduled) continue;
    UpdateCandidate &cand = (*candidates)[i];
    cand.eval_loss = evaluate(cand.delta);
    sel.evaluations++;
    if (std::isfinite(cand.eval_loss) &&
        (sel.index < 0 || cand.eval_loss < sel.eval_loss)) {
      sel.index = i;
      sel.eval_loss = cand.eval_loss;
    }
  }
  sel.failed = sel.index < 0;
  return sel;
}

}  // namespace seqopt
