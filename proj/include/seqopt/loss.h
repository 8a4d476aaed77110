// seqopt/loss.h

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

#ifndef SEQOPT_LOSS_H_
#define SEQOPT_LOSS_H_

#include <string>
#include <vector>

#include "seqopt/common.h"
#include "seqopt/lattice.h"

namespace seqopt {

enum class LossKind { kCrossEntropy, kMmi, kMpe };

LossKind LossKindFromName(const std::string &name);
const char *LossKindName(LossKind kind);

struct LossConfig {
  LossKind kind = LossKind::kCrossEntropy;
  double kappa = 1.0;              // acoustic scale, > 0
  std::vector<double> log_priors;  // empty = uniform (all zeros)

  std::vector<double> ResolveLogPriors(int num_states) const;
  void Validate() const { SEQOPT_CHECK(kappa > 0, "loss: kappa must be > 0"); }
};

// Per-utterance occupancies and loss.  gamma is the model posterior used by
// the curvature products: the softmax output for CE, the denominator-lattice
// state posterior for the sequence losses.
struct OccupancyStats {
  Matrix<double> gamma;
  Matrix<double> gamma_num, gamma_den, gamma_mmi;  // sequence losses
  Matrix<double> gamma_mpe;                        // MPE only
  Matrix<double> output_grad;                      // dL/d(logits) per frame
  double loss = 0.0;
  double mpe_raw_accuracy = 0.0;  // c_avg
  int num_ref_phones = 0;
};

Matrix<double> Softmax(const Matrix<double> &logits);

// loss = -sum_t log softmax(a_t)[label_t]; grad_t = softmax(a_t) - onehot.
double CeLossAndGrad(const Matrix<double> &logits, const std::vector<int> &labels,
                     Matrix<double> *grad);

OccupancyStats CeStats(const Matrix<double> &logits, const std::vector<int> &labels);

// loss = -(logZ_num - logZ_den); output gradient -kappa * gamma_mmi.
OccupancyStats MmiLossAndOccupancy(const NumDenPair &pair, const Matrix<double> &logits,
                                   const LossConfig &cfg);

// loss = -c_avg (expected phone inaccuracy); output gradient -kappa * gamma_mpe.
// The reference is used for arc correctness when the lattice does not carry it.
OccupancyStats MpeLossAndOccupancy(const NumDenPair &pair, const Matrix<double> &logits,
                                   const LossConfig &cfg,
                                   const std::vector<TimedPhone> &reference);

// Softmax+CE output Hessian product: y.R - y (y.R summed), per frame.
template <typename Real>
Matrix<Real> CeOutputHessianProduct(const Matrix<double> &y, const Matrix<Real> &r);

// MBR output curvature product, per frame:
//   kappa^2 gamma.R - kappa^2 gamma_mpe (gamma.R summed over the frame).
template <typename Real>
Matrix<Real> MbrOutputHessianProduct(const Matrix<double> &gamma,
                                     const Matrix<double> &gamma_mpe, const Matrix<Real> &r,
                                     double kappa);

// Empirical-Fisher output product, per frame:
//   kappa^2 gamma_mmi (gamma_mmi . R), the inner product taken over the frame.
template <typename Real>
Matrix<Real> FisherOutputProduct(const Matrix<double> &gamma_mmi, const Matrix<Real> &r,
                                 double kappa);

}  // namespace seqopt

#endif  // SEQOPT_LOSS_H_
