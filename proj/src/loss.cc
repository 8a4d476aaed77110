// seqopt/loss.cc

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

#include "seqopt/loss.h"

#include <algorithm>
#include <cmath>

namespace seqopt {

LossKind LossKindFromName(const std::string &name) {
  if (name == "ce") return LossKind::kCrossEntropy;
  if (name == "mmi") return LossKind::kMmi;
  if (name == "mpe") return LossKind::kMpe;
  Fail("unknown loss kind '%s' (expected ce, mmi or mpe)", name.c_str());
}

const char *LossKindName(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kMmi: return "mmi";
    case LossKind::kMpe: return "mpe";
  }
  return "?";
}

std::vector<double> LossConfig::ResolveLogPriors(int num_states) const {
  if (log_priors.empty()) return std::vector<double>(num_states, 0.0);
  SEQOPT_CHECK(static_cast<int>(log_priors.size()) == num_states,
               "loss: prior vector size %zu != K %d", log_priors.size(), num_states);
  return log_priors;
}

Matrix<double> Softmax(const Matrix<double> &logits) {
  Matrix<double> y(logits.rows, logits.cols);
  for (int t = 0; t < logits.rows; t++) {
    const double *a = logits.Row(t);
    double mx = a[0];
    for (int k = 1; k < logits.cols; k++) mx = std::max(mx, a[k]);
    double sum = 0.0;
    for (int k = 0; k < logits.cols; k++) {
      y(t, k) = std::exp(a[k] - mx);
      sum += y(t, k);
    }
    for (int k = 0; k < logits.cols; k++) y(t, k) /= sum;
  }
  return y;
}

double CeLossAndGrad(const Matrix<double> &logits, const std::vector<int> &labels,
                     Matrix<double> *grad) {
  SEQOPT_CHECK(static_cast<int>(labels.size()) == logits.rows,
               "ce: %zu labels for %d frames", labels.size(), logits.rows);
  Matrix<double> y = Softmax(logits);
  if (grad) *grad = y;
  double loss = 0.0;
  for (int t = 0; t < logits.rows; t++) {
    const int lab = labels[t];
    SEQOPT_CHECK(lab >= 0 && lab < logits.cols, "ce: label %d out of range (K=%d)", lab,
                 logits.cols);
    loss -= std::log(std::max(y(t, lab), 1e-300));
    if (grad) (*grad)(t, lab) -= 1.0;
  }
  return loss;
}

OccupancyStats CeStats(const Matrix<double> &logits, const std::vector<int> &labels) {
  OccupancyStats stats;
  stats.gamma = Softmax(logits);
  stats.loss = CeLossAndGrad(logits, labels, &stats.output_grad);
  return stats;
}

namespace {

// gamma occupancies for both halves of the pair plus their difference.
void FillMmiOccupancies(const NumDenPair &pair, const Matrix<double> &logits,
                        const std::vector<double> &log_priors, double kappa,
                        OccupancyStats *stats, ForwardBackwardResult *fb_den,
                        std::vector<double> *den_scores) {
  const int T = logits.rows, K = logits.cols;
  const auto num_scores = ScoreArcs(pair.num, logits, log_priors, kappa);
  *den_scores = ScoreArcs(pair.den, logits, log_priors, kappa);
  const auto fb_num = ForwardBackward(pair.num, num_scores);
  *fb_den = ForwardBackward(pair.den, *den_scores);
  stats->gamma_num = FrameStateOccupancy(pair.num, fb_num.gamma, T, K);
  stats->gamma_den = FrameStateOccupancy(pair.den, fb_den->gamma, T, K);
  stats->gamma = stats->gamma_den;
  stats->gamma_mmi = Matrix<double>(T, K);
  for (size_t i = 0; i < stats->gamma_mmi.data.size(); i++)
    stats->gamma_mmi.data[i] = stats->gamma_num.data[i] - stats->gamma_den.data[i];
  stats->loss = -(fb_num.log_z - fb_den->log_z);
}

}  // namespace

OccupancyStats MmiLossAndOccupancy(const NumDenPair &pair, const Matrix<double> &logits,
                                   const LossConfig &cfg) {
  cfg.Validate();
  OccupancyStats stats;
  ForwardBackwardResult fb_den;
  std::vector<double> den_scores;
  FillMmiOccupancies(pair, logits, cfg.ResolveLogPriors(logits.cols), cfg.kappa, &stats,
                     &fb_den, &den_scores);
  stats.output_grad = Matrix<double>(logits.rows, logits.cols);
  for (size_t i = 0; i < stats.output_grad.data.size(); i++)
    stats.output_grad.data[i] = -cfg.kappa * stats.gamma_mmi.data[i];
  return stats;
}

OccupancyStats MpeLossAndOccupancy(const NumDenPair &pair, const Matrix<double> &logits,
                                   const LossConfig &cfg,
                                   const std::vector<TimedPhone> &reference) {
  cfg.Validate();
  const int T = logits.rows, K = logits.cols;
  OccupancyStats stats;
  ForwardBackwardResult fb_den;
  std::vector<double> den_scores;
  FillMmiOccupancies(pair, logits, cfg.ResolveLogPriors(K), cfg.kappa, &stats, &fb_den,
                     &den_scores);

  const std::vector<double> corr = ArcCorrectness(pair.den, reference);
  const MpeArcStats mpe = ComputeMpeStats(pair.den, fb_den, den_scores, corr);

  stats.gamma_mpe = Matrix<double>(T, K);
  for (int a = 0; a < pair.den.NumArcs(); a++) {
    const Arc &arc = pair.den.arcs[a];
    const double w = mpe.gamma_q[a] * (mpe.c_q[a] - mpe.c_avg);
    const int t0 = pair.den.ArcStartTime(a);
    for (size_t i = 0; i < arc.alignment.size(); i++)
      stats.gamma_mpe(t0 + static_cast<int>(i), arc.alignment[i]) += w;
  }
  stats.loss = -mpe.c_avg;
  stats.mpe_raw_accuracy = mpe.c_avg;
  stats.num_ref_phones =
      reference.empty() ? pair.num.NumArcs() : static_cast<int>(reference.size());
  stats.output_grad = Matrix<double>(T, K);
  for (size_t i = 0; i < stats.output_grad.data.size(); i++)
    stats.output_grad.data[i] = -cfg.kappa * stats.gamma_mpe.data[i];
  return stats;
}

template <typename Real>
Matrix<Real> CeOutputHessianProduct(const Matrix<double> &y, const Matrix<Real> &r) {
  SEQOPT_CHECK(y.rows == r.rows && y.cols == r.cols, "ce hessian product: shape mismatch");
  Matrix<Real> out(r.rows, r.cols);
  for (int t = 0; t < r.rows; t++) {
    Real dot = Real(0);
    for (int k = 0; k < r.cols; k++) dot += static_cast<Real>(y(t, k)) * r(t, k);
    for (int k = 0; k < r.cols; k++)
      out(t, k) = static_cast<Real>(y(t, k)) * (r(t, k) - dot);
  }
  return out;
}

template <typename Real>
Matrix<Real> MbrOutputHessianProduct(const Matrix<double> &gamma,
                                     const Matrix<double> &gamma_mpe, const Matrix<Real> &r,
                                     double kappa) {
  SEQOPT_CHECK(gamma.rows == r.rows && gamma.cols == r.cols &&
                   gamma_mpe.rows == r.rows && gamma_mpe.cols == r.cols,
               "mbr hessian product: shape mismatch");
  const Real k2 = static_cast<Real>(kappa * kappa);
  Matrix<Real> out(r.rows, r.cols);
  for (int t = 0; t < r.rows; t++) {
    Real dot = Real(0);
    for (int k = 0; k < r.cols; k++) dot += static_cast<Real>(gamma(t, k)) * r(t, k);
    for (int k = 0; k < r.cols; k++)
      out(t, k) = k2 * (static_cast<Real>(gamma(t, k)) * r(t, k) -
                        static_cast<Real>(gamma_mpe(t, k)) * dot);
  }
  return out;
}

template <typename Real>
Matrix<Real> FisherOutputProduct(const Matrix<double> &gamma_mmi, const Matrix<Real> &r,
                                 double kappa) {
  SEQOPT_CHECK(gamma_mmi.rows == r.rows && gamma_mmi.cols == r.cols,
               "fisher product: shape mismatch");
  const Real k2 = static_cast<Real>(kappa * kappa);
  Matrix<Real> out(r.rows, r.cols);
  for (int t = 0; t < r.rows; t++) {
    Real dot = Real(0);  // the per-frame scalar acting as a learning rate
    for (int k = 0; k < r.cols; k++) dot += static_cast<Real>(gamma_mmi(t, k)) * r(t, k);
    for (int k = 0; k < r.cols; k++)
      out(t, k) = k2 * static_cast<Real>(gamma_mmi(t, k)) * dot;
  }
  return out;
}

template Matrix<float> CeOutputHessianProduct<float>(const Matrix<double> &,
                                                     const Matrix<float> &);
template Matrix<double> CeOutputHessianProduct<double>(const Matrix<double> &,
                                                       const Matrix<double> &);
template Matrix<float> MbrOutputHessianProduct<float>(const Matrix<double> &,
                                                      const Matrix<double> &,
                                                      const Matrix<float> &, double);
template Matrix<double> MbrOutputHessianProduct<double>(const Matrix<double> &,
                                                        const Matrix<double> &,
                                                        const Matrix<double> &, double);
template Matrix<float> FisherOutputProduct<float>(const Matrix<double> &,
                                                  const Matrix<float> &, double);
template Matrix<double> FisherOutputProduct<double>(const Matrix<double> &,
                                                    const Matrix<double> &, double);

}  // namespace seqopt
