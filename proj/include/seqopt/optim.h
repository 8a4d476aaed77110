// seqopt/optim.h

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

#ifndef SEQOPT_OPTIM_H_
#define SEQOPT_OPTIM_H_

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "seqopt/cg.h"
#include "seqopt/data.h"
#include "seqopt/loss.h"
#include "seqopt/model.h"

namespace seqopt {

enum class OptimizerKind { kSgd, kAdam, kHf, kNg, kNghf };

OptimizerKind OptimizerKindFromName(const std::string &name);
const char *OptimizerKindName(OptimizerKind kind);
bool IsCgOptimizer(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  // SGD
  double learning_rate = 0.1;
  double momentum = 0.0;
  // Adam
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  // NG / NGHF
  double lambda = 1.0;     // scale on the Fisher system
  int inner_ng_iters = 4;  // K1; 0 makes NGHF identical to HF
  CGConfig cg;
  int gradient_batch_size = 1;  // SGD/Adam mini-batch; CG batch-count fallback
  int cg_batch_size = 16;
  int updates_per_epoch = 8;  // C; 0 derives it from gradient_batch_size
  bool select_on_valid = false;

  void Validate() const;
  void CheckLossSupported(LossKind loss) const;
};

struct UpdateReport {
  int update_index = 0;
  int epoch = 0;
  double grad_batch_loss_before = 0.0;
  double grad_batch_loss_after = std::numeric_limits<double>::quiet_NaN();
  double cg_batch_loss_before = std::numeric_limits<double>::quiet_NaN();
  double cg_batch_loss_after = std::numeric_limits<double>::quiet_NaN();
  int cg_iterations = 0;
  int chosen_candidate = 0;  // 1-based candidate iteration; 0 = none applied
  bool failed = false;
  bool negative_curvature = false;
  bool fallback_to_gradient = false;  // NGHF inner solve failed
  double ng_projection = 0.0;         // |delta . d_ng| / |d_ng|
  double valid_metric = std::numeric_limits<double>::quiet_NaN();
  int skipped_utterances = 0;
  // Stage costs: _ms_grad/_ms_cg are driver wall times, the rest are summed
  // worker time per stage.
  double wall_ms_grad = 0.0, wall_ms_cg = 0.0;
  double wall_ms_rfwd = 0.0, wall_ms_ebp = 0.0, wall_ms_eval = 0.0, wall_ms_stats = 0.0;
  std::vector<CgIterationTrace> cg_trace;
};

// theta <- theta - lr * (momentum-smoothed grad); velocity owned by the caller.
ParamVector SgdUpdate(const ParamVector &params, const ParamVector &grad,
                      const OptimizerConfig &cfg, ParamVector *velocity);

struct AdamState {
  ParamVector m, v;
  int t = 0;
};

ParamVector AdamUpdate(const ParamVector &params, const ParamVector &grad,
                       const OptimizerConfig &cfg, AdamState *state);

struct GradientResult {
  ParamVector grad;       // mean over utterances
  double mean_loss = 0.0;
  int used = 0;
  int skipped = 0;
};

// Average of per-utterance EBP gradients over the batch, fanned out over the
// worker pool and reduced in utterance order.
GradientResult AccumulateGradient(const Network &net, const ParamVector &params,
                                  const std::vector<const Utterance *> &batch,
                                  const LossConfig &loss, bool normalize_by_share,
                                  int num_workers);

double MeanLoss(const Network &net, const ParamVector &params,
                const std::vector<const Utterance *> &batch, const LossConfig &loss,
                int num_workers);

// Tapes and occupancies of a CG batch at fixed parameters, with the curvature
// products and candidate evaluation the CG stage needs.
class CgBatchContext {
 public:
  CgBatchContext(const Network &net, const ParamVector &params,
                 std::vector<const Utterance *> utts, const LossConfig &loss,
                 int num_workers);

  // Mean Gauss-Newton product over the batch (MBR or CE output curvature).
  ParamVector ApplyGaussNewton(const ParamVector &v) const;
  // Mean empirical-Fisher product over the batch (MMI occupancies).
  ParamVector ApplyFisher(const ParamVector &v) const;
  // Mean batch loss at params + delta; NaN if any utterance diverges.
  double EvalDelta(const ParamVector &delta) const;

  double BaselineLoss() const { return baseline_loss_; }
  double StatsMs() const { return ns_stats_ * 1e-6; }
  double RfwdMs() const { return ns_rfwd_.load() * 1e-6; }
  double EbpMs() const { return ns_ebp_.load() * 1e-6; }
  double EvalMs() const { return ns_eval_.load() * 1e-6; }

 private:
  const Network &net_;
  const ParamVector &params_;
  std::vector<const Utterance *> utts_;
  LossConfig loss_;
  int num_workers_;
  std::vector<ActivationTape<float>> tapes32_;
  std::vector<ActivationTape<double>> tapes64_;
  std::vector<OccupancyStats> stats_;
  double baseline_loss_ = 0.0;
  int64_t ns_stats_ = 0;
  mutable std::atomic<int64_t> ns_rfwd_{0}, ns_ebp_{0}, ns_eval_{0};
};

// One full HF/NG/NGHF update: gradient stage, CG stage, candidate selection,
// and the parameter step if the best candidate does not lose to delta = 0.
UpdateReport RunCgUpdate(const Network &net, ParamVector *params,
                         const std::vector<const Utterance *> &grad_batch,
                         const std::vector<const Utterance *> &cg_batch,
                         const LossConfig &loss, const OptimizerConfig &cfg,
                         int num_workers, const Dataset *valid_for_selection = nullptr);

struct EpochState {
  ParamVector sgd_velocity;
  AdamState adam;
  int updates_done = 0;
};

// Called after every applied update with the fresh report and parameters.
using UpdateCallback = std::function<void(UpdateReport *, const ParamVector &)>;

// Shuffles (seeded), partitions into gradient batches, samples one CG batch
// per update from the whole set, and applies the configured update.  SGD and
// Adam iterate over mini-batches instead.
std::vector<UpdateReport> RunEpoch(const Network &net, ParamVector *params,
                                   const Dataset &train, const LossConfig &loss,
                                   const OptimizerConfig &cfg, int epoch, uint64_t seed,
                                   int num_workers, EpochState *state,
                                   const Dataset *valid_for_selection = nullptr,
                                   const UpdateCallback &on_update = {});

struct EvalMetrics {
  double mean_loss = 0.0;
  double mpe_accuracy = 0.0;  // c_avg / reference phone count, averaged
  double frame_error = 0.0;
  int utterances = 0;
};

EvalMetrics EvalDataset(const Network &net, const ParamVector &params, const Dataset &data,
                        const LossConfig &loss, int num_workers);

}  // namespace seqopt

#endif  // SEQOPT_OPTIM_H_
