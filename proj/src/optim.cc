// seqopt/optim.cc

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

#include "seqopt/optim.h"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "seqopt/distrib.h"

namespace seqopt {

namespace {

using Clock = std::chrono::steady_clock;

int64_t ElapsedNs(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
}

double ElapsedMs(Clock::time_point t0) { return ElapsedNs(t0) * 1e-6; }

OccupancyStats StatsFromLogits(const Utterance &utt, const LossConfig &loss,
                               const Matrix<double> &logits) {
  switch (loss.kind) {
    case LossKind::kCrossEntropy:
      return CeStats(logits, utt.frame_labels);
    case LossKind::kMmi:
      return MmiLossAndOccupancy(utt.lattices, logits, loss);
    case LossKind::kMpe:
      return MpeLossAndOccupancy(utt.lattices, logits, loss, utt.reference);
  }
  Fail("unknown loss kind");
}

Matrix<double> ForwardLogits(const Network &net, const ParamVector &params,
                             const Utterance &utt) {
  if (params.prec == Precision::kFloat32) {
    auto tape = net.Forward<float>(params, utt.features);
    return CastMatrix<double>(tape.Logits());
  }
  auto tape = net.Forward<double>(params, utt.features);
  return tape.Logits();
}

}  // namespace

OptimizerKind OptimizerKindFromName(const std::string &name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "hf") return OptimizerKind::kHf;
  if (name == "ng") return OptimizerKind::kNg;
  if (name == "nghf") return OptimizerKind::kNghf;
  Fail("unknown optimizer '%s' (expected sgd, adam, hf, ng or nghf)", name.c_str());
}

const char *OptimizerKindName(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kHf: return "hf";
    case OptimizerKind::kNg: return "ng";
    case OptimizerKind::kNghf: return "nghf";
  }
  return "?";
}

bool IsCgOptimizer(OptimizerKind kind) {
  return kind == OptimizerKind::kHf || kind == OptimizerKind::kNg ||
         kind == OptimizerKind::kNghf;
}

void OptimizerConfig::Validate() const {
  cg.Validate();
  SEQOPT_CHECK(gradient_batch_size >= 1, "optim: gradient_batch_size must be >= 1");
  SEQOPT_CHECK(cg_batch_size >= 1, "optim: cg_batch_size must be >= 1");
  SEQOPT_CHECK(updates_per_epoch >= 0, "optim: updates_per_epoch must be >= 0");
  SEQOPT_CHECK(inner_ng_iters >= 0, "optim: inner_ng_iters must be >= 0");
  SEQOPT_CHECK(lambda > 0, "optim: lambda must be > 0");
}

void OptimizerConfig::CheckLossSupported(LossKind loss) const {
  if ((kind == OptimizerKind::kHf || kind == OptimizerKind::kNghf) && loss == LossKind::kMmi)
    Fail("optimizer %s needs a CE or MPE loss (no output curvature is defined for MMI)",
         OptimizerKindName(kind));
  if ((kind == OptimizerKind::kNg || kind == OptimizerKind::kNghf) &&
      loss == LossKind::kCrossEntropy)
    Fail("optimizer %s needs lattice occupancies for the Fisher; use mmi or mpe",
         OptimizerKindName(kind));
}

ParamVector SgdUpdate(const ParamVector &params, const ParamVector &grad,
                      const OptimizerConfig &cfg, ParamVector *velocity) {
  SEQOPT_CHECK(params.Dim() == grad.Dim(), "sgd: dim mismatch");
  if (velocity->Dim() == 0) *velocity = ParamVector(params.Dim(), params.prec);
  ParamVector next = params;
  for (size_t i = 0; i < params.Dim(); i++) {
    velocity->data[i] = cfg.momentum * velocity->data[i] + grad.data[i];
    next.data[i] -= cfg.learning_rate * velocity->data[i];
  }
  return next;
}

ParamVector AdamUpdate(const ParamVector &params, const ParamVector &grad,
                       const OptimizerConfig &cfg, AdamState *state) {
  SEQOPT_CHECK(params.Dim() == grad.Dim(), "adam: dim mismatch");
  if (state->m.Dim() == 0) {
    state->m = ParamVector(params.Dim(), params.prec);
    state->v = ParamVector(params.Dim(), params.prec);
    state->t = 0;
  }
  state->t++;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state->t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state->t);
  ParamVector next = params;
  for (size_t i = 0; i < params.Dim(); i++) {
    state->m.data[i] = cfg.beta1 * state->m.data[i] + (1.0 - cfg.beta1) * grad.data[i];
    state->v.data[i] =
        cfg.beta2 * state->v.data[i] + (1.0 - cfg.beta2) * grad.data[i] * grad.data[i];
    const double mhat = state->m.data[i] / bc1;
    const double vhat = state->v.data[i] / bc2;
    next.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
  return next;
}

GradientResult AccumulateGradient(const Network &net, const ParamVector &params,
                                  const std::vector<const Utterance *> &batch,
                                  const LossConfig &loss, bool normalize_by_share,
                                  int num_workers) {
  SEQOPT_CHECK(!batch.empty(), "accumulate_gradient: empty batch");
  struct Partial {
    ParamVector grad;
    double loss_sum = 0.0;
  };
  auto map_fn = [&](int i) {
    const Utterance &utt = *batch[i];
    Partial part;
    if (params.prec == Precision::kFloat32) {
      auto tape = net.Forward<float>(params, utt.features);
      OccupancyStats stats = StatsFromLogits(utt, loss, CastMatrix<double>(tape.Logits()));
      part.grad = net.Backprop<float>(params, tape, CastMatrix<float>(stats.output_grad),
                                      normalize_by_share);
      part.loss_sum = stats.loss;
    } else {
      auto tape = net.Forward<double>(params, utt.features);
      OccupancyStats stats = StatsFromLogits(utt, loss, tape.Logits());
      part.grad = net.Backprop<double>(params, tape, stats.output_grad, normalize_by_share);
      part.loss_sum = stats.loss;
    }
    return part;
  };
  auto combine = [](Partial *acc, Partial &&p) {
    Axpy(1.0, p.grad, &acc->grad);
    acc->loss_sum += p.loss_sum;
  };
  auto out = MapReduce<Partial>(static_cast<int>(batch.size()), map_fn, combine, num_workers);
  GradientResult res;
  res.used = out.items_done;
  res.skipped = static_cast<int>(out.failures.size());
  SEQOPT_CHECK(res.used > 0, "accumulate_gradient: every utterance failed (first: %s)",
               out.failures.empty() ? "?" : out.failures.front().message.c_str());
  res.grad = std::move(out.total->grad);
  Scale(1.0 / res.used, &res.grad);
  res.mean_loss = out.total->loss_sum / res.used;
  return res;
}

double MeanLoss(const Network &net, const ParamVector &params,
                const std::vector<const Utterance *> &batch, const LossConfig &loss,
                int num_workers) {
  SEQOPT_CHECK(!batch.empty(), "mean_loss: empty batch");
  auto map_fn = [&](int i) {
    return StatsFromLogits(*batch[i], loss, ForwardLogits(net, params, *batch[i])).loss;
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out = MapReduce<double>(static_cast<int>(batch.size()), map_fn, combine, num_workers);
  if (!out.failures.empty() || out.items_done == 0)
    return std::numeric_limits<double>::quiet_NaN();
  return *out.total / out.items_done;
}

// ---------------------------------------------------------------------------
// CgBatchContext
// ---------------------------------------------------------------------------

CgBatchContext::CgBatchContext(const Network &net, const ParamVector &params,
                               std::vector<const Utterance *> utts, const LossConfig &loss,
                               int num_workers)
    : net_(net), params_(params), utts_(std::move(utts)), loss_(loss),
      num_workers_(num_workers) {
  SEQOPT_CHECK(!utts_.empty(), "cg batch: empty");
  const auto t0 = Clock::now();
  const int n = static_cast<int>(utts_.size());
  stats_.resize(n);
  if (params_.prec == Precision::kFloat32)
    tapes32_.resize(n);
  else
    tapes64_.resize(n);
  auto map_fn = [&](int i) {
    const Utterance &utt = *utts_[i];
    Matrix<double> logits;
    if (params_.prec == Precision::kFloat32) {
      tapes32_[i] = net_.Forward<float>(params_, utt.features);
      logits = CastMatrix<double>(tapes32_[i].Logits());
    } else {
      tapes64_[i] = net_.Forward<double>(params_, utt.features);
      logits = tapes64_[i].Logits();
    }
    stats_[i] = StatsFromLogits(utt, loss_, logits);
    return stats_[i].loss;
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out = MapReduce<double>(n, map_fn, combine, num_workers_);
  SEQOPT_CHECK(out.failures.empty(), "cg batch: utterance '%s' failed: %s",
               utts_[out.failures.front().index]->utt_id.c_str(),
               out.failures.front().message.c_str());
  baseline_loss_ = *out.total / n;
  ns_stats_ = ElapsedNs(t0);
}

ParamVector CgBatchContext::ApplyGaussNewton(const ParamVector &v) const {
  auto map_fn = [&](int i) {
    const OccupancyStats &st = stats_[i];
    if (params_.prec == Precision::kFloat32) {
      const auto &tape = tapes32_[i];
      const auto tr = Clock::now();
      Matrix<float> r = net_.RForward<float>(params_, tape, v);
      ns_rfwd_.fetch_add(ElapsedNs(tr), std::memory_order_relaxed);
      Matrix<float> hr = loss_.kind == LossKind::kCrossEntropy
                             ? CeOutputHessianProduct<float>(st.gamma, r)
                             : MbrOutputHessianProduct<float>(st.gamma, st.gamma_mpe, r,
                                                              loss_.kappa);
      const auto te = Clock::now();
      ParamVector gv = net_.Backprop<float>(params_, tape, hr, false);
      ns_ebp_.fetch_add(ElapsedNs(te), std::memory_order_relaxed);
      return gv;
    }
    const auto &tape = tapes64_[i];
    const auto tr = Clock::now();
    Matrix<double> r = net_.RForward<double>(params_, tape, v);
    ns_rfwd_.fetch_add(ElapsedNs(tr), std::memory_order_relaxed);
    Matrix<double> hr = loss_.kind == LossKind::kCrossEntropy
                            ? CeOutputHessianProduct<double>(st.gamma, r)
                            : MbrOutputHessianProduct<double>(st.gamma, st.gamma_mpe, r,
                                                              loss_.kappa);
    const auto te = Clock::now();
    ParamVector gv = net_.Backprop<double>(params_, tape, hr, false);
    ns_ebp_.fetch_add(ElapsedNs(te), std::memory_order_relaxed);
    return gv;
  };
  auto combine = [](ParamVector *acc, ParamVector &&p) { Axpy(1.0, p, acc); };
  auto out =
      MapReduce<ParamVector>(static_cast<int>(utts_.size()), map_fn, combine, num_workers_);
  SEQOPT_CHECK(out.failures.empty() && out.items_done > 0,
               "curvature product failed on an utterance");
  Scale(1.0 / out.items_done, &*out.total);
  return std::move(*out.total);
}

ParamVector CgBatchContext::ApplyFisher(const ParamVector &v) const {
  auto map_fn = [&](int i) {
    const OccupancyStats &st = stats_[i];
    if (params_.prec == Precision::kFloat32) {
      const auto &tape = tapes32_[i];
      const auto tr = Clock::now();
      Matrix<float> r = net_.RForward<float>(params_, tape, v);
      ns_rfwd_.fetch_add(ElapsedNs(tr), std::memory_order_relaxed);
      Matrix<float> fr = FisherOutputProduct<float>(st.gamma_mmi, r, loss_.kappa);
      const auto te = Clock::now();
      ParamVector fv = net_.Backprop<float>(params_, tape, fr, false);
      ns_ebp_.fetch_add(ElapsedNs(te), std::memory_order_relaxed);
      return fv;
    }
    const auto &tape = tapes64_[i];
    const auto tr = Clock::now();
    Matrix<double> r = net_.RForward<double>(params_, tape, v);
    ns_rfwd_.fetch_add(ElapsedNs(tr), std::memory_order_relaxed);
    Matrix<double> fr = FisherOutputProduct<double>(st.gamma_mmi, r, loss_.kappa);
    const auto te = Clock::now();
    ParamVector fv = net_.Backprop<double>(params_, tape, fr, false);
    ns_ebp_.fetch_add(ElapsedNs(te), std::memory_order_relaxed);
    return fv;
  };
  auto combine = [](ParamVector *acc, ParamVector &&p) { Axpy(1.0, p, acc); };
  auto out =
      MapReduce<ParamVector>(static_cast<int>(utts_.size()), map_fn, combine, num_workers_);
  SEQOPT_CHECK(out.failures.empty() && out.items_done > 0,
               "fisher product failed on an utterance");
  Scale(1.0 / out.items_done, &*out.total);
  return std::move(*out.total);
}

double CgBatchContext::EvalDelta(const ParamVector &delta) const {
  ParamVector cand = params_;
  Axpy(1.0, delta, &cand);
  const auto t0 = Clock::now();
  auto map_fn = [&](int i) {
    return StatsFromLogits(*utts_[i], loss_, ForwardLogits(net_, cand, *utts_[i])).loss;
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out =
      MapReduce<double>(static_cast<int>(utts_.size()), map_fn, combine, num_workers_);
  ns_eval_.fetch_add(ElapsedNs(t0), std::memory_order_relaxed);
  if (!out.failures.empty() || out.items_done == 0)
    return std::numeric_limits<double>::quiet_NaN();
  return *out.total / out.items_done;
}

// ---------------------------------------------------------------------------
// HF / NG / NGHF update
// ---------------------------------------------------------------------------

UpdateReport RunCgUpdate(const Network &net, ParamVector *params,
                         const std::vector<const Utterance *> &grad_batch,
                         const std::vector<const Utterance *> &cg_batch,
                         const LossConfig &loss, const OptimizerConfig &cfg,
                         int num_workers, const Dataset *valid_for_selection) {
  cfg.Validate();
  cfg.CheckLossSupported(loss.kind);
  UpdateReport report;

  // Gradient accumulation stage.
  auto t_grad = Clock::now();
  GradientResult gr =
      AccumulateGradient(net, *params, grad_batch, loss, /*normalize_by_share=*/false,
                         num_workers);
  report.grad_batch_loss_before = gr.mean_loss;
  report.skipped_utterances = gr.skipped;
  report.wall_ms_grad = ElapsedMs(t_grad);
  if (gr.skipped * 10 > static_cast<int>(grad_batch.size())) {
    report.failed = true;  // more than 10% of the batch failed validation
    return report;
  }
  ParamVector b = gr.grad;
  Scale(-1.0, &b);

  // CG stage.
  auto t_cg = Clock::now();
  CgBatchContext ctx(net, *params, cg_batch, loss, num_workers);
  const ShareCounts &counts = net.GetShareCounts();
  const double theta_norm = Norm2(*params);

  ApplyOp gn_op = [&](const ParamVector &v) { return ctx.ApplyGaussNewton(v); };
  ApplyOp fisher_op = [&](const ParamVector &v) {
    ParamVector fv = ctx.ApplyFisher(v);
    Scale(cfg.lambda, &fv);
    return fv;
  };

  ParamVector b_outer = b;
  ParamVector d_ng;
  if (cfg.kind == OptimizerKind::kNghf && cfg.inner_ng_iters > 0) {
    CGConfig inner_cfg = cfg.cg;
    inner_cfg.max_iters = cfg.inner_ng_iters;
    CgResult inner = CgRun(b, fisher_op, counts, inner_cfg, theta_norm);
    if (inner.candidates.empty() || inner.fallback_direction) {
      report.fallback_to_gradient = true;  // degrade to HF
    } else {
      d_ng = inner.candidates.back().delta;
      b_outer = d_ng;
    }
  }

  ApplyOp outer_op = cfg.kind == OptimizerKind::kNg ? fisher_op : gn_op;
  CgResult outer = CgRun(b_outer, outer_op, counts, cfg.cg, theta_norm);
  report.negative_curvature = outer.negative_curvature;
  report.cg_iterations = outer.iterations;
  if (outer.candidates.empty()) {
    report.failed = true;
    report.wall_ms_cg = ElapsedMs(t_cg);
    return report;
  }

  std::vector<const Utterance *> valid_ptrs;
  if (cfg.select_on_valid) {
    SEQOPT_CHECK(valid_for_selection != nullptr && valid_for_selection->Size() > 0,
                 "select_on_valid needs a validation set");
    for (const Utterance &u : valid_for_selection->utts) valid_ptrs.push_back(&u);
  }
  EvalOp evaluate = [&](const ParamVector &delta) {
    if (!cfg.select_on_valid) return ctx.EvalDelta(delta);
    ParamVector cand = *params;
    Axpy(1.0, delta, &cand);
    return MeanLoss(net, cand, valid_ptrs, loss, num_workers);
  };
  const double baseline = cfg.select_on_valid
                              ? MeanLoss(net, *params, valid_ptrs, loss, num_workers)
                              : ctx.BaselineLoss();

  SelectionResult sel = SelectUpdate(&outer.candidates, evaluate, cfg.cg.eval_every);
  report.cg_batch_loss_before = baseline;
  for (size_t i = 0; i < outer.trace.size() && i < outer.candidates.size(); i++)
    outer.trace[i].eval_loss = outer.candidates[i].eval_loss;
  report.cg_trace = std::move(outer.trace);
  report.wall_ms_cg = ElapsedMs(t_cg);
  report.wall_ms_rfwd = ctx.RfwdMs();
  report.wall_ms_ebp = ctx.EbpMs();
  report.wall_ms_eval = ctx.EvalMs();
  report.wall_ms_stats = ctx.StatsMs();

  if (sel.failed || !(sel.eval_loss <= baseline)) {
    report.failed = true;  // no candidate improves on delta = 0
    return report;
  }
  const UpdateCandidate &best = outer.candidates[sel.index];
  report.chosen_candidate = best.iteration;
  report.cg_batch_loss_after = sel.eval_loss;
  if (d_ng.Dim() > 0) {
    const double dn = Norm2(d_ng);
    if (dn > 0) report.ng_projection = std::abs(Dot(best.delta, d_ng)) / dn;
  }
  Axpy(1.0, best.delta, params);

  auto t_after = Clock::now();
  report.grad_batch_loss_after = MeanLoss(net, *params, grad_batch, loss, num_workers);
  report.wall_ms_grad += ElapsedMs(t_after);
  return report;
}

// ---------------------------------------------------------------------------
// Epoch driver
// ---------------------------------------------------------------------------

std::vector<UpdateReport> RunEpoch(const Network &net, ParamVector *params,
                                   const Dataset &train, const LossConfig &loss,
                                   const OptimizerConfig &cfg, int epoch, uint64_t seed,
                                   int num_workers, EpochState *state,
                                   const Dataset *valid_for_selection,
                                   const UpdateCallback &on_update) {
  cfg.Validate();
  cfg.CheckLossSupported(loss.kind);
  const int n = train.Size();
  SEQOPT_CHECK(n >= 1, "run_epoch: empty training set");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(MixSeed(seed, 11, static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  std::vector<UpdateReport> reports;
  if (!IsCgOptimizer(cfg.kind)) {
    const int bs = std::min(cfg.gradient_batch_size, n);
    for (int begin = 0; begin < n; begin += bs) {
      std::vector<const Utterance *> batch;
      for (int i = begin; i < std::min(begin + bs, n); i++)
        batch.push_back(&train.utts[order[i]]);
      GradientResult gr = AccumulateGradient(net, *params, batch, loss,
                                             /*normalize_by_share=*/true, num_workers);
      if (gr.skipped * 10 > static_cast<int>(batch.size())) {
        UpdateReport rep;
        rep.failed = true;
        rep.epoch = epoch;
        rep.update_index = state->updates_done++;
        reports.push_back(rep);
        if (on_update) on_update(&reports.back(), *params);
        continue;
      }
      *params = cfg.kind == OptimizerKind::kSgd
                    ? SgdUpdate(*params, gr.grad, cfg, &state->sgd_velocity)
                    : AdamUpdate(*params, gr.grad, cfg, &state->adam);
      UpdateReport rep;
      rep.epoch = epoch;
      rep.update_index = state->updates_done++;
      rep.grad_batch_loss_before = gr.mean_loss;
      rep.skipped_utterances = gr.skipped;
      reports.push_back(std::move(rep));
      if (on_update) on_update(&reports.back(), *params);
    }
    return reports;
  }

  // HF / NG / NGHF: partition the epoch into C gradient batches and sample a
  // fresh CG batch from the whole training set for every update.
  int c_updates = cfg.updates_per_epoch > 0
                      ? cfg.updates_per_epoch
                      : (n + cfg.gradient_batch_size - 1) / cfg.gradient_batch_size;
  c_updates = std::max(1, std::min(c_updates, n));
  const int cg_size = std::min(cfg.cg_batch_size, n);

  for (int c = 0; c < c_updates; c++) {
    const int lo = static_cast<int>(static_cast<int64_t>(n) * c / c_updates);
    const int hi = static_cast<int>(static_cast<int64_t>(n) * (c + 1) / c_updates);
    std::vector<const Utterance *> grad_batch;
    for (int i = lo; i < hi; i++) grad_batch.push_back(&train.utts[order[i]]);
    if (grad_batch.empty()) continue;

    std::mt19937_64 cg_rng(
        MixSeed(seed, 13, static_cast<uint64_t>(epoch) * 1000003u + c));
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), cg_size, cg_rng);
    std::vector<const Utterance *> cg_batch;
    for (int i : picked) cg_batch.push_back(&train.utts[i]);

    UpdateReport rep = RunCgUpdate(net, params, grad_batch, cg_batch, loss, cfg,
                                   num_workers, valid_for_selection);
    rep.epoch = epoch;
    rep.update_index = state->updates_done++;
    reports.push_back(std::move(rep));
    if (on_update) on_update(&reports.back(), *params);
  }
  return reports;
}

EvalMetrics EvalDataset(const Network &net, const ParamVector &params, const Dataset &data,
                        const LossConfig &loss, int num_workers) {
  SEQOPT_CHECK(data.Size() > 0, "eval: empty split");
  struct Part {
    double loss_sum = 0.0, acc_sum = 0.0, err_frames = 0.0;
    int64_t frames = 0;
  };
  LossConfig mpe_cfg = loss;
  mpe_cfg.kind = LossKind::kMpe;
  auto map_fn = [&](int i) {
    const Utterance &utt = data.utts[i];
    Matrix<double> logits = ForwardLogits(net, params, utt);
    Part part;
    part.loss_sum = StatsFromLogits(utt, loss, logits).loss;
    OccupancyStats mpe = MpeLossAndOccupancy(utt.lattices, logits, mpe_cfg, utt.reference);
    part.acc_sum = mpe.mpe_raw_accuracy / std::max(1, mpe.num_ref_phones);
    for (int t = 0; t < logits.rows; t++) {
      int best = 0;
      for (int k = 1; k < logits.cols; k++)
        if (logits(t, k) > logits(t, best)) best = k;
      if (best != utt.frame_labels[t]) part.err_frames += 1.0;
    }
    part.frames = logits.rows;
    return part;
  };
  auto combine = [](Part *acc, Part &&p) {
    acc->loss_sum += p.loss_sum;
    acc->acc_sum += p.acc_sum;
    acc->err_frames += p.err_frames;
    acc->frames += p.frames;
  };
  auto out = MapReduce<Part>(data.Size(), map_fn, combine, num_workers);
  SEQOPT_CHECK(out.failures.empty() && out.items_done == data.Size(),
               "eval: utterance failed: %s",
               out.failures.empty() ? "?" : out.failures.front().message.c_str());
  EvalMetrics metrics;
  metrics.utterances = out.items_done;
  metrics.mean_loss = out.total->loss_sum / out.items_done;
  metrics.mpe_accuracy = out.total->acc_sum / out.items_done;
  metrics.frame_error = out.total->err_frames / std::max<int64_t>(1, out.total->frames);
  return metrics;
}

}  // namespace seqopt
