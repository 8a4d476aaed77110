// seqopt/driver.cc

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

#include "seqopt/driver.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace seqopt {

namespace fs = std::filesystem;

namespace {

std::string Fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void WriteMetricsHeader(std::ostream &os) {
  os << "epoch,update,optimizer,train_loss,cg_batch_loss,valid_metric,cg_iters,chosen_m,"
        "wall_ms_grad,wall_ms_cg,wall_ms_eval,wall_ms_rfwd,wall_ms_ebp,wall_ms_stats\n";
}

void WriteMetricsRow(std::ostream &os, const UpdateReport &r, const char *optimizer) {
  os << r.epoch << ',' << r.update_index << ',' << optimizer << ','
     << Fmt(r.grad_batch_loss_before) << ',' << Fmt(r.cg_batch_loss_after) << ','
     << Fmt(r.valid_metric) << ',' << r.cg_iterations << ',' << r.chosen_candidate << ','
     << Fmt(r.wall_ms_grad) << ',' << Fmt(r.wall_ms_cg) << ',' << Fmt(r.wall_ms_eval) << ','
     << Fmt(r.wall_ms_rfwd) << ',' << Fmt(r.wall_ms_ebp) << ',' << Fmt(r.wall_ms_stats)
     << '\n';
}

void WriteTraceHeader(std::ostream &os) {
  os << "epoch,update,iteration,alpha,beta,residual_norm,quad_model,eval_loss\n";
}

void WriteTraceRows(std::ostream &os, const UpdateReport &r) {
  for (const CgIterationTrace &t : r.cg_trace)
    os << r.epoch << ',' << r.update_index << ',' << t.iteration << ',' << Fmt(t.alpha)
       << ',' << Fmt(t.beta) << ',' << Fmt(t.residual_norm) << ',' << Fmt(t.quad_model)
       << ',' << Fmt(t.eval_loss) << '\n';
}

}  // namespace

TrainResult TrainRun(const RunConfig &cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.Validate();
  SEQOPT_CHECK(!cfg.data_dir.empty(), "train: config needs 'data'");
  SEQOPT_CHECK(!cfg.out_dir.empty(), "train: config needs 'out'");

  Dataset train = LoadDataset(cfg.data_dir + "/train");
  const bool has_valid = fs::exists(cfg.data_dir + "/valid/manifest.txt");
  Dataset valid;
  if (has_valid) valid = LoadDataset(cfg.data_dir + "/valid");
  SEQOPT_CHECK(!cfg.optim.select_on_valid || has_valid,
               "train: select_on_valid needs a validation split");

  ModelSpec spec;
  ParamVector params;
  if (!cfg.init_checkpoint.empty()) {
    LoadCheckpoint(cfg.init_checkpoint, &spec, &params);
  } else {
    SEQOPT_CHECK(!cfg.model_text.empty(), "train: config needs 'model' or 'init_checkpoint'");
    spec = ModelSpec::Parse(cfg.model_text, train.feat_dim);
  }
  Network net(spec);
  SEQOPT_CHECK(net.InputDim() == train.feat_dim, "train: model input dim %d != data %d",
               net.InputDim(), train.feat_dim);
  SEQOPT_CHECK(net.OutputDim() == train.num_states, "train: model output dim %d != K %d",
               net.OutputDim(), train.num_states);
  if (cfg.init_checkpoint.empty())
    params = net.RandomInit(MixSeed(cfg.seed, 1), cfg.init_scale);
  params.prec = cfg.precision;

  if (cfg.precondition_mode == "auto")
    cfg.optim.cg.precondition = net.GetShareCounts().AnyShared();
  else
    cfg.optim.cg.precondition = cfg.precondition_mode == "on";
  cfg.precondition_mode = cfg.optim.cg.precondition ? "on" : "off";

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  SEQOPT_CHECK(!ec, "train: cannot create output directory '%s'", cfg.out_dir.c_str());
  {
    std::ofstream os(cfg.out_dir + "/resolved.cfg");
    SEQOPT_CHECK(os.good(), "train: cannot write resolved config");
    os << cfg.ToText();
  }

  TrainResult result;
  result.spec = spec;
  result.metrics_csv = cfg.out_dir + "/metrics.csv";
  result.cg_trace_csv = cfg.out_dir + "/cg_trace.csv";
  std::ofstream mos(result.metrics_csv), tos(result.cg_trace_csv);
  SEQOPT_CHECK(mos.good() && tos.good(), "train: cannot write metrics files");
  WriteMetricsHeader(mos);
  WriteTraceHeader(tos);

  const char *opt_name = OptimizerKindName(cfg.optim.kind);
  EpochState state;
  std::string last_ckpt;
  ParamVector best_params;
  auto on_update = [&](UpdateReport *rep, const ParamVector &p) {
    if (!p.AllFinite()) {
      std::string note = last_ckpt.empty() ? "no checkpoint written yet"
                                           : "last good checkpoint: " + last_ckpt;
      Fail("training diverged at update %d (%s)", rep->update_index, note.c_str());
    }
    if (has_valid && cfg.valid_every > 0 && rep->update_index % cfg.valid_every == 0)
      rep->valid_metric =
          EvalDataset(net, p, valid, cfg.loss, cfg.workers).mpe_accuracy;
    WriteMetricsRow(mos, *rep, opt_name);
    WriteTraceRows(tos, *rep);
    result.reports.push_back(*rep);
  };

  for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
    RunEpoch(net, &params, train, cfg.loss, cfg.optim, epoch, cfg.seed, cfg.workers, &state,
             has_valid ? &valid : nullptr, on_update);
    char name[64];
    std::snprintf(name, sizeof(name), "/ckpt_epoch_%03d.mdl", epoch);
    last_ckpt = cfg.out_dir + name;
    SaveCheckpoint(last_ckpt, spec, params);
    if (has_valid) {
      const double acc = EvalDataset(net, params, valid, cfg.loss, cfg.workers).mpe_accuracy;
      if (result.best_epoch < 0 || acc > result.best_valid_accuracy) {
        result.best_valid_accuracy = acc;
        result.best_epoch = epoch;
        best_params = params;
      }
    }
  }

  SaveCheckpoint(cfg.out_dir + "/final.mdl", spec, params);
  if (result.best_epoch >= 0) {
    result.best_checkpoint = cfg.out_dir + "/best.mdl";
    SaveCheckpoint(result.best_checkpoint, spec, best_params);
    std::ofstream os(cfg.out_dir + "/best.txt");
    os << "epoch " << result.best_epoch << "\nvalid_mpe_accuracy "
       << Fmt(result.best_valid_accuracy) << "\ncheckpoint " << result.best_checkpoint
       << "\n";
  }
  result.params = std::move(params);
  return result;
}

EvalMetrics EvalRun(const RunConfig &cfg, const std::string &checkpoint_path,
                    const std::string &split_dir) {
  ModelSpec spec;
  ParamVector params;
  LoadCheckpoint(checkpoint_path, &spec, &params);
  params.prec = cfg.precision;
  Network net(spec);
  Dataset data = LoadDataset(split_dir);
  SEQOPT_CHECK(net.InputDim() == data.feat_dim && net.OutputDim() == data.num_states,
               "eval: checkpoint does not match dataset dims");
  EvalMetrics m = EvalDataset(net, params, data, cfg.loss, cfg.workers);
  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    const std::string path = cfg.out_dir + "/eval.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    SEQOPT_CHECK(os.good(), "eval: cannot write '%s'", path.c_str());
    if (fresh)
      os << "checkpoint,split,loss,mean_loss,mpe_accuracy,frame_error,utterances\n";
    os << checkpoint_path << ',' << split_dir << ',' << LossKindName(cfg.loss.kind) << ','
       << Fmt(m.mean_loss) << ',' << Fmt(m.mpe_accuracy) << ',' << Fmt(m.frame_error) << ','
       << m.utterances << '\n';
  }
  return m;
}

void GenDataRun(const RunConfig &cfg_in) {
  RunConfig cfg = cfg_in;
  SEQOPT_CHECK(!cfg.out_dir.empty(), "gen-data: config needs 'out'");
  cfg.task.seed = cfg.seed;
  SaveSyntheticTask(cfg.out_dir, GenerateSyntheticTask(cfg.task), cfg.task);
}

std::vector<int> LatticeCheckRun(const std::vector<std::string> &paths) {
  SEQOPT_CHECK(!paths.empty(), "lattice-check: no files given");
  std::vector<int> counts;
  for (const std::string &path : paths)
    counts.push_back(static_cast<int>(ParseLatticeFile(path).size()));
  return counts;
}

// ---------------------------------------------------------------------------
// CG micro-benchmarks
// ---------------------------------------------------------------------------

namespace {

// Dense solve with partial pivoting, for the bench oracles.
std::vector<double> DenseSolve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; col++) {
    int piv = col;
    for (int r = col + 1; r < n; r++)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    SEQOPT_CHECK(a[col][col] != 0.0, "dense solve: singular matrix");
    for (int r = col + 1; r < n; r++) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < n; c++) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; r--) {
    double acc = b[r];
    for (int c = r + 1; c < n; c++) acc -= a[r][c] * x[c];
    x[r] = acc / a[r][r];
  }
  return x;
}

// Q Lambda Q^T with Q from Gram-Schmidt on a seeded Gaussian matrix.
std::vector<std::vector<double>> SpdFromSpectrum(const std::vector<double> &eigs,
                                                 uint64_t seed) {
  const int n = static_cast<int>(eigs.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> q(n, std::vector<double>(n));
  for (int i = 0; i < n; i++) {
    for (int j = 0; j < n; j++) q[i][j] = gauss(rng);
    for (int k = 0; k < i; k++) {
      double dot = 0;
      for (int j = 0; j < n; j++) dot += q[i][j] * q[k][j];
      for (int j = 0; j < n; j++) q[i][j] -= dot * q[k][j];
    }
    double norm = 0;
    for (int j = 0; j < n; j++) norm += q[i][j] * q[i][j];
    norm = std::sqrt(norm);
    for (int j = 0; j < n; j++) q[i][j] /= norm;
  }
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++)
      for (int k = 0; k < n; k++) a[i][j] += q[k][i] * eigs[k] * q[k][j];
  return a;
}

ApplyOp MatrixOp(const std::vector<std::vector<double>> &a) {
  return [&a](const ParamVector &v) {
    ParamVector out(v.Dim(), v.prec);
    for (size_t i = 0; i < v.Dim(); i++) {
      double acc = 0;
      for (size_t j = 0; j < v.Dim(); j++) acc += a[i][j] * v.data[j];
      out.data[i] = acc;
    }
    return out;
  };
}

double Cosine(const ParamVector &a, const ParamVector &b) {
  const double na = Norm2(a), nb = Norm2(b);
  if (na == 0 || nb == 0) return 0;
  return Dot(a, b) / (na * nb);
}

void BenchRow(std::ostream &os, const char *system, const char *variant, int iteration,
              double residual, double quad, double oracle_err, double cosine) {
  os << system << ',' << variant << ',' << iteration << ',' << Fmt(residual) << ','
     << Fmt(quad) << ',' << Fmt(oracle_err) << ',' << Fmt(cosine) << '\n';
}

void BenchSpdSystems(std::ostream &os, uint64_t seed) {
  struct Case {
    const char *name;
    std::vector<double> distinct;
    double eta;
    const char *variant;
  };
  const std::vector<Case> cases = {
      {"spd3", {1.0, 4.0, 9.0}, 0.0, "eta_0"},
      {"spd8", {1, 2, 3, 4, 5, 6, 7, 8}, 0.0, "eta_0"},
      {"spd3", {1.0, 4.0, 9.0}, 1e4, "eta_1e4"},
  };
  const int dim = 24;
  for (const Case &c : cases) {
    std::vector<double> eigs(dim);
    for (int i = 0; i < dim; i++) eigs[i] = c.distinct[i % c.distinct.size()];
    auto a = SpdFromSpectrum(eigs, MixSeed(seed, 31));
    std::mt19937_64 rng(MixSeed(seed, 37));
    std::normal_distribution<double> gauss(0.0, 1.0);
    ParamVector b(dim);
    for (int i = 0; i < dim; i++) b.data[i] = gauss(rng);
    const auto exact = DenseSolve(a, b.data);
    double exact_norm = 0;
    for (double x : exact) exact_norm += x * x;
    exact_norm = std::sqrt(exact_norm);

    CGConfig cfg;
    cfg.max_iters = dim;
    cfg.stabilize = false;
    cfg.precondition = false;
    cfg.tikhonov_damping = c.eta;
    CgResult res = CgRun(b, MatrixOp(a), ShareCounts{}, cfg, 0.0);
    for (size_t m = 0; m < res.candidates.size(); m++) {
      double err = 0;
      for (int i = 0; i < dim; i++) {
        const double d = res.candidates[m].delta.data[i] - exact[i];
        err += d * d;
      }
      BenchRow(os, c.name, c.variant, res.trace[m].iteration, res.trace[m].residual_norm,
               res.trace[m].quad_model, std::sqrt(err) / exact_norm,
               Cosine(res.candidates[m].delta, b));
    }
  }
}

void BenchModelStabilization(std::ostream &os, uint64_t seed) {
  SyntheticTaskConfig task;
  task.seed = MixSeed(seed, 41);
  task.num_train = 6;
  task.num_valid = 0;
  task.num_states = 6;
  task.feat_dim = 4;
  task.min_segments = 3;
  task.max_segments = 4;
  SyntheticTask data = GenerateSyntheticTask(task);
  std::vector<const Utterance *> batch;
  for (const Utterance &u : data.train.utts) batch.push_back(&u);

  ModelSpec spec = ModelSpec::Parse("fc:8:sigmoid rnn:8:sigmoid:6 fc:6:identity", 4);
  Network net(spec);
  LossConfig loss;
  loss.kind = LossKind::kMpe;

  ParamVector params64 = net.RandomInit(MixSeed(seed, 43), 0.5);
  ParamVector params32 = params64;
  params32.prec = Precision::kFloat32;

  GradientResult gr = AccumulateGradient(net, params64, batch, loss, false, 1);
  ParamVector b = gr.grad;
  // Ill-scaled direction: |theta| / |b| ~ 1e41, past the f32 cliff.
  Scale(-Norm2(params64) * 1e-41 / std::max(Norm2(b), 1e-300), &b);

  CgBatchContext ctx64(net, params64, batch, loss, 1);
  CgBatchContext ctx32(net, params32, batch, loss, 1);
  ApplyOp op64 = [&](const ParamVector &v) { return ctx64.ApplyGaussNewton(v); };
  ApplyOp op32 = [&](const ParamVector &v) { return ctx32.ApplyGaussNewton(v); };

  CGConfig cfg;
  cfg.max_iters = 6;
  cfg.precondition = false;
  const double theta_norm = Norm2(params64);

  cfg.stabilize = true;
  CgResult ref = CgRun(b, op64, ShareCounts{}, cfg, theta_norm);
  for (int variant = 0; variant < 2; variant++) {
    cfg.stabilize = variant == 1;
    CgResult res = CgRun(b, op32, ShareCounts{}, cfg, theta_norm);
    for (size_t m = 0; m < res.candidates.size(); m++) {
      double err = std::numeric_limits<double>::quiet_NaN();
      if (m < ref.candidates.size()) {
        ParamVector diff = res.candidates[m].delta;
        Axpy(-1.0, ref.candidates[m].delta, &diff);
        err = Norm2(diff) / std::max(Norm2(ref.candidates[m].delta), 1e-300);
      }
      BenchRow(os, "model_f32", variant ? "stabilize_on" : "stabilize_off",
               res.trace.empty() ? static_cast<int>(m + 1) : res.trace[m].iteration,
               m < res.trace.size() ? res.trace[m].residual_norm : 0.0,
               m < res.trace.size() ? res.trace[m].quad_model : 0.0, err,
               Cosine(res.candidates[m].delta, b));
    }
  }
}

void BenchSharedPreconditioning(std::ostream &os, uint64_t seed) {
  SyntheticTaskConfig task;
  task.seed = MixSeed(seed, 47);
  task.num_train = 6;
  task.num_valid = 0;
  task.num_states = 6;
  task.feat_dim = 4;
  SyntheticTask data = GenerateSyntheticTask(task);
  std::vector<const Utterance *> batch;
  for (const Utterance &u : data.train.utts) batch.push_back(&u);

  ModelSpec spec = ModelSpec::Parse("rnn:8:sigmoid:20 fc:6:identity", 4);
  Network net(spec);
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  ParamVector params = net.RandomInit(MixSeed(seed, 53), 0.4);

  GradientResult gr = AccumulateGradient(net, params, batch, loss, false, 1);
  ParamVector b = gr.grad;
  Scale(-1.0, &b);
  CgBatchContext ctx(net, params, batch, loss, 1);
  ApplyOp op = [&](const ParamVector &v) { return ctx.ApplyGaussNewton(v); };

  CGConfig cfg;
  cfg.max_iters = 12;
  cfg.stabilize = true;
  for (int variant = 0; variant < 2; variant++) {
    cfg.precondition = variant == 1;
    CgResult res = CgRun(b, op, net.GetShareCounts(), cfg, Norm2(params));
    for (size_t m = 0; m < res.trace.size(); m++)
      BenchRow(os, "model_shared", variant ? "precondition_on" : "precondition_off",
               res.trace[m].iteration, res.trace[m].residual_norm,
               res.trace[m].quad_model, std::numeric_limits<double>::quiet_NaN(),
               Cosine(res.candidates[m].delta, b));
  }
}

}  // namespace

void CgBenchRun(const RunConfig &cfg) {
  SEQOPT_CHECK(!cfg.out_dir.empty(), "cg-bench: config needs 'out'");
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  SEQOPT_CHECK(!ec, "cg-bench: cannot create '%s'", cfg.out_dir.c_str());
  std::ofstream os(cfg.out_dir + "/cg_bench.csv");
  SEQOPT_CHECK(os.good(), "cg-bench: cannot write cg_bench.csv");
  os << "system,variant,iteration,residual_norm,quad_model,oracle_err,cosine_to_b\n";
  BenchSpdSystems(os, cfg.seed);
  BenchModelStabilization(os, cfg.seed);
  BenchSharedPreconditioning(os, cfg.seed);
}

}  // namespace seqopt
