// tests/test_optim.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "seqopt/optim.h"
#include "test_util.hpp"

using namespace seqopt;
using namespace seqopt::test;

namespace {

SyntheticTask SmallTask(uint64_t seed, int utts = 10, int k = 6, int feat = 4) {
  SyntheticTaskConfig cfg;
  cfg.seed = seed;
  cfg.num_train = utts;
  cfg.num_valid = 0;
  cfg.num_states = k;
  cfg.feat_dim = feat;
  cfg.min_segments = 3;
  cfg.max_segments = 5;
  cfg.min_segment_len = 2;
  cfg.max_segment_len = 3;
  return GenerateSyntheticTask(cfg);
}

std::vector<const Utterance *> Ptrs(const Dataset &d) {
  std::vector<const Utterance *> out;
  for (const Utterance &u : d.utts) out.push_back(&u);
  return out;
}

}  // namespace

TEST_CASE("sgd update") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.learning_rate = 0.1;
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamVector p = RandomVector(4, 1), g(4), vel;
    ParamVector next = SgdUpdate(p, g, cfg, &vel);
    CHECK(next.data == p.data);
  }
  SUBCASE("plain step") {
    ParamVector p(2), g(2), vel;
    g.data = {1.0, -1.0};
    ParamVector next = SgdUpdate(p, g, cfg, &vel);
    CHECK(next.data[0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(next.data[1] == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("momentum accumulates: second step is 1.9 lr |g|") {
    cfg.momentum = 0.9;
    ParamVector p(1), g(1), vel;
    g.data = {2.0};
    ParamVector p1 = SgdUpdate(p, g, cfg, &vel);
    ParamVector p2 = SgdUpdate(p1, g, cfg, &vel);
    CHECK(p1.data[0] - p2.data[0] == doctest::Approx(1.9 * 0.1 * 2.0).epsilon(1e-12));
  }
}

TEST_CASE("adam update") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kAdam;
  cfg.learning_rate = 0.1;
  SUBCASE("zero gradient from init gives no update") {
    ParamVector p = RandomVector(3, 2), g(3);
    AdamState state;
    ParamVector next = AdamUpdate(p, g, cfg, &state);
    CHECK(next.data == p.data);
  }
  SUBCASE("constant gradient approaches sign steps") {
    ParamVector p(1), g(1);
    g.data = {0.37};
    AdamState state;
    for (int t = 0; t < 400; t++) {
      ParamVector next = AdamUpdate(p, g, cfg, &state);
      if (t > 300)
        CHECK(p.data[0] - next.data[0] ==
              doctest::Approx(cfg.learning_rate).epsilon(1e-3));
      p = next;
    }
  }
  SUBCASE("two-step trace matches the hand recurrence") {
    // independent recurrence: m_t, v_t with bias correction, g = 1 twice
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0, v = 0, x = 0;
    for (int t = 1; t <= 2; t++) {
      m = b1 * m + (1 - b1) * 1.0;
      v = b2 * v + (1 - b2) * 1.0;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      x -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    ParamVector p(1), g(1);
    g.data = {1.0};
    AdamState state;
    p = AdamUpdate(p, g, cfg, &state);
    p = AdamUpdate(p, g, cfg, &state);
    CHECK(p.data[0] == doctest::Approx(x).epsilon(1e-12));
    CHECK(p.data[0] == doctest::Approx(-0.199999998).epsilon(1e-9));
  }
}

TEST_CASE("accumulate_gradient averaging") {
  SyntheticTask data = SmallTask(31);
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  ParamVector params = net.RandomInit(5, 0.4);
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  const Utterance &u0 = data.train.utts[0];

  SUBCASE("batch of one equals that utterance's gradient") {
    GradientResult got = AccumulateGradient(net, params, {&u0}, loss, true, 1);
    auto tape = net.Forward<double>(params, u0.features);
    OccupancyStats st = MpeLossAndOccupancy(u0.lattices, tape.Logits(), loss, u0.reference);
    ParamVector want = net.Backprop<double>(params, tape, st.output_grad, true);
    CHECK(got.grad.data == want.data);
    CHECK(got.mean_loss == st.loss);
  }
  SUBCASE("two identical utterances average to the single gradient") {
    GradientResult one = AccumulateGradient(net, params, {&u0}, loss, true, 1);
    GradientResult two = AccumulateGradient(net, params, {&u0, &u0}, loss, true, 1);
    for (size_t i = 0; i < one.grad.Dim(); i++)
      CHECK(two.grad.data[i] == doctest::Approx(one.grad.data[i]).epsilon(1e-15));
  }
  SUBCASE("broken utterances are skipped and counted") {
    Utterance broken = u0;
    broken.features = Matrix<double>(2, 4);  // frame count no longer matches lattices
    std::vector<const Utterance *> batch = Ptrs(data.train);
    batch.push_back(&broken);
    GradientResult got = AccumulateGradient(net, params, batch, loss, true, 2);
    CHECK(got.skipped == 1);
    CHECK(got.used == static_cast<int>(batch.size()) - 1);
  }
}

TEST_CASE("hf direction matches the dense damped Gauss-Newton solve") {
  // linear-softmax model: one fc layer, CE loss, <= 50 parameters
  SyntheticTask data = SmallTask(37, 6, 4, 3);
  Network net(ModelSpec::Parse("fc:4:identity", 3));
  const size_t dim = net.NumParams();  // 3*4 + 4 = 16
  REQUIRE(dim <= 50);
  ParamVector params = net.RandomInit(7, 0.4);
  LossConfig loss;  // CE
  auto batch = Ptrs(data.train);
  CgBatchContext ctx(net, params, batch, loss, 1);
  ApplyOp op = [&](const ParamVector &v) { return ctx.ApplyGaussNewton(v); };

  // dense assembly through the operator itself is not allowed as an oracle;
  // build J row by row with one-hot backprops and apply the CE Hessian blocks
  Dense g_dense = ZeroDense(dim, dim);
  for (const Utterance *utt : batch) {
    auto tape = net.Forward<double>(params, utt->features);
    Matrix<double> y = Softmax(tape.Logits());
    const int T = tape.num_frames, K = net.OutputDim();
    std::vector<std::vector<double>> j_rows;
    for (int t = 0; t < T; t++)
      for (int k = 0; k < K; k++) {
        Matrix<double> onehot(T, K);
        onehot(t, k) = 1.0;
        j_rows.push_back(net.Backprop<double>(params, tape, onehot, false).data);
      }
    for (int t = 0; t < T; t++)
      for (int k = 0; k < K; k++)
        for (int k2 = 0; k2 < K; k2++) {
          const double h =
              (k == k2 ? y(t, k) : 0.0) - y(t, k) * y(t, k2);  // CE output Hessian
          if (h == 0.0) continue;
          const auto &ja = j_rows[t * K + k];
          const auto &jb = j_rows[t * K + k2];
          for (size_t a = 0; a < dim; a++)
            for (size_t b = 0; b < dim; b++) g_dense[a][b] += h * ja[a] * jb[b] /
                                                              static_cast<double>(batch.size());
        }
  }
  const double eta = 0.05;
  for (size_t i = 0; i < dim; i++) g_dense[i][i] += eta;

  GradientResult gr = AccumulateGradient(net, params, batch, loss, false, 1);
  ParamVector b = gr.grad;
  Scale(-1.0, &b);
  CGConfig cfg;
  cfg.max_iters = static_cast<int>(dim);
  cfg.stabilize = true;
  cfg.precondition = false;
  cfg.tikhonov_damping = eta;
  CgResult res = CgRun(b, op, net.GetShareCounts(), cfg, Norm2(params));
  const auto exact = DenseSolve(g_dense, b.data);
  CHECK(RelL2(res.candidates.back().delta.data, exact) < 1e-6);
}

TEST_CASE("cg update with zero gradient leaves parameters unchanged") {
  SyntheticTask data = SmallTask(41);
  // equally correct competitors => zero MPE gradient everywhere
  for (Utterance &u : data.train.utts)
    for (Arc &arc : u.lattices.den.arcs) arc.correctness = 1.0;
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  ParamVector params = net.RandomInit(9, 0.4);
  ParamVector before = params;
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kHf;
  auto batch = Ptrs(data.train);
  UpdateReport rep = RunCgUpdate(net, &params, batch, batch, loss, cfg, 1);
  CHECK(params.data == before.data);
  CHECK(rep.chosen_candidate == 0);
}

TEST_CASE("single cg iteration moves along the preconditioned gradient") {
  SyntheticTask data = SmallTask(43);
  Network net(ModelSpec::Parse("rnn:5:sigmoid:4 fc:6:identity", 4));
  ParamVector params = net.RandomInit(11, 0.4);
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  auto batch = Ptrs(data.train);
  GradientResult gr = AccumulateGradient(net, params, batch, loss, false, 1);
  ParamVector b = gr.grad;
  Scale(-1.0, &b);
  CgBatchContext ctx(net, params, batch, loss, 1);
  ApplyOp op = [&](const ParamVector &v) { return ctx.ApplyGaussNewton(v); };
  CGConfig cfg;
  cfg.max_iters = 1;
  cfg.precondition = true;
  CgResult res = CgRun(b, op, net.GetShareCounts(), cfg, Norm2(params));
  REQUIRE(res.iterations == 1);
  ParamVector dir = Precondition(b, net.GetShareCounts());
  const double cosine =
      Dot(res.candidates[0].delta, dir) / (Norm2(res.candidates[0].delta) * Norm2(dir));
  CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ng direction on a rank-1 system matches the pseudo-inverse") {
  // single utterance, single frame: F = f f^T for the MMI gradient f, and
  // one CG step from b = -f lands exactly on -F^+ f = -f / (f.f)
  SyntheticTaskConfig tcfg;
  tcfg.seed = 47;
  tcfg.num_train = 1;
  tcfg.num_valid = 0;
  tcfg.num_states = 4;
  tcfg.feat_dim = 3;
  tcfg.min_segments = 1;
  tcfg.max_segments = 1;
  tcfg.min_segment_len = 1;
  tcfg.max_segment_len = 1;
  SyntheticTask data = GenerateSyntheticTask(tcfg);
  REQUIRE(data.train.utts[0].NumFrames() == 1);
  Network net(ModelSpec::Parse("fc:4:identity", 3));
  ParamVector params = net.RandomInit(13, 0.5);
  LossConfig loss;
  loss.kind = LossKind::kMmi;
  auto batch = Ptrs(data.train);

  GradientResult gr = AccumulateGradient(net, params, batch, loss, false, 1);
  const ParamVector &f = gr.grad;
  ParamVector b = f;
  Scale(-1.0, &b);
  CgBatchContext ctx(net, params, batch, loss, 1);
  ApplyOp op = [&](const ParamVector &v) { return ctx.ApplyFisher(v); };
  CGConfig cfg;
  cfg.max_iters = 4;
  cfg.precondition = false;
  CgResult res = CgRun(b, op, net.GetShareCounts(), cfg, Norm2(params));
  REQUIRE(res.iterations >= 1);
  ParamVector want = f;
  Scale(-1.0 / Dot(f, f), &want);
  CHECK(RelL2(res.candidates[0].delta.data, want.data) < 1e-6);
}

TEST_CASE("doubling lambda halves the first cg step") {
  SyntheticTask data = SmallTask(53);
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  ParamVector params = net.RandomInit(15, 0.4);
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  auto batch = Ptrs(data.train);
  GradientResult gr = AccumulateGradient(net, params, batch, loss, false, 1);
  ParamVector b = gr.grad;
  Scale(-1.0, &b);
  CgBatchContext ctx(net, params, batch, loss, 1);
  CGConfig cfg;
  cfg.max_iters = 1;
  cfg.precondition = false;
  auto alpha_for = [&](double lambda) {
    ApplyOp op = [&, lambda](const ParamVector &v) {
      ParamVector fv = ctx.ApplyFisher(v);
      Scale(lambda, &fv);
      return fv;
    };
    return CgRun(b, op, net.GetShareCounts(), cfg, Norm2(params)).trace[0].alpha;
  };
  CHECK(alpha_for(2.0) == doctest::Approx(0.5 * alpha_for(1.0)).epsilon(1e-9));
}

TEST_CASE("nghf two-stage solve matches dense algebra on a 2-d system") {
  Dense f = {{3.0, 0.5}, {0.5, 1.5}};
  Dense g = {{2.0, -0.3}, {-0.3, 1.0}};
  ParamVector grad(2);
  grad.data = {0.7, -0.4};
  ParamVector b = grad;
  Scale(-1.0, &b);
  auto op_of = [](const Dense &a) {
    return ApplyOp([&a](const ParamVector &v) {
      ParamVector out(v.Dim());
      auto y = DenseMatVec(a, v.data);
      out.data = y;
      return out;
    });
  };
  CGConfig cfg;
  cfg.max_iters = 2;
  cfg.stabilize = false;
  cfg.precondition = false;
  // stage 1: F d = -grad; stage 2: G delta = d
  CgResult inner = CgRun(b, op_of(f), ShareCounts{}, cfg, 0.0);
  CgResult outer = CgRun(inner.candidates.back().delta, op_of(g), ShareCounts{}, cfg, 0.0);
  auto d_exact = DenseSolve(f, b.data);
  auto want = DenseSolve(g, d_exact);
  CHECK(RelL2(outer.candidates.back().delta.data, want) < 1e-6);
}

TEST_CASE("nghf with zero inner iterations is bit-identical to hf") {
  SyntheticTask data = SmallTask(59, 16);
  Network net(ModelSpec::Parse("fc:8:sigmoid fc:6:identity", 4));
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  OptimizerConfig hf;
  hf.kind = OptimizerKind::kHf;
  hf.updates_per_epoch = 2;
  hf.cg_batch_size = 6;
  OptimizerConfig nghf = hf;
  nghf.kind = OptimizerKind::kNghf;
  nghf.inner_ng_iters = 0;

  ParamVector p_hf = net.RandomInit(17, 0.4);
  ParamVector p_nghf = p_hf;
  EpochState s1, s2;
  auto r_hf = RunEpoch(net, &p_hf, data.train, loss, hf, 1, 99, 2, &s1);
  auto r_nghf = RunEpoch(net, &p_nghf, data.train, loss, nghf, 1, 99, 2, &s2);
  CHECK(p_hf.data == p_nghf.data);
  REQUIRE(r_hf.size() == r_nghf.size());
  for (size_t i = 0; i < r_hf.size(); i++) {
    CHECK(r_hf[i].grad_batch_loss_before == r_nghf[i].grad_batch_loss_before);
    CHECK(r_hf[i].cg_batch_loss_after == r_nghf[i].cg_batch_loss_after);
    CHECK(r_hf[i].chosen_candidate == r_nghf[i].chosen_candidate);
  }
}

TEST_CASE("run_epoch") {
  SyntheticTask data = SmallTask(61, 12);
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  SUBCASE("C = 1 consumes the whole epoch in one update") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kHf;
    cfg.updates_per_epoch = 1;
    cfg.cg_batch_size = 4;
    ParamVector params = net.RandomInit(19, 0.4);
    EpochState state;
    auto reports = RunEpoch(net, &params, data.train, loss, cfg, 1, 7, 1, &state);
    CHECK(reports.size() == 1);
  }
  SUBCASE("fixed seed gives identical reports across reruns and worker counts") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kNghf;
    cfg.updates_per_epoch = 3;
    cfg.cg_batch_size = 5;
    auto run = [&](int workers) {
      ParamVector params = net.RandomInit(21, 0.4);
      EpochState state;
      auto reports = RunEpoch(net, &params, data.train, loss, cfg, 1, 11, workers, &state);
      std::vector<double> track;
      auto push = [&track](double x) { track.push_back(std::isnan(x) ? -12345.0 : x); };
      for (const auto &r : reports) {
        push(r.grad_batch_loss_before);
        push(r.cg_batch_loss_after);
        push(r.chosen_candidate);
      }
      track.insert(track.end(), params.data.begin(), params.data.end());
      return track;
    };
    auto a = run(1);
    CHECK(run(1) == a);
    CHECK(run(2) == a);
    CHECK(run(4) == a);
  }
  SUBCASE("sgd iterates over mini-batches") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kSgd;
    cfg.learning_rate = 0.05;
    cfg.gradient_batch_size = 3;
    ParamVector params = net.RandomInit(23, 0.4);
    EpochState state;
    auto reports = RunEpoch(net, &params, data.train, loss, cfg, 1, 13, 1, &state);
    CHECK(reports.size() == 4);  // 12 utterances / 3 per batch
  }
}

TEST_CASE("unsupported optimizer-loss combinations are rejected") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kHf;
  CHECK_THROWS_AS(cfg.CheckLossSupported(LossKind::kMmi), Error);
  cfg.kind = OptimizerKind::kNg;
  CHECK_THROWS_AS(cfg.CheckLossSupported(LossKind::kCrossEntropy), Error);
  cfg.kind = OptimizerKind::kNghf;
  CHECK_NOTHROW(cfg.CheckLossSupported(LossKind::kMpe));
}

TEST_CASE("eval metrics are deterministic and reject empty splits") {
  SyntheticTask data = SmallTask(67, 8);
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  ParamVector params = net.RandomInit(25, 0.4);
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  EvalMetrics a = EvalDataset(net, params, data.train, loss, 2);
  EvalMetrics b = EvalDataset(net, params, data.train, loss, 4);
  CHECK(a.mean_loss == b.mean_loss);
  CHECK(a.mpe_accuracy == b.mpe_accuracy);
  CHECK(a.frame_error == b.frame_error);
  Dataset empty;
  CHECK_THROWS_AS(EvalDataset(net, params, empty, loss, 1), Error);
}

TEST_CASE("more than 10% failing utterances aborts the update") {
  SyntheticTask data = SmallTask(71, 8);
  Network net(ModelSpec::Parse("fc:6:sigmoid fc:6:identity", 4));
  ParamVector params = net.RandomInit(27, 0.4);
  ParamVector before = params;
  LossConfig loss;
  loss.kind = LossKind::kMpe;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kHf;

  Utterance broken = data.train.utts[0];
  broken.features = Matrix<double>(1, 4);
  std::vector<const Utterance *> batch = Ptrs(data.train);
  batch.push_back(&broken);
  batch.push_back(&broken);  // 2 of 10 broken: 20% > 10%
  auto cg_batch = Ptrs(data.train);
  UpdateReport rep = RunCgUpdate(net, &params, batch, cg_batch, loss, cfg, 2);
  CHECK(rep.failed);
  CHECK(rep.skipped_utterances == 2);
  CHECK(params.data == before.data);
}
