#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gmn;
using namespace gmn::testing;

namespace {

std::vector<const Matrix*> group_ptrs(const MultiplexDataset& ds, int k) {
  std::vector<const Matrix*> out;
  for (const Matrix& a : ds.layers[static_cast<std::size_t>(k)]) out.push_back(&a);
  return out;
}

FirstStageProblem::Config first_config(const HyperParams& hp, int k) {
  FirstStageProblem::Config cfg;
  cfg.lambda = hp.lambda1[static_cast<std::size_t>(k)];
  cfg.alpha = hp.alpha1[static_cast<std::size_t>(k)];
  cfg.eta = hp.eta1;
  return cfg;
}

SecondStageProblem::Config second_config(const HyperParams& hp) {
  SecondStageProblem::Config cfg;
  cfg.lambda = hp.lambda2;
  cfg.alpha = hp.alpha2;
  cfg.eta = hp.eta2;
  return cfg;
}

}  // namespace

TEST(ConvergenceMonitor, StopsAfterPatienceStalls) {
  ConvergenceMonitor mon(1e-3, 3);
  EXPECT_FALSE(mon.update(100.0));
  EXPECT_FALSE(mon.update(50.0));
  EXPECT_FALSE(mon.update(49.99));
  EXPECT_FALSE(mon.update(49.99));
  EXPECT_TRUE(mon.update(49.99));
}

TEST(ConvergenceMonitor, ProgressResetsTheCount) {
  ConvergenceMonitor mon(1e-3, 2);
  mon.update(10.0);
  EXPECT_FALSE(mon.update(10.0));
  EXPECT_FALSE(mon.update(5.0));
  EXPECT_FALSE(mon.update(5.0));
  EXPECT_TRUE(mon.update(5.0));
}

TEST(HyperParams, DefaultsFollowTheRateFormulas) {
  GroupLayout layout({4, 2});
  HyperParams hp = default_hyperparams(100, layout, EdgeFamily::gaussian(), 2.0, 3.0);
  EXPECT_NEAR(hp.lambda1[0], 2.0 * std::sqrt(400.0), 1e-12);
  EXPECT_NEAR(hp.lambda1[1], 2.0 * std::sqrt(200.0), 1e-12);
  EXPECT_NEAR(hp.alpha1[0][3], 0.5, 1e-15);
  EXPECT_NEAR(hp.lambda2, 3.0 * std::sqrt(600.0), 1e-12);
  EXPECT_NEAR(hp.alpha2[1], std::sqrt(2.0 / 6.0), 1e-15);
  EXPECT_EQ(hp.eta1, 1.0);
  EXPECT_EQ(default_hyperparams(100, layout, EdgeFamily::bernoulli_logit(), 1, 1).eta1, 3.0);
  EXPECT_THROW(default_hyperparams(100, layout, EdgeFamily::gaussian(), 0.0, 1.0), InputError);
  hp.alpha1[1].pop_back();
  EXPECT_THROW(hp.validate(layout), InputError);
}

TEST(FirstStage, GaussianUpdatesEqualClosedForms) {
  auto s = synthetic(30, 2, GroupLayout({3, 3}), 1.0, true, 1);
  HyperParams hp = default_hyperparams(s.ds, 0.5, 0.5);
  for (int k = 0; k < 2; ++k) {
    FirstStageProblem p(group_ptrs(s.ds, k), s.ds.family, true, first_config(hp, k));
    p.initialize();
    const auto& layers = s.ds.layers[static_cast<std::size_t>(k)];
    const double lam = hp.lambda1[static_cast<std::size_t>(k)];
    const double alpha = hp.alpha1[static_cast<std::size_t>(k)][0];
    for (int it = 0; it < 25; ++it) {
      Matrix spq = p.spq();
      std::vector<Matrix> r;
      Matrix mean = Matrix::Zero(30, 30);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        r.push_back(dense_soft(layers[l] - spq, lam * alpha));
        mean += (layers[l] - r.back()) / 3.0;
      }
      Matrix spq_next = dense_soft(mean, lam / 3.0);
      p.step();
      for (std::size_t l = 0; l < layers.size(); ++l)
        EXPECT_LE((p.r(static_cast<int>(l)) - r[l]).norm(), 1e-12 * (1.0 + r[l].norm()));
      EXPECT_LE((p.spq() - spq_next).norm(), 1e-12 * (1.0 + spq_next.norm()));
    }
  }
}

TEST(SecondStage, GaussianUpdatesEqualClosedForms) {
  auto s = synthetic(30, 2, GroupLayout({3, 3}), 1.0, true, 2);
  HyperParams hp = default_hyperparams(s.ds, 0.5, 0.5);
  LayerSet r_hat = s.gt.grams.R;
  SecondStageProblem p(s.ds.layers, r_hat, s.ds.family, true, second_config(hp));
  p.initialize(SecondInit::residual_mean);
  for (int it = 0; it < 25; ++it) {
    Matrix cur_s = p.s();
    std::vector<Matrix> q;
    Matrix mean = Matrix::Zero(30, 30);
    for (std::size_t k = 0; k < 2; ++k) {
      Matrix resid = Matrix::Zero(30, 30);
      for (std::size_t l = 0; l < 3; ++l) resid += (s.ds.layers[k][l] - r_hat[k][l] - cur_s) / 3.0;
      q.push_back(dense_soft(resid, hp.lambda2 * hp.alpha2[k] / 3.0));
      for (std::size_t l = 0; l < 3; ++l) mean += (s.ds.layers[k][l] - r_hat[k][l] - q.back()) / 6.0;
    }
    Matrix s_next = dense_soft(mean, hp.lambda2 / 6.0);
    p.step();
    for (int k = 0; k < 2; ++k)
      EXPECT_LE((p.q(k) - q[static_cast<std::size_t>(k)]).norm(),
                1e-12 * (1.0 + q[static_cast<std::size_t>(k)].norm()));
    EXPECT_LE((p.s() - s_next).norm(), 1e-12 * (1.0 + s_next.norm()));
  }
}

TEST(FirstStage, ObjectiveIsMonotone) {
  for (auto fam : {EdgeFamily::gaussian(), EdgeFamily::bernoulli_logit()}) {
    for (bool loops : {false, true}) {
      auto s = synthetic(40, 2, GroupLayout({3, 3}), 1.0, loops, 3, {}, fam);
      if (!fam.is_gaussian())
        for (auto& g : s.gt.theta)
          for (auto& t : g) t /= 10.0;
      if (!fam.is_gaussian()) s.ds = sample_layers(s.gt, fam, loops, 4);
      HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
      FirstStageProblem p(group_ptrs(s.ds, 0), fam, loops, first_config(hp, 0));
      p.initialize();
      double prev = p.objective();
      for (int it = 0; it < 40; ++it) {
        p.step();
        double cur = p.objective();
        EXPECT_LE(cur, prev + 1e-9 * std::abs(prev));
        prev = cur;
      }
    }
  }
}

TEST(SecondStage, ObjectiveIsMonotone) {
  for (auto fam : {EdgeFamily::gaussian(), EdgeFamily::bernoulli_logit()}) {
    auto s = synthetic(40, 2, GroupLayout({2, 3}), 1.0, false, 5, {}, fam);
    HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
    LayerSet r_hat(2);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t l = 0; l < s.ds.layers[k].size(); ++l) r_hat[k].push_back(Matrix::Zero(40, 40));
    SecondStageProblem p(s.ds.layers, r_hat, fam, false, second_config(hp));
    p.initialize(SecondInit::residual_mean);
    double prev = p.objective();
    for (int it = 0; it < 40; ++it) {
      p.step();
      double cur = p.objective();
      EXPECT_LE(cur, prev + 1e-9 * std::abs(prev));
      prev = cur;
    }
  }
}

TEST(FirstStage, ConvergedIterateIsAFixedPoint) {
  auto s = synthetic(60, 2, GroupLayout({3, 3}), 1.0, true, 6);
  HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
  FitOptions opt;
  opt.refit = false;
  for (int k = 0; k < 2; ++k) {
    auto ki = static_cast<std::size_t>(k);
    auto out = fit_first_stage(group_ptrs(s.ds, k), s.ds.family, true, hp.lambda1[ki], hp.alpha1[ki], hp,
                               opt, k);
    EXPECT_EQ(out.trace.stop_reason, "converged");
    Matrix mean = Matrix::Zero(60, 60);
    for (std::size_t l = 0; l < 3; ++l) mean += (s.ds.layers[ki][l] - out.r[l]) / 3.0;
    Matrix fixed = dense_soft(mean, hp.lambda1[ki] / 3.0);
    EXPECT_LE((out.spq - fixed).norm(), 1e-4 * (1.0 + out.spq.norm()));
    for (std::size_t l = 0; l < 3; ++l) {
      Matrix rfix = dense_soft(s.ds.layers[ki][l] - out.spq, hp.lambda1[ki] * hp.alpha1[ki][l]);
      EXPECT_LE((out.r[l] - rfix).norm(), 1e-2 * (1.0 + out.r[l].norm()));
    }
  }
}

TEST(FirstStage, MaskedEntriesDoNotAffectTheIterates) {
  auto s = synthetic(30, 1, GroupLayout({3}), 1.0, false, 7);
  Rng rng(8);
  std::vector<Matrix> masks;
  for (int l = 0; l < 3; ++l) masks.push_back(random_binary_symmetric(30, rng, 0.8));
  std::vector<Matrix> perturbed = s.ds.layers[0];
  for (std::size_t l = 0; l < 3; ++l)
    for (Index i = 0; i < 30; ++i)
      for (Index j = 0; j < 30; ++j)
        if (masks[l](i, j) == 0.0) perturbed[l](i, j) = 50.0;
  std::vector<const Matrix*> mp = {&masks[0], &masks[1], &masks[2]};
  std::vector<const Matrix*> pp = {&perturbed[0], &perturbed[1], &perturbed[2]};
  HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
  FirstStageProblem a(group_ptrs(s.ds, 0), s.ds.family, false, first_config(hp, 0), mp);
  FirstStageProblem b(pp, s.ds.family, false, first_config(hp, 0), mp);
  Matrix spq0 = Matrix::Zero(30, 30);
  std::vector<Matrix> r0(3, Matrix::Zero(30, 30));
  a.set_state(spq0, r0);
  b.set_state(spq0, r0);
  for (int it = 0; it < 10; ++it) {
    a.step();
    b.step();
  }
  EXPECT_LE((a.spq() - b.spq()).norm(), 1e-10);
  EXPECT_NEAR(a.objective(), b.objective(), 1e-8);
}

TEST(Fit, RecoversComponentsOnSampledData) {
  AngleSpec angles;
  angles.s_vu = angles.s_wu = 0.1;
  auto s = synthetic(100, 2, GroupLayout({4, 4}), 1.0, false, 9, angles);
  FitResult r = fit(s.ds, default_hyperparams(s.ds, 3.0, 3.0));
  const auto& dec = r.decomposition;
  EXPECT_EQ(r.traces.size(), 3u);
  EXPECT_EQ(dec.sig_S, (Signature{2, 0}));
  EXPECT_LE((dec.S - s.gt.grams.S).norm() / s.gt.grams.S.norm(), 0.15);
  for (GroupIndex g : s.ds.layout.indices()) {
    const Matrix& truth = s.gt.theta[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)];
    EXPECT_LE((dec.theta(g) - truth).norm() / truth.norm(), 0.2);
  }
  LatentPositions pos = extract_positions(dec);
  EXPECT_EQ(pos.V.cols(), 2);
  EXPECT_LE((gram_of(pos.V, pos.sig_V) - dec.S).norm(), 1e-8 * (1.0 + dec.S.norm()));
}

TEST(Fit, RefitReducesBias) {
  auto s = synthetic(80, 2, GroupLayout({3, 3}), 1.0, false, 10);
  HyperParams hp = default_hyperparams(s.ds, 3.0, 3.0);
  FitOptions raw;
  raw.refit = false;
  FitResult a = fit(s.ds, hp, raw), b = fit(s.ds, hp);
  double ea = (a.decomposition.S - s.gt.grams.S).norm(), eb = (b.decomposition.S - s.gt.grams.S).norm();
  EXPECT_LT(eb, ea);
}

TEST(Fit, SingleLayerGroupWarns) {
  auto s = synthetic(40, 1, GroupLayout({1, 3}), 1.0, false, 11);
  FitResult r = fit(s.ds, default_hyperparams(s.ds, 1.0, 1.0));
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings.front().find("single layer"), std::string::npos);
}

TEST(Fit, SkipSecondStageKeepsGroupTotals) {
  auto s = synthetic(40, 1, GroupLayout({2, 2}), 1.0, false, 12);
  FitOptions opt;
  opt.skip_second_stage = true;
  FitResult r = fit(s.ds, default_hyperparams(s.ds, 1.0, 1.0), opt);
  EXPECT_EQ(r.decomposition.S.norm(), 0.0);
  EXPECT_EQ(r.traces.size(), 2u);
  EXPECT_LE((r.decomposition.Q[1] - r.spq[1]).norm(), 0.0);
}

TEST(Fit, SharedMeanInitializerAlsoConverges) {
  auto s = synthetic(50, 1, GroupLayout({3, 3}), 1.0, false, 13);
  HyperParams hp = default_hyperparams(s.ds, 2.0, 2.0);
  FitOptions opt;
  opt.second_init = SecondInit::shared_mean;
  FitResult a = fit(s.ds, hp, opt), b = fit(s.ds, hp);
  EXPECT_EQ(a.traces.back().stop_reason, "converged");
  EXPECT_LE((a.decomposition.S - b.decomposition.S).norm(), 0.05 * (1.0 + b.decomposition.S.norm()));
}

TEST(Fit, HardThresholdingNeedsRanks) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 14);
  FitOptions opt;
  opt.prox = ProxRule::hard;
  EXPECT_THROW(fit(s.ds, default_hyperparams(s.ds, 1.0, 1.0), opt), InputError);
  opt.oracle_ranks = OracleRanks::uniform(s.ds.layout, 1);
  opt.refit = false;
  FitResult r = fit(s.ds, default_hyperparams(s.ds, 1.0, 1.0), opt);
  EXPECT_EQ(r.decomposition.sig_S.dim(), 1);
  for (auto& g : r.decomposition.sig_R)
    for (auto sig : g) EXPECT_EQ(sig.dim(), 1);
}

TEST(Fit, DivergingLearningRateIsNumericalError) {
  auto s = synthetic(20, 1, GroupLayout({2, 2}), 1.0, false, 15);
  HyperParams hp = default_hyperparams(s.ds, 0.1, 0.1);
  hp.eta1 = hp.eta2 = 3.0;
  try {
    fit(s.ds, hp);
    FAIL() << "expected a NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("--eta"), std::string::npos);
  }
}

TEST(Fit, BernoulliFitIsFinite) {
  auto s = synthetic(60, 1, GroupLayout({3, 3}), 1.0, false, 16, {}, EdgeFamily::bernoulli_logit());
  FitResult r = fit(s.ds, default_hyperparams(s.ds, 1.0, 1.0));
  EXPECT_TRUE(r.decomposition.S.allFinite());
  for (const auto& t : r.traces) EXPECT_TRUE(std::isfinite(t.objective.back()));
}
