#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gmn;
using namespace gmn::testing;

TEST(Multiness, MatchesTheFirstStageForOneGroup) {
  auto s = synthetic(40, 2, GroupLayout({3, 3}), 1.0, false, 1);
  HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
  FitOptions opt;
  opt.skip_second_stage = true;
  FitResult full = fit(s.ds, hp, opt);
  std::vector<const Matrix*> layers;
  for (const Matrix& a : s.ds.layers[1]) layers.push_back(&a);
  MultinessResult m = fit_multiness(layers, s.ds.family, false, hp.lambda1[1], hp.alpha1[1], hp);
  EXPECT_EQ((m.shared - full.spq[1]).norm(), 0.0);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ((m.individual[l] - full.decomposition.R[1][l]).norm(), 0.0);
}

TEST(Multiness, SingleLayerIsAnError) {
  Matrix a = Matrix::Zero(5, 5);
  HyperParams hp = default_hyperparams(5, GroupLayout({1}), EdgeFamily::gaussian(), 1.0, 1.0);
  EXPECT_THROW(fit_multiness({&a}, EdgeFamily::gaussian(), false, 1.0, {1.0}, hp), InputError);
}

TEST(Multiness, AllLayersVariantPoolsEveryLayer) {
  auto s = synthetic(60, 2, GroupLayout({3, 3}), 1.0, false, 2);
  HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
  LatentDecomposition dec = fit_multiness_all(s.ds, 2.0, hp);
  EXPECT_EQ(dec.Q.size(), 2u);
  EXPECT_EQ(dec.Q[0].norm(), 0.0);
  ASSERT_EQ(dec.R[1].size(), 3u);
  std::vector<const Matrix*> layers;
  for (GroupIndex g : s.ds.layout.indices()) layers.push_back(&s.ds.layer(g));
  MultinessResult m = fit_multiness(layers, s.ds.family, false, 2.0 * std::sqrt(60.0 * 6.0),
                                    std::vector<double>(6, 1.0 / std::sqrt(6.0)), hp);
  EXPECT_EQ((dec.S - m.shared).norm(), 0.0);
  EXPECT_EQ((dec.R[1][2] - m.individual[5]).norm(), 0.0);
}

TEST(OracleNonconvex, NoiselessRecovery) {
  auto s = synthetic(60, 2, GroupLayout({3, 3}), 0.0, true, 3);
  FitResult r = fit_oracle_nonconvex(s.ds, OracleRanks::uniform(s.ds.layout, 2));
  for (GroupIndex g : s.ds.layout.indices()) {
    const Matrix& t = s.gt.theta[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)];
    EXPECT_LE((r.decomposition.theta(g) - t).norm() / t.norm(), 1e-6);
  }
}

TEST(OracleNonconvex, ZeroRanksGiveZeroDecomposition) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 4);
  FitResult r = fit_oracle_nonconvex(s.ds, OracleRanks::uniform(s.ds.layout, 0));
  EXPECT_EQ(r.decomposition.S.norm(), 0.0);
  for (const auto& g : r.decomposition.R)
    for (const auto& m : g) EXPECT_EQ(m.norm(), 0.0);
}

TEST(OracleNonconvex, RankBeyondNIsRejected) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 5);
  EXPECT_THROW(fit_oracle_nonconvex(s.ds, OracleRanks::uniform(s.ds.layout, 20)), InputError);
}

TEST(Mase, SingleLayerOwnEigenspaceIsHardThreshold) {
  auto s = synthetic(30, 1, GroupLayout({1}), 1.0, false, 6);
  LayerSet est = fit_mase(s.ds, {{4}}, 4);
  EXPECT_LE((est[0][0] - hard_threshold(s.ds.layer({0, 0}), 4)).norm(), 1e-8);
}

TEST(Mase, IdenticalLayersGiveIdenticalEstimates) {
  auto s = synthetic(30, 1, GroupLayout({2}), 1.0, false, 7);
  s.ds.layers[0][1] = s.ds.layers[0][0];
  LayerSet est = fit_mase(s.ds, {{3, 3}}, 4);
  EXPECT_LE((est[0][0] - est[0][1]).norm(), 1e-10);
}

TEST(Mase, ProjectionIsIdempotent) {
  auto s = synthetic(40, 1, GroupLayout({2, 2}), 1.0, false, 8);
  std::vector<std::vector<int>> dims = {{3, 3}, {3, 3}};
  LayerSet est = fit_mase(s.ds, dims, 7);
  MultiplexDataset again = s.ds;
  again.layers = est;
  LayerSet est2 = fit_mase(again, dims, 7);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t l = 0; l < 2; ++l) EXPECT_LE((est2[k][l] - est[k][l]).norm(), 1e-8 * (1.0 + est[k][l].norm()));
}

TEST(Mase, DimensionOverflowIsRejected) {
  auto s = synthetic(20, 1, GroupLayout({2}), 1.0, false, 9);
  EXPECT_THROW(fit_mase(s.ds, {{3, 3}}, 21), InputError);
  EXPECT_THROW(fit_mase(s.ds, {{3, 3}}, 7), InputError);
}

TEST(OracleEstimators, NoiselessDataGivesExactComponents) {
  for (bool loops : {true, false}) {
    auto s = synthetic(40, 2, GroupLayout({2, 3}), 0.0, loops, 10);
    LatentDecomposition o = oracle_estimators(s.ds, s.gt);
    EXPECT_LE((o.S - s.gt.grams.S).norm(), 1e-8 * s.gt.grams.S.norm());
    EXPECT_LE((o.Q[1] - s.gt.grams.Q[1]).norm(), 1e-8 * s.gt.grams.Q[1].norm());
    EXPECT_LE((o.R[1][2] - s.gt.grams.R[1][2]).norm(), 1e-8 * s.gt.grams.R[1][2].norm());
  }
}

TEST(OracleEstimators, IndividualIsHardThresholdOfSignalPlusNoise) {
  auto s = synthetic(40, 2, GroupLayout({2, 2}), 1.0, true, 11);
  LatentDecomposition o = oracle_estimators(s.ds, s.gt);
  Matrix noisy = s.ds.layer({1, 0}) - s.gt.grams.S - s.gt.grams.Q[1];
  EXPECT_LE((o.R[1][0] - hard_threshold(noisy, 2)).norm(), 1e-10);
}

TEST(OracleEstimators, BeatTheConvexFitOnS) {
  std::vector<double> oracle, convex;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = synthetic(60, 2, GroupLayout({3, 3}), 1.0, false, 100 + seed);
    oracle.push_back((oracle_estimators(s.ds, s.gt).S - s.gt.grams.S).norm());
    convex.push_back((fit(s.ds, default_hyperparams(s.ds, 3.0, 3.0)).decomposition.S - s.gt.grams.S).norm());
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[4] + v[5]);
  };
  EXPECT_LE(median(oracle), median(convex));
}
