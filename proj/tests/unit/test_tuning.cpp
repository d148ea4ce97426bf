#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gmn;
using namespace gmn::testing;

namespace {

double pair_count(const Matrix& m) {
  double off = m.sum() - m.diagonal().sum();
  return off / 2.0 + m.diagonal().sum();
}

CVConfig small_cv(std::uint64_t seed = 1) {
  CVConfig cfg;
  cfg.folds = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(EdgeFolds, EightTwoSplitOnTenPairs) {
  auto folds = make_edge_folds(5, GroupLayout({2, 2}), false, CVConfig{});
  ASSERT_EQ(folds.size(), 5u);
  for (const auto& f : folds)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t l = 0; l < 2; ++l) {
        const Matrix& tr = f.train[k][l];
        const Matrix& te = f.test[k][l];
        EXPECT_EQ(pair_count(tr), 8.0);
        EXPECT_EQ(pair_count(te), 2.0);
        EXPECT_EQ(tr.diagonal().sum() + te.diagonal().sum(), 0.0);
        EXPECT_EQ((tr + te - Matrix::Ones(5, 5) + Matrix::Identity(5, 5)).norm(), 0.0);
        EXPECT_EQ((tr - tr.transpose()).norm(), 0.0);
      }
}

TEST(EdgeFolds, LoopsIncludeTheDiagonal) {
  auto folds = make_edge_folds(4, GroupLayout({2}), true, CVConfig{});
  for (const auto& f : folds) EXPECT_EQ((f.train[0][0] + f.test[0][0] - Matrix::Ones(4, 4)).norm(), 0.0);
}

TEST(EdgeFolds, PartitionCoversEveryPairOnce) {
  CVConfig cfg;
  cfg.partition = true;
  auto folds = make_edge_folds(9, GroupLayout({3}), false, cfg);
  for (std::size_t l = 0; l < 3; ++l) {
    Matrix cover = Matrix::Zero(9, 9);
    for (const auto& f : folds) cover += f.test[0][l];
    EXPECT_EQ((cover - Matrix::Ones(9, 9) + Matrix::Identity(9, 9)).norm(), 0.0);
  }
}

TEST(EdgeFolds, SeedsMatterAndLayersAreIndependent) {
  CVConfig a, b;
  b.seed = 1;
  auto fa = make_edge_folds(20, GroupLayout({2}), false, a);
  auto fb = make_edge_folds(20, GroupLayout({2}), false, b);
  auto fa2 = make_edge_folds(20, GroupLayout({2}), false, a);
  EXPECT_GT((fa[0].train[0][0] - fb[0].train[0][0]).norm(), 0.0);
  EXPECT_EQ((fa[0].train[0][0] - fa2[0].train[0][0]).norm(), 0.0);
  EXPECT_GT((fa[0].train[0][0] - fa[0].train[0][1]).norm(), 0.0);
  EXPECT_GT((fa[0].train[0][0] - fa[1].train[0][0]).norm(), 0.0);
}

TEST(CVConfig, Validation) {
  CVConfig c;
  c.train_fraction = 1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = CVConfig{};
  c.grid.clear();
  EXPECT_THROW(c.validate(), InputError);
  c.grid = {-1.0};
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Tuning, OnePointGridIsReturned) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 1);
  CVConfig cfg = small_cv();
  cfg.grid = {0.7};
  TuneResult r = tune(s.ds, cfg);
  EXPECT_EQ(r.first[0].chosen_c(), 0.7);
  EXPECT_EQ(r.second.chosen_c(), 0.7);
  EXPECT_NEAR(r.hp.lambda1[0], 0.7 * std::sqrt(60.0), 1e-12);
  EXPECT_NEAR(r.hp.lambda2, 0.7 * std::sqrt(120.0), 1e-12);
}

TEST(Tuning, ChosenPointMinimizesTheMeanScore) {
  auto s = synthetic(40, 2, GroupLayout({3, 3}), 1.0, false, 2);
  TuneResult r = tune(s.ds, small_cv());
  for (const CVResult* cv : {&r.first[0], &r.first[1], &r.second}) {
    ASSERT_EQ(cv->scores.size(), 6u);
    for (double m : cv->mean_scores) EXPECT_LE(cv->mean_scores[cv->chosen], m);
  }
}

TEST(Tuning, NoiselessDataSelectsTheSmallestMultiplier) {
  auto s = synthetic(40, 2, GroupLayout({3, 3}), 0.0, false, 3);
  TuneResult r = tune(s.ds, small_cv());
  EXPECT_EQ(r.first[0].chosen_c(), 0.03);
  EXPECT_EQ(r.first[1].chosen_c(), 0.03);
  EXPECT_EQ(r.second.chosen_c(), 0.03);
}

TEST(Tuning, ScoresAreReproducible) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 4);
  CVConfig cfg = small_cv(9);
  cfg.grid = {0.3, 3.0};
  TuneResult a = tune(s.ds, cfg), b = tune(s.ds, cfg);
  EXPECT_EQ(a.second.scores, b.second.scores);
  EXPECT_EQ(a.first[1].scores, b.first[1].scores);
}

TEST(Tuning, TestEntriesDoNotInfluenceTheFit) {
  auto s = synthetic(30, 1, GroupLayout({3, 2}), 1.0, false, 5);
  auto folds = make_edge_folds(s.ds, small_cv());
  MultiplexDataset zeroed = s.ds;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t l = 0; l < zeroed.layers[k].size(); ++l)
      zeroed.layers[k][l] = zeroed.layers[k][l].cwiseProduct(folds[0].train[k][l]);
  FitOptions opt;
  opt.masks = &folds[0].train;
  HyperParams hp = default_hyperparams(s.ds, 1.0, 1.0);
  FitResult a = fit(s.ds, hp, opt), b = fit(zeroed, hp, opt);
  EXPECT_LE((a.decomposition.S - b.decomposition.S).norm(), 1e-9 * (1.0 + a.decomposition.S.norm()));
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t l = 0; l < a.decomposition.R[k].size(); ++l)
      EXPECT_LE((a.decomposition.R[k][l] - b.decomposition.R[k][l]).norm(), 1e-9 * (1.0 + a.decomposition.R[k][l].norm()));
}

TEST(Tuning, AlphaGridExpandsCandidates) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 6);
  CVConfig cfg = small_cv();
  cfg.grid = {0.3, 1.0};
  cfg.tune_alpha = true;
  TuneResult r = tune(s.ds, cfg);
  EXPECT_EQ(r.first[0].grid.size(), 6u);
  const double m = 2.0;
  EXPECT_NEAR(r.hp.alpha1[0][0], r.first[0].chosen_alpha_mult() / std::sqrt(m), 1e-15);
}

TEST(Tuning, JsonReportHasTheDocumentedFields) {
  auto s = synthetic(30, 1, GroupLayout({2, 2}), 1.0, false, 7);
  CVConfig cfg = small_cv();
  cfg.grid = {0.5, 2.0};
  TuneResult r = tune(s.ds, cfg);
  json j = cv_to_json(r.second);
  for (const char* key : {"grid", "fold_scores", "mean_scores", "chosen_c"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["fold_scores"].size(), 2u);
  EXPECT_EQ(j["fold_scores"][0].size(), 2u);
}
