#include <gtest/gtest.h>

#include "test_util.hpp"

#include <fstream>

using namespace gmn;
using namespace gmn::testing;
namespace fs = std::filesystem;

namespace {

MultiplexDataset small_dataset(Index n, bool loops, std::uint64_t seed) {
  Rng rng(seed);
  LayerSet layers(2);
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < 2; ++l) layers[static_cast<std::size_t>(k)].push_back(random_symmetric(n, rng));
  return make_dataset(std::move(layers), GroupLayout({2, 2}), EdgeFamily::gaussian(1.0), loops);
}

}  // namespace

TEST(Dataset, RoundTripIsExact) {
  auto dir = scratch_dir("roundtrip");
  MultiplexDataset ds = small_dataset(5, true, 1);
  ds.node_labels = {"a", "b", "c", "d", "e"};
  ds.covariates = {{30, true}, {41.5, false}, {55, true}, {62, false}};
  save_dataset(ds, dir);
  MultiplexDataset back = load_dataset(dir);
  EXPECT_EQ(back.n, 5);
  EXPECT_EQ(back.groups(), 2);
  EXPECT_EQ(back.total_layers(), 4);
  EXPECT_EQ(back.node_labels, ds.node_labels);
  ASSERT_EQ(back.covariates.size(), 4u);
  EXPECT_EQ(back.covariates[1].age, 41.5);
  EXPECT_FALSE(back.covariates[1].male);
  for (GroupIndex g : ds.layout.indices()) EXPECT_EQ((back.layer(g) - ds.layer(g)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(back.family.sigma2, 1.0);
  fs::remove_all(dir);
}

TEST(Dataset, SampledRoundTripIsExact) {
  auto dir = scratch_dir("sampled");
  auto s = synthetic(40, 2, GroupLayout({3, 3}), 1.0, false, 5);
  save_dataset(s.ds, dir);
  MultiplexDataset back = load_dataset(dir);
  for (GroupIndex g : s.ds.layout.indices())
    EXPECT_EQ((back.layer(g) - s.ds.layer(g)).cwiseAbs().maxCoeff(), 0.0);
  fs::remove_all(dir);
}

TEST(Dataset, DimensionMismatchIsReported) {
  auto dir = scratch_dir("mismatch");
  save_dataset(small_dataset(5, true, 2), dir);
  Matrix short_layer = Matrix::Zero(4, 5);
  write_matrix_csv(dir / "layer_1_1.csv", short_layer);
  try {
    load_dataset(dir);
    FAIL() << "expected an InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, MissingManifest) {
  auto dir = scratch_dir("nomanifest");
  EXPECT_THROW(load_dataset(dir), InputError);
  fs::remove_all(dir);
}

TEST(Dataset, NonFiniteEntryRejected) {
  auto dir = scratch_dir("nonfinite");
  save_dataset(small_dataset(3, true, 3), dir);
  std::ofstream(dir / "layer_1_2.csv") << "0,1,nan\n1,0,0\nnan,0,0\n";
  EXPECT_THROW(load_dataset(dir), InputError);
  fs::remove_all(dir);
}

TEST(Dataset, BernoulliRejectsNonBinary) {
  auto dir = scratch_dir("nonbinary");
  LayerSet layers(2, std::vector<Matrix>(2, Matrix::Zero(3, 3)));
  layers[0][0](0, 1) = layers[0][0](1, 0) = 1.0;
  MultiplexDataset ds = make_dataset(layers, GroupLayout({2, 2}), EdgeFamily::bernoulli_logit(), false);
  save_dataset(ds, dir);
  EXPECT_NO_THROW(load_dataset(dir));
  std::ofstream(dir / "layer_2_1.csv") << "0,0.37,0\n0.37,0,0\n0,0,0\n";
  EXPECT_THROW(load_dataset(dir), InputError);
  fs::remove_all(dir);
}

TEST(Dataset, GaussianAcceptsReals) {
  auto dir = scratch_dir("reals");
  save_dataset(small_dataset(3, false, 4), dir);
  std::ofstream(dir / "layer_2_1.csv") << "0,0.37,0\n0.37,0,0\n0,0,0\n";
  MultiplexDataset ds = load_dataset(dir);
  EXPECT_EQ(ds.layer({1, 0})(0, 1), 0.37);
  fs::remove_all(dir);
}

TEST(Dataset, AsymmetryPolicy) {
  auto dir = scratch_dir("asym");
  save_dataset(small_dataset(3, true, 5), dir);
  std::ofstream(dir / "layer_1_1.csv") << "1,0.5,0\n0.5000000001,1,0\n0,0,1\n";
  LoadReport rep;
  EXPECT_NO_THROW(load_dataset(dir, {}, &rep));
  EXPECT_TRUE(rep.warnings.empty());
  std::ofstream(dir / "layer_1_1.csv") << "1,0.5,0\n0.4,1,0\n0,0,1\n";
  EXPECT_THROW(load_dataset(dir), InputError);
  LoadReport forced;
  MultiplexDataset ds = load_dataset(dir, {true}, &forced);
  EXPECT_EQ(forced.warnings.size(), 1u);
  EXPECT_NEAR(forced.max_asymmetry, 0.1, 1e-12);
  EXPECT_NEAR(ds.layer({0, 0})(0, 1), 0.45, 1e-15);
  fs::remove_all(dir);
}

TEST(Dataset, LoopFreeDiagonalIgnored) {
  auto dir = scratch_dir("loops");
  save_dataset(small_dataset(3, false, 6), dir);
  std::ofstream(dir / "layer_1_1.csv") << "9,0.5,0\n0.5,9,0\n0,0,9\n";
  MultiplexDataset ds = load_dataset(dir);
  EXPECT_EQ(ds.layer({0, 0}).diagonal().norm(), 0.0);
  fs::remove_all(dir);
}

TEST(Dataset, WriteToUnwritablePathFails) {
  auto dir = scratch_dir("readonly");
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(save_dataset(small_dataset(3, true, 7), dir / "blocker" / "sub"), InputError);
  fs::remove_all(dir);
}

TEST(Dataset, IdentifiabilityValidation) {
  MultiplexDataset ds = small_dataset(4, true, 8);
  EXPECT_NO_THROW(ds.validate(true));
  LayerSet one(1, std::vector<Matrix>(2, Matrix::Zero(4, 4)));
  MultiplexDataset single = make_dataset(one, GroupLayout({2}), EdgeFamily::gaussian(), true);
  EXPECT_THROW(single.validate(true), InputError);
}

TEST(Decomposition, DirectoryRoundTrip) {
  auto dir = scratch_dir("decomp");
  GroundTruth gt = sample_components(30, 2, GroupLayout({2, 2}), {}, 9);
  write_decomposition_dir(dir, gt.grams, &gt.positions, json{{"kind", "truth"}}, "truth.json");
  EXPECT_TRUE(fs::exists(dir / "V.csv"));
  EXPECT_TRUE(fs::exists(dir / "U_2_2.csv"));
  LatentDecomposition back = read_decomposition_dir(dir);
  EXPECT_EQ(back.sig_S, (Signature{2, 0}));
  EXPECT_EQ(back.sig_R[1][1], (Signature{2, 0}));
  EXPECT_EQ((back.R[1][0] - gt.grams.R[1][0]).cwiseAbs().maxCoeff(), 0.0);
  fs::remove_all(dir);
}

TEST(Decomposition, SignaturesFollowEigenvalueSigns) {
  Rng rng(10);
  Matrix b = random_basis(10, 3, rng);
  Vector g(3);
  g << 4, -2, 1e-8;
  LatentDecomposition dec;
  dec.S = b * g.asDiagonal() * b.transpose();
  dec.Q = {Matrix::Zero(10, 10)};
  dec.R = {{Matrix::Zero(10, 10)}};
  dec.detect_signatures();
  EXPECT_EQ(dec.sig_S, (Signature{1, 1}));
  EXPECT_EQ(dec.sig_Q[0], (Signature{0, 0}));
}
