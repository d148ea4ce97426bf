#pragma once

// Comparison methods: MultiNeSS (one shared plus individual components, no group layer), the
// rank-oracle hard-thresholding variant of the two-stage fit, MASE with COSIE-style score
// matrices, and rank-oracle estimators that know all but one component.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/linalg.hpp>
#include <gmn/sampler.hpp>
#include <gmn/solver.hpp>

#include <Eigen/SVD>

#include <vector>

namespace gmn {

struct MultinessResult {
  Matrix shared;                    ///< F
  std::vector<Matrix> individual;   ///< G_l
  LossTrace trace;
  std::optional<GlmReport> refit;
};

/// Shared-plus-individual fit of a set of layers through the first-stage routine, with
/// thresholds λ (shared) and λα_l (individual).
inline MultinessResult fit_multiness(const std::vector<const Matrix*>& layers, const EdgeFamily& fam,
                                     bool has_loops, double lambda, const std::vector<double>& alpha,
                                     const HyperParams& hp, bool refit = true) {
  if (layers.size() < 2) throw InputError("multiness: at least two layers are required");
  FitOptions opt;
  opt.refit = refit;
  FirstStageOutput out = fit_first_stage(layers, fam, has_loops, lambda, alpha, hp, opt, 0);
  out.trace.subproblem = "multiness";
  return MultinessResult{std::move(out.spq), std::move(out.r), std::move(out.trace), out.refit};
}

/// MultiNeSS on every layer of the dataset, ignoring groups, with λ = c√(nM), α_l = 1/√M.
/// Reported as a decomposition with S = F, all Q_k = 0 and R_kl = G_kl.
inline LatentDecomposition fit_multiness_all(const MultiplexDataset& ds, double c, const HyperParams& base,
                                             bool refit = true) {
  ds.validate();
  std::vector<const Matrix*> layers;
  for (GroupIndex g : ds.layout.indices()) layers.push_back(&ds.layer(g));
  const double M = ds.layout.total();
  std::vector<double> alpha(layers.size(), 1.0 / std::sqrt(M));
  MultinessResult r = fit_multiness(layers, ds.family, ds.has_loops, c * std::sqrt(static_cast<double>(ds.n) * M),
                                    alpha, base, refit);
  LatentDecomposition dec;
  dec.S = std::move(r.shared);
  dec.Q.assign(static_cast<std::size_t>(ds.groups()), Matrix::Zero(ds.n, ds.n));
  dec.R.resize(static_cast<std::size_t>(ds.groups()));
  for (GroupIndex g : ds.layout.indices())
    dec.R[static_cast<std::size_t>(g.k)].push_back(std::move(r.individual[static_cast<std::size_t>(ds.layout.flat(g))]));
  dec.detect_signatures();
  return dec;
}

/// Two-stage fit with every soft threshold replaced by hard thresholding at the true ranks
/// (S+Q_k at d0+d_k), the convex path's initializers and stopping rule, and no refit.
inline FitResult fit_oracle_nonconvex(const MultiplexDataset& ds, const OracleRanks& ranks,
                                      std::optional<HyperParams> hp = std::nullopt) {
  HyperParams h = hp ? *hp : default_hyperparams(ds, 1.0, 1.0);
  auto check = [&](int r) {
    if (r < 0 || r > ds.n) throw InputError("oracle rank exceeds n");
  };
  if (static_cast<int>(ranks.dk.size()) != ds.groups() || static_cast<int>(ranks.dkl.size()) != ds.groups())
    throw InputError("oracle ranks do not match the number of groups");
  check(ranks.d0);
  for (int k = 0; k < ds.groups(); ++k) {
    auto ki = static_cast<std::size_t>(k);
    check(ranks.dk[ki]);
    check(ranks.d0 + ranks.dk[ki]);
    if (static_cast<int>(ranks.dkl[ki].size()) != ds.layout.size(k))
      throw InputError("oracle ranks do not match the group sizes");
    for (int r : ranks.dkl[ki]) check(r);
  }
  FitOptions opt;
  opt.prox = ProxRule::hard;
  opt.oracle_ranks = ranks;
  opt.refit = false;
  return fit(ds, h, opt);
}

/// MASE: per-layer leading eigenvectors (dims[k][l] of them, by magnitude), a joint basis V̂
/// of the top `joint_dim` left singular vectors of their concatenation, and per-layer
/// estimates V̂ (V̂ᵀ A V̂) V̂ᵀ.
inline LayerSet fit_mase(const MultiplexDataset& ds, const std::vector<std::vector<int>>& dims, int joint_dim) {
  if (joint_dim < 0 || joint_dim > ds.n) throw InputError("mase: joint dimension exceeds n");
  if (static_cast<int>(dims.size()) != ds.groups()) throw InputError("mase: dims do not match the groups");
  Index total = 0;
  for (int k = 0; k < ds.groups(); ++k) {
    if (static_cast<int>(dims[static_cast<std::size_t>(k)].size()) != ds.layout.size(k))
      throw InputError("mase: dims do not match the group sizes");
    for (int d : dims[static_cast<std::size_t>(k)]) {
      if (d < 0 || d > ds.n) throw InputError("mase: layer dimension exceeds n");
      total += d;
    }
  }
  if (joint_dim > total) throw InputError("mase: joint dimension exceeds the concatenated columns");
  Matrix concat(ds.n, total);
  Index col = 0;
  for (GroupIndex g : ds.layout.indices()) {
    int d = dims[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)];
    if (d == 0) continue;
    concat.middleCols(col, d) = eigh_trunc(ds.layer(g), d).vectors;
    col += d;
  }
  Matrix basis = Matrix::Zero(ds.n, joint_dim);
  if (joint_dim > 0) {
    Eigen::BDCSVD<Matrix> svd(concat, Eigen::ComputeThinU);
    basis = svd.matrixU().leftCols(joint_dim);
  }
  LayerSet out(static_cast<std::size_t>(ds.groups()));
  for (GroupIndex g : ds.layout.indices()) {
    Matrix score = basis.transpose() * ds.layer(g) * basis;
    out[static_cast<std::size_t>(g.k)].push_back(symmetrized(basis * score * basis.transpose()));
  }
  return out;
}

/// Rank-oracle estimators: each component is the hard-thresholded average of the layers with
/// the other two true components subtracted,
///   Ŝ = [(1/M) Σ (A_kl − Q_k − R_kl)]_{d0}, Q̂_k = [(1/m_k) Σ_l (A_kl − S − R_kl)]_{d_k},
///   R̂_kl = [A_kl − S − Q_k]_{d_kl}.
/// For loop-free data the unobserved diagonal of A is taken from the true Θ.
inline LatentDecomposition oracle_estimators(const MultiplexDataset& ds, const GroundTruth& gt) {
  if (ds.n != gt.n || ds.layout.sizes() != gt.layout.sizes())
    throw InputError("oracle estimators: dataset and ground truth disagree");
  const auto& tr = gt.grams;
  auto observed = [&](GroupIndex g) {
    Matrix a = ds.layer(g);
    if (!ds.has_loops)
      a.diagonal() = gt.theta[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)].diagonal();
    return a;
  };
  auto rank = [](const Matrix& m) { return static_cast<int>(low_rank_eigs(m).size()); };
  const Index n = ds.n;
  LatentDecomposition out;
  Matrix s_sum = Matrix::Zero(n, n);
  out.Q.resize(static_cast<std::size_t>(ds.groups()));
  out.R.resize(static_cast<std::size_t>(ds.groups()));
  for (int k = 0; k < ds.groups(); ++k) {
    auto ki = static_cast<std::size_t>(k);
    Matrix q_sum = Matrix::Zero(n, n);
    for (int l = 0; l < ds.layout.size(k); ++l) {
      auto li = static_cast<std::size_t>(l);
      Matrix a = observed({k, l});
      s_sum += a - tr.Q[ki] - tr.R[ki][li];
      q_sum += a - tr.S - tr.R[ki][li];
      out.R[ki].push_back(hard_threshold(a - tr.S - tr.Q[ki], rank(tr.R[ki][li])));
    }
    out.Q[ki] = hard_threshold(q_sum / ds.layout.size(k), rank(tr.Q[ki]));
  }
  out.S = hard_threshold(s_sum / ds.layout.total(), rank(tr.S));
  out.detect_signatures();
  return out;
}

}  // namespace gmn
