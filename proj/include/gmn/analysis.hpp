#pragma once

// Two-group comparison pipeline for correlation-matrix datasets: Fisher z, per-edge covariate
// regression, a group fit, lobe-pair similarity differences of the group embeddings and a
// label-permutation test with Benjamini-Hochberg correction.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/linalg.hpp>
#include <gmn/parallel.hpp>
#include <gmn/solver.hpp>
#include <gmn/tuning.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace gmn {

/// Node -> lobe label; lobes() lists distinct labels in first-appearance order.
struct LobeMap {
  std::vector<std::string> labels;

  std::vector<std::string> lobes() const {
    std::vector<std::string> out;
    for (const auto& l : labels)
      if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
  }
  std::vector<Index> members(const std::string& lobe) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == lobe) out.push_back(static_cast<Index>(i));
    return out;
  }
};

/// Accepts {"labels": [lobe per node]} or {"nodes": {node_label: lobe}} (the latter resolved
/// through the dataset's node labels).
inline LobeMap lobe_map_from_json(const json& j, Index n, const std::vector<std::string>& node_labels = {}) {
  LobeMap map;
  if (j.contains("labels")) {
    try {
      map.labels = j.at("labels").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw InputError("lobes: field 'labels' must be an array of strings");
    }
  } else if (j.contains("nodes")) {
    if (node_labels.empty()) throw InputError("lobes: a node-keyed map needs dataset node labels");
    const json& nodes = j.at("nodes");
    for (const auto& name : node_labels) {
      if (!nodes.contains(name)) throw InputError("lobes: node '" + name + "' has no lobe");
      map.labels.push_back(nodes.at(name).get<std::string>());
    }
  } else {
    throw InputError("lobes: expected field 'labels' or 'nodes'");
  }
  if (static_cast<Index>(map.labels.size()) != n)
    throw InputError("lobes: " + std::to_string(map.labels.size()) + " labels for " + std::to_string(n) + " nodes");
  return map;
}

/// atanh of the off-diagonal entries, ±1 clipped to ±(1 − 1e-6); zero diagonal.
inline Matrix fisher_z(const Matrix& a) {
  const double clip = 1.0 - 1e-6;
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) {
      if (i == j) continue;
      double x = a(i, j);
      if (!std::isfinite(x) || std::abs(x) > 1.0)
        throw InputError("fisher_z: entry (" + std::to_string(i + 1) + "," + std::to_string(j + 1) +
                         ") is outside [-1, 1]");
      out(i, j) = std::atanh(std::clamp(x, -clip, clip));
    }
  return out;
}

struct RegressionResult {
  std::vector<Matrix> residuals;
  std::vector<std::string> kept_columns;  ///< subset of intercept, age, male
  std::vector<std::string> warnings;
};

/// Per off-diagonal pair, OLS of the M edge values on [1, age, male] and the residuals.
/// Columns that do not raise the design's rank are dropped with a warning.
inline RegressionResult regress_out_covariates(const std::vector<Matrix>& layers,
                                               const std::vector<Covariate>& covariates) {
  const Index M = static_cast<Index>(layers.size());
  if (M == 0) throw InputError("regression: no layers");
  if (static_cast<Index>(covariates.size()) != M) throw InputError("regression: covariates missing for some layers");
  const Index n = layers.front().rows();
  RegressionResult res;
  Matrix full(M, 3);
  for (Index l = 0; l < M; ++l) {
    full(l, 0) = 1.0;
    full(l, 1) = covariates[static_cast<std::size_t>(l)].age;
    full(l, 2) = covariates[static_cast<std::size_t>(l)].male ? 1.0 : 0.0;
  }
  const char* names[] = {"intercept", "age", "male"};
  Matrix x(M, 0);
  for (Index c = 0; c < 3; ++c) {
    Matrix trial(M, x.cols() + 1);
    trial << x, full.col(c);
    Eigen::ColPivHouseholderQR<Matrix> qr(trial);
    qr.setThreshold(1e-10);
    if (qr.rank() == trial.cols()) {
      x = trial;
      res.kept_columns.push_back(names[c]);
    } else {
      res.warnings.push_back(std::string("regression: covariate '") + names[c] +
                             "' is collinear with the design and was dropped");
    }
  }
  // Residual maker I − X(XᵀX)⁻¹Xᵀ applied to every pair's edge vector at once.
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  Matrix q = qr.householderQ() * Matrix::Identity(M, x.cols());
  Matrix maker = Matrix::Identity(M, M) - q * q.transpose();
  const Index pairs = n * (n - 1) / 2;
  Matrix y(M, pairs);
  for (Index l = 0; l < M; ++l) {
    Index p = 0;
    for (Index j = 1; j < n; ++j)
      for (Index i = 0; i < j; ++i) y(l, p++) = layers[static_cast<std::size_t>(l)](i, j);
  }
  Matrix e = maker * y;
  for (Index l = 0; l < M; ++l) {
    Matrix r = Matrix::Zero(n, n);
    Index p = 0;
    for (Index j = 1; j < n; ++j)
      for (Index i = 0; i < j; ++i) r(i, j) = r(j, i) = e(l, p++);
    res.residuals.push_back(std::move(r));
  }
  return res;
}

/// One lobe pair's statistic h̄₂ − h̄₁ (undefined when a diagonal pair has < 2 regions).
struct LobeDiff {
  std::string lobe_a;
  std::string lobe_b;
  bool defined = true;
  double diff = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  double q = std::numeric_limits<double>::quiet_NaN();
  std::string stars;
};

/// For each unordered lobe pair (a, b), a = b included: the mean of W_k,r1 · W_k,r2 over region
/// pairs r1 ∈ a, r2 ∈ b, r1 ≠ r2, differenced between groups (group 2 minus group 1).
inline std::vector<LobeDiff> lobe_similarity_diff(const Matrix& w1, const Matrix& w2, const LobeMap& lobes) {
  if (w1.rows() != w2.rows() || static_cast<Index>(lobes.labels.size()) != w1.rows())
    throw InputError("lobe_similarity_diff: positions and lobe map disagree on the node count");
  Matrix h1 = w1 * w1.transpose(), h2 = w2 * w2.transpose();
  auto names = lobes.lobes();
  std::vector<LobeDiff> out;
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a; b < names.size(); ++b) {
      LobeDiff d;
      d.lobe_a = names[a];
      d.lobe_b = names[b];
      auto ra = lobes.members(names[a]), rb = lobes.members(names[b]);
      double s1 = 0.0, s2 = 0.0;
      long count = 0;
      for (Index i : ra)
        for (Index j : rb) {
          if (i == j) continue;
          s1 += h1(i, j);
          s2 += h2(i, j);
          ++count;
        }
      if (count == 0) {
        d.defined = false;
      } else {
        d.diff = (s2 - s1) / static_cast<double>(count);
      }
      out.push_back(d);
    }
  return out;
}

/// Benjamini-Hochberg step-up adjusted values: q_(i) = min_{j ≥ i} min(1, m p_(j) / j).
inline std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    double v = std::min(1.0, p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1));
    running = std::min(running, v);
    // m p / j can round below p when j = m.
    q[order[r]] = std::max(running, p[order[r]]);
  }
  return q;
}

inline std::string significance_stars(double q) {
  if (!(q <= 0.1)) return "";
  if (q <= 0.01) return "***";
  if (q <= 0.05) return "**";
  return "*";
}

/// Rotates W2's leading `dims` columns onto W1's by Procrustes; other columns are untouched.
inline Matrix align_group_embeddings(const Matrix& w1, const Matrix& w2, int dims) {
  if (dims < 0 || dims > w1.cols() || dims > w2.cols())
    throw InputError("align_group_embeddings: dims exceeds the available columns");
  Matrix out = w2;
  if (dims == 0) return out;
  out.leftCols(dims) = w2.leftCols(dims) * procrustes_rotate(w2.leftCols(dims), w1.leftCols(dims));
  return out;
}

struct PipelineConfig {
  bool fisher = false;      ///< layers are correlations to be z-transformed
  bool regress = true;      ///< regress out covariates when the dataset has them
  double c1 = 1.0;
  double c2 = 1.0;
  bool tune = false;        ///< cross-validate λ for the observed fit; permutations reuse it
  CVConfig cv;
  int dims = 3;
  FitOptions fit;
};

struct PermutationResult {
  std::vector<LobeDiff> table;
  int n_perm_requested = 0;
  int n_perm_used = 0;
  std::vector<std::string> warnings;
  HyperParams hp;
  Matrix w1;          ///< group 1 embedding (leading dims)
  Matrix w2_aligned;  ///< group 2 embedding rotated onto group 1
  bool aligned = false;
};

namespace detail {

/// ASE positions of Q_k at its detected rank; `full` reports whether there are >= dims columns.
inline Matrix group_embedding(const LatentDecomposition& dec, int k, int dims, bool& full) {
  AseResult r = ase_extract(dec.Q[static_cast<std::size_t>(k)], dec.sig_Q[static_cast<std::size_t>(k)].dim());
  full = r.positions.cols() >= dims;
  return r.positions;
}

inline std::vector<double> pair_stats(const LatentDecomposition& dec, const LobeMap& lobes) {
  bool f1 = false, f2 = false;
  Matrix w1 = group_embedding(dec, 0, 0, f1), w2 = group_embedding(dec, 1, 0, f2);
  std::vector<double> out;
  for (const auto& d : lobe_similarity_diff(w1, w2, lobes)) out.push_back(d.diff);
  return out;
}

}  // namespace detail

/// Applies Fisher z and covariate regression as configured, returning the transformed dataset.
inline MultiplexDataset preprocess(const MultiplexDataset& ds, const PipelineConfig& cfg,
                                   std::vector<std::string>* warnings = nullptr) {
  MultiplexDataset out = ds;
  out.has_loops = false;
  out.family = EdgeFamily::gaussian(ds.family.is_gaussian() ? ds.family.sigma2 : 1.0);
  if (cfg.fisher)
    for (auto& g : out.layers)
      for (auto& a : g) a = fisher_z(a);
  if (cfg.regress && !ds.covariates.empty()) {
    RegressionResult r = regress_out_covariates(flatten(out.layers), ds.covariates);
    for (GroupIndex g : out.layout.indices())
      out.layers[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)] =
          std::move(r.residuals[static_cast<std::size_t>(out.layout.flat(g))]);
    if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
  }
  for (auto& g : out.layers)
    for (auto& a : g) a.diagonal().setZero();
  return out;
}

/// Observed statistic from the full fit, then `n_perm` refits with the layers' group labels
/// shuffled (group sizes kept). Two-sided add-one p-values, BH q-values over defined pairs.
inline PermutationResult permutation_test(const MultiplexDataset& raw, const LobeMap& lobes,
                                          const PipelineConfig& cfg, int n_perm, std::uint64_t seed) {
  if (raw.groups() != 2) throw InputError("permutation test: exactly two groups are required");
  if (n_perm < 1) throw InputError("permutation test: n_perm must be >= 1");
  if (static_cast<Index>(lobes.labels.size()) != raw.n) throw InputError("permutation test: lobe map size mismatch");
  PermutationResult res;
  res.n_perm_requested = n_perm;
  MultiplexDataset ds = preprocess(raw, cfg, &res.warnings);
  res.hp = cfg.tune ? tune(ds, cfg.cv, cfg.fit).hp : default_hyperparams(ds, cfg.c1, cfg.c2);
  FitResult observed = fit(ds, res.hp, cfg.fit);
  res.warnings.insert(res.warnings.end(), observed.warnings.begin(), observed.warnings.end());
  const LatentDecomposition& dec = observed.decomposition;

  bool full1 = false, full2 = false;
  Matrix w1 = detail::group_embedding(dec, 0, cfg.dims, full1);
  Matrix w2 = detail::group_embedding(dec, 1, cfg.dims, full2);
  res.table = lobe_similarity_diff(w1, w2, lobes);
  const int dims = std::min<int>(cfg.dims, static_cast<int>(std::min(w1.cols(), w2.cols())));
  res.aligned = full1 && full2 && cfg.dims > 0;
  Matrix w2a = align_group_embeddings(w1, w2, dims);
  res.w1 = Matrix::Zero(ds.n, cfg.dims);
  res.w2_aligned = Matrix::Zero(ds.n, cfg.dims);
  res.w1.leftCols(std::min<Index>(cfg.dims, w1.cols())) = w1.leftCols(std::min<Index>(cfg.dims, w1.cols()));
  res.w2_aligned.leftCols(std::min<Index>(cfg.dims, w2a.cols())) = w2a.leftCols(std::min<Index>(cfg.dims, w2a.cols()));

  const std::size_t P = res.table.size();
  std::vector<std::vector<double>> perm_stats(static_cast<std::size_t>(n_perm));
  std::vector<std::string> failures(static_cast<std::size_t>(n_perm));
  std::vector<Matrix> flat = flatten(ds.layers);
  FitOptions perm_opt = cfg.fit;
  parallel_for(n_perm, [&](int t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> order(flat.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MultiplexDataset perm = ds;
    std::size_t pos = 0;
    for (GroupIndex g : perm.layout.indices())
      perm.layers[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)] = flat[order[pos++]];
    try {
      perm_stats[static_cast<std::size_t>(t)] = detail::pair_stats(fit(perm, res.hp, perm_opt).decomposition, lobes);
    } catch (const NumericalError& e) {
      failures[static_cast<std::size_t>(t)] = e.what();
    }
  });
  for (int t = 0; t < n_perm; ++t)
    if (!failures[static_cast<std::size_t>(t)].empty())
      res.warnings.push_back("permutation " + std::to_string(t + 1) + " dropped: " + failures[static_cast<std::size_t>(t)]);

  res.n_perm_used = static_cast<int>(
      std::count_if(perm_stats.begin(), perm_stats.end(), [](const auto& s) { return !s.empty(); }));
  std::vector<double> p_defined;
  std::vector<std::size_t> defined_idx;
  for (std::size_t i = 0; i < P; ++i) {
    LobeDiff& d = res.table[i];
    if (!d.defined) continue;
    int exceed = 0;
    for (const auto& s : perm_stats) {
      if (s.empty()) continue;
      // Relative slack so that exact ties survive floating-point noise in the refit.
      if (std::abs(s[i]) >= std::abs(d.diff) * (1.0 - 1e-12)) ++exceed;
    }
    d.p = (1.0 + exceed) / (1.0 + res.n_perm_used);
    p_defined.push_back(d.p);
    defined_idx.push_back(i);
  }
  std::vector<double> q = benjamini_hochberg(p_defined);
  for (std::size_t j = 0; j < defined_idx.size(); ++j) {
    LobeDiff& d = res.table[defined_idx[j]];
    d.q = q[j];
    d.stars = significance_stars(d.q);
  }
  return res;
}

}  // namespace gmn
