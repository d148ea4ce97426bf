#pragma once

// Synthetic latent components with prescribed subspace cosines, layer sampling, and the
// rank-based identifiability checks.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/linalg.hpp>

#include <Eigen/Cholesky>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace gmn {

/// Target cosines between component types; each in [0, 1).
struct AngleSpec {
  double s_vw = 0.0;
  double s_vu = 0.0;
  double s_ww = 0.0;
  double s_wu = 0.0;
  double s_uu = 0.0;
};

/// Ω over the component order V, W_1..W_K, U_11..U_Km_K.
inline Matrix angle_matrix(const AngleSpec& a, const GroupLayout& layout) {
  const int K = layout.groups(), M = layout.total();
  const int size = 1 + K + M;
  Matrix omega = Matrix::Identity(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      if (i == j) continue;
      bool vi = i == 0, vj = j == 0;
      bool wi = i >= 1 && i <= K, wj = j >= 1 && j <= K;
      double s;
      if (vi || vj) s = (wi || wj) ? a.s_vw : a.s_vu;
      else if (wi && wj) s = a.s_ww;
      else if (wi || wj) s = a.s_wu;
      else s = a.s_uu;
      omega(i, j) = s;
    }
  }
  return omega;
}

namespace detail {
inline bool positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return false;
  return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() > 1e-12;
}
}  // namespace detail

/// Throws InputError naming the first block of Ω that fails positive definiteness.
inline void check_angle_spec(const AngleSpec& a, const GroupLayout& layout) {
  for (auto [name, v] : std::array<std::pair<const char*, double>, 5>{
           {{"s_vw", a.s_vw}, {"s_vu", a.s_vu}, {"s_ww", a.s_ww}, {"s_wu", a.s_wu}, {"s_uu", a.s_uu}}}) {
    if (!(v >= 0.0 && v < 1.0)) throw InputError(std::string(name) + " must lie in [0, 1)");
  }
  const int K = layout.groups(), M = layout.total();
  Matrix omega = angle_matrix(a, layout);
  if (!detail::positive_definite(omega.block(1, 1, K, K)))
    throw InputError("angle matrix not positive definite: group block Sigma_K(s_ww) fails");
  if (!detail::positive_definite(omega.block(1 + K, 1 + K, M, M)))
    throw InputError("angle matrix not positive definite: individual block Sigma_M(s_uu) fails");
  if (!detail::positive_definite(omega.topLeftCorner(1 + K, 1 + K)))
    throw InputError("angle matrix not positive definite: shared-group block (s_vw with s_ww) fails");
  if (!detail::positive_definite(omega))
    throw InputError("angle matrix not positive definite: cross blocks (s_vu, s_wu) fail");
}

struct GroundTruth {
  Index n = 0;
  int d = 0;
  GroupLayout layout;
  AngleSpec angles;
  Matrix L;  ///< n x d(1+K+M): [V, W_1..W_K, U_11..U_Km_K]
  LatentPositions positions;
  LatentDecomposition grams;
  LayerSet theta;
};

/// Draws latent positions whose scaled Gram (1/n)LᵀL equals Ω ⊗ I_d exactly.
inline GroundTruth sample_components(Index n, int d, const GroupLayout& layout,
                                     const AngleSpec& angles, std::uint64_t seed) {
  const int K = layout.groups(), M = layout.total();
  if (d < 1) throw InputError("latent dimension d must be positive");
  if (K < 1) throw InputError("at least one group is required");
  const Index cols = static_cast<Index>(d) * (1 + K + M);
  if (cols > n)
    throw InputError("sampler requires d(1+K+M) <= n, got " + std::to_string(cols) + " > " +
                     std::to_string(n));
  check_angle_spec(angles, layout);

  Matrix omega = angle_matrix(angles, layout);
  Matrix target = Matrix::Zero(cols, cols);
  for (int a = 0; a < 1 + K + M; ++a)
    for (int b = 0; b < 1 + K + M; ++b)
      target.block(a * d, b * d, d, d) = omega(a, b) * Matrix::Identity(d, d);
  Matrix target_half = spd_power(target, 0.5);

  GroundTruth gt;
  gt.n = n;
  gt.d = d;
  gt.layout = layout;
  gt.angles = angles;
  bool done = false;
  for (int attempt = 0; attempt <= 5 && !done; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    Matrix raw = standard_normal(n, cols, rng);
    Matrix gram = raw.transpose() * raw / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    if (es.eigenvalues().minCoeff() < 1e-10) continue;
    Vector inv_sqrt = es.eigenvalues().array().rsqrt().matrix();
    gt.L = raw * (es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose()) *
           target_half;
    done = true;
  }
  if (!done) throw NumericalError("sampler: initial Gram matrix singular after 5 retries");

  auto block = [&](int c) { return Matrix(gt.L.middleCols(static_cast<Index>(c) * d, d)); };
  const Signature sig{d, 0};
  auto& pos = gt.positions;
  auto& dec = gt.grams;
  pos.V = block(0);
  pos.sig_V = sig;
  dec.S = pos.V * pos.V.transpose();
  dec.sig_S = sig;
  for (int k = 0; k < K; ++k) {
    pos.W.push_back(block(1 + k));
    pos.sig_W.push_back(sig);
    dec.Q.push_back(pos.W.back() * pos.W.back().transpose());
    dec.sig_Q.push_back(sig);
  }
  pos.U.resize(static_cast<std::size_t>(K));
  pos.sig_U.resize(static_cast<std::size_t>(K));
  dec.R.resize(static_cast<std::size_t>(K));
  dec.sig_R.resize(static_cast<std::size_t>(K));
  gt.theta.resize(static_cast<std::size_t>(K));
  for (GroupIndex g : layout.indices()) {
    auto k = static_cast<std::size_t>(g.k);
    Matrix u = block(1 + K + layout.flat(g));
    dec.R[k].push_back(u * u.transpose());
    dec.sig_R[k].push_back(sig);
    pos.U[k].push_back(std::move(u));
    pos.sig_U[k].push_back(sig);
    gt.theta[k].push_back(dec.theta(g));
  }
  return gt;
}

/// Samples symmetric layers from Θ: upper triangle (diagonal only with loops) drawn
/// independently, mirrored below. Loop-free diagonals are 0.
inline MultiplexDataset sample_layers(const GroundTruth& gt, const EdgeFamily& fam, bool has_loops,
                                      std::uint64_t seed) {
  fam.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double sd = std::sqrt(fam.sigma2);
  const Index n = gt.n;
  LayerSet layers(gt.theta.size());
  for (GroupIndex g : gt.layout.indices()) {
    const Matrix& theta = gt.theta[static_cast<std::size_t>(g.k)][static_cast<std::size_t>(g.l)];
    Matrix a = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i <= j; ++i) {
        if (i == j && !has_loops) continue;
        double t = theta(i, j), x;
        if (fam.is_gaussian()) x = t + sd * normal(rng);
        else x = uniform(rng) < logistic(t) ? 1.0 : 0.0;
        a(i, j) = x;
        a(j, i) = x;
      }
    }
    layers[static_cast<std::size_t>(g.k)].push_back(std::move(a));
  }
  MultiplexDataset ds;
  ds.n = n;
  ds.layout = gt.layout;
  ds.layers = std::move(layers);
  ds.family = fam;
  ds.has_loops = has_loops;
  ds.validate();
  return ds;
}

struct IdentifiabilityCondition {
  bool checkable = true;
  bool passed = false;
  std::string detail;
};

struct IdentifiabilityReport {
  std::array<IdentifiabilityCondition, 3> conditions;
  bool all_passed() const {
    for (const auto& c : conditions)
      if (!c.checkable || !c.passed) return false;
    return true;
  }
};

namespace detail {
/// Full column rank with singular values above 1e-8·σ_max.
inline bool independent_columns(const std::vector<const Matrix*>& blocks) {
  Index cols = 0, rows = blocks.front()->rows();
  for (const Matrix* b : blocks) cols += b->cols();
  if (cols == 0) return true;
  if (cols > rows) return false;
  Matrix x(rows, cols);
  Index c = 0;
  for (const Matrix* b : blocks) {
    x.middleCols(c, b->cols()) = *b;
    c += b->cols();
  }
  Eigen::JacobiSVD<Matrix> svd(x);
  const Vector& s = svd.singularValues();
  if (s(0) <= 0.0) return false;
  return s(s.size() - 1) > 1e-8 * s(0);
}
}  // namespace detail

/// Checks the three linear-independence conditions on [V W_k U_kl] concatenations.
inline IdentifiabilityReport validate_identifiability(const LatentPositions& pos,
                                                      const GroupLayout& layout) {
  IdentifiabilityReport rep;
  const int K = layout.groups();
  auto U = [&](int k, int l) -> const Matrix* {
    return &pos.U[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
  };
  auto W = [&](int k) -> const Matrix* { return &pos.W[static_cast<std::size_t>(k)]; };

  auto& c1 = rep.conditions[0];
  c1.passed = true;
  for (GroupIndex g : layout.indices()) {
    if (!detail::independent_columns({&pos.V, W(g.k), U(g.k, g.l)})) {
      c1.passed = false;
      c1.detail = "[V W_k U_kl] dependent for layer " + layer_key(g);
      break;
    }
  }

  auto& c2 = rep.conditions[1];
  c2.passed = true;
  for (int k = 0; k < K && c2.passed; ++k) {
    bool found = false;
    for (int s = 0; s < layout.size(k) && !found; ++s)
      for (int t = s + 1; t < layout.size(k) && !found; ++t)
        found = detail::independent_columns({&pos.V, W(k), U(k, s), U(k, t)});
    if (!found) {
      c2.passed = false;
      c2.detail = "no independent layer pair in group " + std::to_string(k + 1);
    }
  }

  auto& c3 = rep.conditions[2];
  if (K < 2) {
    c3.checkable = false;
    c3.detail = "requires K >= 2";
    return rep;
  }
  for (int k1 = 0; k1 < K && !c3.passed; ++k1)
    for (int k2 = k1 + 1; k2 < K && !c3.passed; ++k2)
      for (int l1 = 0; l1 < layout.size(k1) && !c3.passed; ++l1)
        for (int l2 = 0; l2 < layout.size(k2) && !c3.passed; ++l2)
          c3.passed = detail::independent_columns({&pos.V, W(k1), W(k2), U(k1, l1), U(k2, l2)});
  if (!c3.passed) c3.detail = "no cross-group pair with independent columns";
  return rep;
}

inline IdentifiabilityReport validate_identifiability(const GroundTruth& gt) {
  return validate_identifiability(gt.positions, gt.layout);
}

/// Maximal subspace cosines between component types. An entry is empty when no pair it
/// ranges over consists of two nonzero components (or when the pair set itself is empty).
struct SimilarityProfile {
  std::optional<double> s_vw, s_vu, s_wu, s_uu_within, s_uu, s_ww;
  std::vector<std::optional<double>> s_vu_group, s_wu_group, s_uu_group;
};

inline SimilarityProfile similarity_profile(const LatentDecomposition& dec) {
  auto bump = [](std::optional<double>& acc, std::optional<double> v) {
    if (v && (!acc || *v > *acc)) acc = v;
  };
  const Matrix vs = eigenspace_basis(dec.S);
  std::vector<Matrix> ws;
  for (const auto& q : dec.Q) ws.push_back(eigenspace_basis(q));
  std::vector<std::vector<Matrix>> us;
  for (const auto& group : dec.R) {
    auto& row = us.emplace_back();
    for (const auto& r : group) row.push_back(eigenspace_basis(r));
  }
  SimilarityProfile p;
  const std::size_t K = dec.Q.size();
  p.s_vu_group.resize(K);
  p.s_wu_group.resize(K);
  p.s_uu_group.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    bump(p.s_vw, basis_cosine(vs, ws[k]));
    for (std::size_t k2 = k + 1; k2 < K; ++k2) bump(p.s_ww, basis_cosine(ws[k], ws[k2]));
    for (std::size_t l = 0; l < us[k].size(); ++l) {
      bump(p.s_vu_group[k], basis_cosine(vs, us[k][l]));
      bump(p.s_wu_group[k], basis_cosine(ws[k], us[k][l]));
      for (std::size_t l2 = l + 1; l2 < us[k].size(); ++l2)
        bump(p.s_uu_group[k], basis_cosine(us[k][l], us[k][l2]));
      for (std::size_t k2 = k + 1; k2 < K; ++k2)
        for (const auto& other : us[k2]) bump(p.s_uu, basis_cosine(us[k][l], other));
    }
    bump(p.s_vu, p.s_vu_group[k]);
    bump(p.s_wu, p.s_wu_group[k]);
    bump(p.s_uu_within, p.s_uu_group[k]);
  }
  bump(p.s_uu, p.s_uu_within);
  return p;
}

}  // namespace gmn
