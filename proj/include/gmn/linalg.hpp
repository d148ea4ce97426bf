#pragma once

// Symmetric spectral kernels: full and truncated eigendecomposition, eigenvalue
// soft/hard thresholding, adjacency spectral embedding, subspace cosines and
// orthogonal Procrustes.

#include <gmn/core.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gmn {

struct EigenDiagnostics {
  bool fallback_full = false;         ///< iterative solver gave up; full decomposition used
  bool boundary_degenerate = false;   ///< |γ_r| - |γ_{r+1}| < 1e-10 at the truncation point
  Index matvecs = 0;
};

/// Eigenpairs ordered by descending |γ|, ties broken by descending signed value.
struct EigenPairs {
  Vector values;
  Matrix vectors;  ///< n x r, orthonormal columns aligned with `values`
  EigenDiagnostics diagnostics;

  Index size() const { return values.size(); }

  Matrix reconstruct() const {
    if (values.size() == 0) return Matrix::Zero(vectors.rows(), vectors.rows());
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

namespace detail {

inline bool eig_order(double a, double b) {
  double ma = std::abs(a), mb = std::abs(b);
  if (ma != mb) return ma > mb;
  return a > b;
}

inline std::vector<Index> ordering(const Vector& values) {
  std::vector<Index> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return eig_order(values(a), values(b)); });
  return idx;
}

inline EigenPairs take(const Vector& values, const Matrix& vectors, const std::vector<Index>& idx,
                       Index count) {
  EigenPairs out;
  count = std::min<Index>(count, static_cast<Index>(idx.size()));
  out.values.resize(count);
  out.vectors.resize(vectors.rows(), count);
  for (Index j = 0; j < count; ++j) {
    out.values(j) = values(idx[static_cast<std::size_t>(j)]);
    out.vectors.col(j) = vectors.col(idx[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline void flag_boundary(EigenPairs& pairs, double next_abs) {
  Index r = pairs.values.size();
  if (r > 0 && std::abs(pairs.values(r - 1)) - next_abs < 1e-10)
    pairs.diagnostics.boundary_degenerate = true;
}

/// Appends to `basis` an orthonormal block spanning the part of `block` orthogonal to `basis`.
/// Columns that vanish after projection are replaced by random directions so the block keeps
/// its width (needed to expose repeated eigenvalues). Stops early when the space is full.
inline Matrix orthogonal_block(const Matrix& basis, Matrix block, Rng& rng) {
  const Index n = block.rows();
  const Index room = n - basis.cols();
  Index width = std::min(block.cols(), room);
  Matrix out(n, width);
  Index filled = 0;
  int retries = 0;
  Index col = 0;
  while (filled < width) {
    Vector v;
    if (col < block.cols()) {
      v = block.col(col++);
    } else {
      v = standard_normal(n, 1, rng);
      if (++retries > 4 * width + 16) break;
    }
    double before = v.norm();
    if (before == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
      if (filled > 0) v -= out.leftCols(filled) * (out.leftCols(filled).transpose() * v);
    }
    double after = v.norm();
    if (after <= 1e-10 * before) continue;
    out.col(filled++) = v / after;
  }
  return out.leftCols(filled);
}

struct KrylovResult {
  EigenPairs pairs;
  bool saturated = false;  ///< floor mode: every requested pair lies above the floor
};

/// Block Krylov subspace iteration with full reorthogonalization and Rayleigh-Ritz extraction.
/// want: number of leading pairs; floor < 0 requires all `want` pairs to converge, otherwise
/// only the leading pairs with |θ| > floor. Returns nullopt when the budget runs out.
inline std::optional<KrylovResult> block_krylov(const Matrix& z, Index want, double floor,
                                                Index matvec_budget) {
  const Index n = z.rows();
  const Index block = std::min(n, std::max(want, default_trunc_rank(n)));
  const Index dim_cap = std::max<Index>(n / 2, std::min(n, 2 * block));
  constexpr double kResidualTol = 1e-12;

  Rng rng(0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(n));
  Matrix basis(n, 0), image(n, 0);
  Matrix next = orthogonal_block(basis, standard_normal(n, block, rng), rng);
  Index matvecs = 0;

  for (;;) {
    Matrix zb = z * next;
    matvecs += next.cols();
    Index m = basis.cols() + next.cols();
    basis.conservativeResize(n, m);
    basis.rightCols(next.cols()) = next;
    image.conservativeResize(n, m);
    image.rightCols(next.cols()) = zb;

    Matrix h = basis.transpose() * image;
    h = symmetrized(h);
    Eigen::SelfAdjointEigenSolver<Matrix> small(h);
    const Vector& theta = small.eigenvalues();
    auto idx = ordering(theta);

    Index top = std::min(want, m);
    Index required = top;
    Index above = 0;
    if (floor >= 0.0) {
      while (above < top && std::abs(theta(idx[static_cast<std::size_t>(above)])) > floor) ++above;
      required = above;
    }
    double scale = std::max(std::abs(theta(idx[0])), std::numeric_limits<double>::min());

    bool full_space = (m >= n);
    bool converged = full_space;
    if (!converged && m >= std::min(n, 2 * block)) {
      converged = true;
      for (Index j = 0; j < required && converged; ++j) {
        Index c = idx[static_cast<std::size_t>(j)];
        Vector y = small.eigenvectors().col(c);
        double res = (image * y - theta(c) * (basis * y)).norm();
        if (res > kResidualTol * scale) converged = false;
      }
    }

    if (converged) {
      KrylovResult out;
      Index keep = (floor >= 0.0) ? required : top;
      EigenPairs small_pairs = take(theta, small.eigenvectors(), idx, keep);
      out.pairs.values = small_pairs.values;
      out.pairs.vectors = basis * small_pairs.vectors;
      out.pairs.diagnostics.matvecs = matvecs;
      if (keep < m) flag_boundary(out.pairs, std::abs(theta(idx[static_cast<std::size_t>(keep)])));
      out.saturated = (floor >= 0.0) && above >= want && want < n;
      return out;
    }
    if (matvecs >= matvec_budget || m >= dim_cap) return std::nullopt;

    Matrix w = zb;
    next = orthogonal_block(basis, w, rng);
    if (next.cols() == 0) return std::nullopt;
  }
}

}  // namespace detail

/// Full symmetric eigendecomposition, ordered by descending |γ|.
inline EigenPairs eigh_full(const Matrix& z) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(z));
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  auto idx = detail::ordering(solver.eigenvalues());
  return detail::take(solver.eigenvalues(), solver.eigenvectors(), idx, z.rows());
}

namespace detail {
inline EigenPairs full_truncated(const Matrix& z, Index r, bool fallback) {
  EigenPairs all = eigh_full(z);
  EigenPairs out;
  out.values = all.values.head(r);
  out.vectors = all.vectors.leftCols(r);
  out.diagnostics.fallback_full = fallback;
  if (r < all.size()) flag_boundary(out, std::abs(all.values(r)));
  return out;
}
}  // namespace detail

/// The r eigenpairs of largest |γ|. Uses the block Krylov solver when r < n/4 (budget 300r
/// matrix-vector products) and the full decomposition otherwise or on non-convergence.
inline EigenPairs eigh_trunc(const Matrix& z, Index r) {
  const Index n = z.rows();
  if (z.cols() != n) throw InputError("eigh_trunc: matrix must be square");
  if (r < 0 || r > n) throw InputError("eigh_trunc: rank out of range");
  if (r == 0) return EigenPairs{Vector(0), Matrix(n, 0), {}};
  if (4 * r >= n) return detail::full_truncated(z, r, false);
  if (auto res = detail::block_krylov(z, r, -1.0, 300 * r)) return std::move(res->pairs);
  return detail::full_truncated(z, r, true);
}

/// Every eigenpair with |γ| > floor. Starts from r_start pairs (0 selects ceil(sqrt(n))) and
/// doubles the count whenever all computed pairs clear the floor.
inline EigenPairs eigh_above(const Matrix& z, double floor, Index r_start = 0) {
  const Index n = z.rows();
  if (z.cols() != n) throw InputError("eigh_above: matrix must be square");
  if (n == 0) return EigenPairs{Vector(0), Matrix(0, 0), {}};
  floor = std::max(floor, 0.0);
  Index r = r_start > 0 ? std::min(r_start, n) : default_trunc_rank(n);
  Index total_matvecs = 0;
  for (;;) {
    bool fallback = false;
    if (4 * r < n) {
      if (auto res = detail::block_krylov(z, r, floor, 300 * r)) {
        total_matvecs += res->pairs.diagnostics.matvecs;
        if (!res->saturated) {
          res->pairs.diagnostics.matvecs = total_matvecs;
          return std::move(res->pairs);
        }
        r = std::min(n, 2 * r);
        continue;
      }
      fallback = true;
    }
    EigenPairs all = eigh_full(z);
    Index keep = 0;
    while (keep < all.size() && std::abs(all.values(keep)) > floor) ++keep;
    EigenPairs out;
    out.values = all.values.head(keep);
    out.vectors = all.vectors.leftCols(keep);
    out.diagnostics.fallback_full = fallback;
    out.diagnostics.matvecs = total_matvecs;
    return out;
  }
}

/// Low-rank eigen factorization of a fitted component: pairs with |γ| > kRankTolerance.
inline EigenPairs low_rank_eigs(const Matrix& z, double tol = kRankTolerance) {
  return eigh_above(z, tol);
}

inline Signature signature_of(const Vector& values, double tol = kRankTolerance) {
  Signature sig;
  for (Index i = 0; i < values.size(); ++i) {
    if (values(i) > tol) ++sig.p;
    else if (values(i) < -tol) ++sig.q;
  }
  return sig;
}

struct SoftThresholdResult {
  Matrix value;
  EigenPairs kept;  ///< shrunk eigenvalues with their eigenvectors
  double nuclear_norm = 0.0;
};

/// Proximal map of s‖·‖_* over symmetric matrices: γ -> sign(γ)(|γ| - s)_+.
inline SoftThresholdResult soft_threshold_detail(const Matrix& z, double s, Index r_start = 0) {
  if (!(s >= 0.0)) throw InputError("soft_threshold: threshold must be non-negative");
  SoftThresholdResult out;
  out.kept = eigh_above(z, s, r_start);
  for (Index i = 0; i < out.kept.values.size(); ++i) {
    double g = out.kept.values(i);
    double shrunk = std::abs(g) - s;
    out.kept.values(i) = g > 0 ? shrunk : -shrunk;
    out.nuclear_norm += shrunk;
  }
  out.value = out.kept.reconstruct();
  return out;
}

inline Matrix soft_threshold(const Matrix& z, double s, Index r_start = 0) {
  return soft_threshold_detail(z, s, r_start).value;
}

/// Best rank-d approximation in Frobenius norm (Eckart-Young); keeps the d pairs of largest |γ|.
inline Matrix hard_threshold(const Matrix& z, Index d) {
  if (d < 0 || d > z.rows()) throw InputError("hard_threshold: rank out of range");
  if (d == 0) return Matrix::Zero(z.rows(), z.cols());
  if (d == z.rows()) return symmetrized(z);
  return eigh_trunc(z, d).reconstruct();
}

struct AseResult {
  Matrix positions;  ///< n x d', columns ordered positive (desc) then negative (asc)
  Signature signature;
  Vector eigenvalues;
  std::string diagnostic;
};

/// Adjacency spectral embedding: top-d eigenvectors scaled by |γ|^{1/2}.
inline AseResult ase_extract(const Matrix& g, Index d) {
  const Index n = g.rows();
  if (d < 0 || d > n) throw InputError("ase_extract: rank out of range");
  AseResult out;
  EigenPairs pairs = eigh_trunc(g, d);
  std::vector<Index> pos, neg;
  for (Index i = 0; i < pairs.size(); ++i) {
    double v = pairs.values(i);
    if (v > 1e-12) pos.push_back(i);
    else if (v < -1e-12) neg.push_back(i);
  }
  std::sort(pos.begin(), pos.end(), [&](Index a, Index b) { return pairs.values(a) > pairs.values(b); });
  std::sort(neg.begin(), neg.end(), [&](Index a, Index b) { return pairs.values(a) < pairs.values(b); });
  Index kept = static_cast<Index>(pos.size() + neg.size());
  if (kept < d)
    out.diagnostic = "requested " + std::to_string(d) + " dimensions but only " +
                     std::to_string(kept) + " eigenvalues exceed 1e-12";
  out.positions.resize(n, kept);
  out.eigenvalues.resize(kept);
  Index c = 0;
  for (const auto* group : {&pos, &neg}) {
    for (Index i : *group) {
      out.positions.col(c) = pairs.vectors.col(i) * std::sqrt(std::abs(pairs.values(i)));
      out.eigenvalues(c) = pairs.values(i);
      ++c;
    }
  }
  out.signature = {static_cast<int>(pos.size()), static_cast<int>(neg.size())};
  return out;
}

/// Largest singular value of V1ᵀV2 for the top-d1 / top-d2 eigenvectors of z1 / z2.
inline double subspace_cosine(const Matrix& z1, const Matrix& z2, Index d1, Index d2) {
  if (z1.norm() == 0.0 || z2.norm() == 0.0)
    throw InputError("subspace_cosine: zero matrix has no column space");
  if (d1 < 1 || d2 < 1) throw InputError("subspace_cosine: ranks must be positive");
  Matrix v1 = eigh_trunc(z1, d1).vectors;
  Matrix v2 = eigh_trunc(z2, d2).vectors;
  Eigen::JacobiSVD<Matrix> svd(v1.transpose() * v2);
  return std::clamp(svd.singularValues()(0), 0.0, 1.0);
}

/// Orthonormal basis of the eigenspace of eigenvalues with |γ| > tol (n x 0 for a null matrix).
inline Matrix eigenspace_basis(const Matrix& z, double tol = kRankTolerance) {
  return eigh_above(z, tol).vectors;
}

/// ‖B1ᵀB2‖₂ for orthonormal bases; nullopt when either basis is empty.
inline std::optional<double> basis_cosine(const Matrix& b1, const Matrix& b2) {
  if (b1.cols() == 0 || b2.cols() == 0) return std::nullopt;
  Eigen::JacobiSVD<Matrix> svd(b1.transpose() * b2);
  return std::clamp(svd.singularValues()(0), 0.0, 1.0);
}

/// Orthogonal O minimizing ‖XO - Y‖_F: O = U Vᵀ for the SVD XᵀY = U Σ Vᵀ.
inline Matrix procrustes_rotate(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw InputError("procrustes_rotate: shape mismatch");
  if (x.cols() == 0) return Matrix(0, 0);
  Eigen::JacobiSVD<Matrix> svd(x.transpose() * y, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Inverse square root and square root of a symmetric positive definite matrix.
inline Matrix spd_power(const Matrix& a, double power) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a));
  Vector vals = es.eigenvalues();
  if (vals.minCoeff() <= 0.0) throw NumericalError("spd_power: matrix is not positive definite");
  Vector powered = vals.array().pow(power).matrix();
  return es.eigenvectors() * powered.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace gmn
