#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, schema violations, invalid arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: divergence, non-finite values, failed factorizations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Layers nested by group: layers[k][l] is layer l of group k (0-based).
using LayerSet = std::vector<std::vector<Matrix>>;

/// (k, l) position of a layer in the grouped index set, 0-based.
struct GroupIndex {
  int k = 0;
  int l = 0;
  friend bool operator==(const GroupIndex&, const GroupIndex&) = default;
};

/// Group sizes m_1..m_K and the flattening of (k, l) into 0..M-1.
class GroupLayout {
 public:
  GroupLayout() = default;
  explicit GroupLayout(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    for (int m : sizes_) {
      if (m < 1) throw InputError("group sizes must be positive");
    }
  }

  int groups() const { return static_cast<int>(sizes_.size()); }
  int size(int k) const { return sizes_.at(static_cast<std::size_t>(k)); }
  int total() const { return std::accumulate(sizes_.begin(), sizes_.end(), 0); }
  const std::vector<int>& sizes() const { return sizes_; }

  int flat(GroupIndex g) const {
    int offset = 0;
    for (int k = 0; k < g.k; ++k) offset += sizes_[static_cast<std::size_t>(k)];
    return offset + g.l;
  }

  std::vector<GroupIndex> indices() const {
    std::vector<GroupIndex> out;
    for (int k = 0; k < groups(); ++k)
      for (int l = 0; l < size(k); ++l) out.push_back({k, l});
    return out;
  }

  friend bool operator==(const GroupLayout&, const GroupLayout&) = default;

 private:
  std::vector<int> sizes_;
};

/// Balanced layout of M layers over K groups; the first M mod K groups get one extra.
inline GroupLayout balanced_layout(int total, int groups) {
  if (groups < 1 || total < groups) throw InputError("need at least one layer per group");
  std::vector<int> sizes(static_cast<std::size_t>(groups), total / groups);
  for (int k = 0; k < total % groups; ++k) ++sizes[static_cast<std::size_t>(k)];
  return GroupLayout(std::move(sizes));
}

/// Counts of assortative (p) and disassortative (q) latent dimensions.
struct Signature {
  int p = 0;
  int q = 0;
  int dim() const { return p + q; }
  friend bool operator==(const Signature&, const Signature&) = default;
};

/// Eigenvalue magnitude above which a fitted component's eigenvalue counts toward its rank.
inline constexpr double kRankTolerance = 1e-6;

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline double max_asymmetry(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

/// ceil(sqrt(n)), the default truncation rank of the iterative eigensolver.
inline Index default_trunc_rank(Index n) {
  auto r = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::max<Index>(1, std::min(r, n));
}

/// The library's random source: 64-bit Mersenne Twister (std::mt19937_64).
using Rng = std::mt19937_64;

inline Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

/// Derives an independent stream seed from a base seed and a salt (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace gmn
