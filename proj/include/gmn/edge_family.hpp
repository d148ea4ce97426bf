#pragma once

#include <gmn/core.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace gmn {

enum class FamilyKind { gaussian, bernoulli_logit };

/// Edge-entry distribution. The Gaussian variance is a nuisance absorbed into the penalty
/// scale: the working loss is ½‖A - Θ‖_F² regardless of sigma2, which only drives sampling.
struct EdgeFamily {
  FamilyKind kind = FamilyKind::gaussian;
  double sigma2 = 1.0;
  double clamp = 5.0;

  static EdgeFamily gaussian(double sigma2 = 1.0) { return {FamilyKind::gaussian, sigma2, 5.0}; }
  static EdgeFamily bernoulli_logit() { return {FamilyKind::bernoulli_logit, 1.0, 5.0}; }

  bool is_gaussian() const { return kind == FamilyKind::gaussian; }

  std::string name() const { return is_gaussian() ? "gaussian" : "bernoulli_logit"; }

  void validate() const {
    if (is_gaussian() && !(sigma2 >= 0.0)) throw InputError("gaussian sigma2 must be non-negative");
    if (!(clamp > 0.0)) throw InputError("inverse-link clamp must be positive");
  }
};

inline EdgeFamily parse_family(const std::string& name, double sigma2 = 1.0) {
  if (name == "gaussian") return EdgeFamily::gaussian(sigma2);
  if (name == "bernoulli_logit" || name == "bernoulli" || name == "logistic")
    return EdgeFamily::bernoulli_logit();
  throw InputError("unknown edge family '" + name + "'");
}

/// Logit clip applied to binary entries before the inverse link.
inline constexpr double kLogitEpsilon = 1e-3;

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// 0/1 matrix of entries that enter the likelihood: the full symmetric matrix (each
/// off-diagonal pair counted twice), diagonal only with loops, intersected with the mask.
inline Matrix counted_entries(Index n, bool has_loops, const Matrix* mask = nullptr) {
  Matrix w = mask ? *mask : Matrix::Ones(n, n);
  if (!has_loops) w.diagonal().setZero();
  return w;
}

/// Negative log-likelihood of one layer (up to constants in A).
/// gaussian: ½ Σ (A - Θ)²;  bernoulli_logit: Σ log(1 + e^Θ) - AΘ; summed over counted entries.
inline double layer_loss(const Matrix& a, const Matrix& theta, const EdgeFamily& fam,
                         const Matrix* mask, bool has_loops) {
  if (a.rows() != theta.rows() || a.cols() != theta.cols())
    throw InputError("layer_loss: shape mismatch");
  if (!theta.allFinite()) throw NumericalError("layer_loss: non-finite natural parameter");
  const Index n = a.rows();
  if (fam.is_gaussian()) {
    Matrix d = a - theta;
    if (mask) d = d.cwiseProduct(*mask);
    double total = d.squaredNorm();
    if (!has_loops) total -= d.diagonal().squaredNorm();
    return 0.5 * total;
  }
  double total = 0.0;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      if (i == j && !has_loops) continue;
      if (mask && (*mask)(i, j) == 0.0) continue;
      double t = theta(i, j);
      total += softplus(t) - a(i, j) * t;
    }
  }
  return total;
}

/// Gradient of layer_loss with respect to Θ: (Θ - A) or (σ(Θ) - A), zero on uncounted entries.
inline Matrix layer_grad(const Matrix& a, const Matrix& theta, const EdgeFamily& fam,
                         const Matrix* mask, bool has_loops) {
  if (a.rows() != theta.rows() || a.cols() != theta.cols())
    throw InputError("layer_grad: shape mismatch");
  Matrix g;
  if (fam.is_gaussian()) {
    g = theta - a;
  } else {
    g = theta.unaryExpr([](double t) { return logistic(t); }) - a;
  }
  if (mask) g = g.cwiseProduct(*mask);
  if (!has_loops) g.diagonal().setZero();
  return g;
}

/// Proxy of Θ from observed entries: identity for gaussian; for bernoulli_logit the logit of
/// the entry clipped to [ε, 1-ε], truncated to [-clamp, clamp].
inline Matrix inverse_link_clamped(const Matrix& a, const EdgeFamily& fam) {
  if (fam.is_gaussian()) return a;
  const double c = fam.clamp;
  return a.unaryExpr([c](double x) {
    double p = std::clamp(x, kLogitEpsilon, 1.0 - kLogitEpsilon);
    return std::clamp(std::log(p / (1.0 - p)), -c, c);
  });
}

/// Mean of the family at natural parameter Θ.
inline Matrix mean_of(const Matrix& theta, const EdgeFamily& fam) {
  if (fam.is_gaussian()) return theta;
  return theta.unaryExpr([](double t) { return logistic(t); });
}

/// Second derivative of the per-entry loss at Θ (the GLM working weight).
inline Matrix curvature_of(const Matrix& theta, const EdgeFamily& fam) {
  if (fam.is_gaussian()) return Matrix::Ones(theta.rows(), theta.cols());
  return theta.unaryExpr([](double t) {
    double p = logistic(t);
    return p * (1.0 - p);
  });
}

}  // namespace gmn
