#pragma once

// Eigenvalue debiasing: eigenvectors of fitted components stay fixed while their eigenvalues
// are re-estimated by a no-intercept GLM on the observed layers.

#include <gmn/core.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/linalg.hpp>

#include <Eigen/Cholesky>

#include <string>
#include <vector>

namespace gmn {

/// One fitted component: fixed orthonormal eigenvectors, free coefficients (its eigenvalues),
/// and the layers whose linear predictor it enters.
struct RefitTerm {
  Matrix vectors;
  Vector coef;
  std::vector<int> layers;
};

/// One response layer: data, fixed offset (may be null) and 0/1 counting weights.
struct RefitLayer {
  const Matrix* a = nullptr;
  const Matrix* offset = nullptr;
  Matrix weight;
};

struct GlmReport {
  int coefficients = 0;
  int iterations = 0;
  bool converged = true;
  bool fallback = false;  ///< refitted values rejected; inputs returned unchanged
  double nll_before = 0.0;
  double nll_after = 0.0;
  std::string diagnostic;
};

struct GlmOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double ridge = 1e-10;
};

namespace detail {

struct LayerDesign {
  std::vector<std::pair<int, Index>> columns;  // (term, column) for every active coefficient
  std::vector<int> global;                     // global coefficient index per column
};

inline double entry_nll(const Matrix& a, const Matrix& eta, const Matrix& w, const EdgeFamily& fam) {
  if (!eta.allFinite()) return std::numeric_limits<double>::infinity();
  if (fam.is_gaussian()) return 0.5 * (w.array() * (a - eta).array().square()).sum();
  double total = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    double wi = w.data()[i];
    if (wi == 0.0) continue;
    double t = eta.data()[i];
    total += wi * (softplus(t) - a.data()[i] * t);
  }
  return total;
}

}  // namespace detail

/// Maximum-likelihood coefficients for the terms by damped Newton / IRLS, starting from the
/// incumbent coefficients. Normal matrix entries are H_ab = Σ_ij w_ij c_ij x_ai x_aj x_bi x_bj with
/// c the family curvature; the gradient is g_a = x_aᵀ (w ∘ (μ(η) − A)) x_a.
inline GlmReport fit_eigen_glm(std::vector<RefitTerm>& terms, const std::vector<RefitLayer>& layers,
                               const EdgeFamily& fam, const GlmOptions& opt = {}) {
  GlmReport rep;
  std::vector<int> offset_of(terms.size());
  int p = 0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    offset_of[t] = p;
    p += static_cast<int>(terms[t].coef.size());
  }
  rep.coefficients = p;

  std::vector<detail::LayerDesign> design(layers.size());
  for (std::size_t t = 0; t < terms.size(); ++t)
    for (int l : terms[t].layers)
      for (Index c = 0; c < terms[t].coef.size(); ++c) {
        design[static_cast<std::size_t>(l)].columns.push_back({static_cast<int>(t), c});
        design[static_cast<std::size_t>(l)].global.push_back(offset_of[t] + static_cast<int>(c));
      }

  auto pack = [&] {
    Vector beta(p);
    for (std::size_t t = 0; t < terms.size(); ++t)
      beta.segment(offset_of[t], terms[t].coef.size()) = terms[t].coef;
    return beta;
  };
  auto unpack = [&](const Vector& beta) {
    for (std::size_t t = 0; t < terms.size(); ++t)
      terms[t].coef = beta.segment(offset_of[t], terms[t].coef.size());
  };
  auto layer_matrix = [&](std::size_t l) {
    const auto& cols = design[l].columns;
    Matrix x(layers[l].a->rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      x.col(static_cast<Index>(j)) = terms[static_cast<std::size_t>(cols[j].first)].vectors.col(cols[j].second);
    return x;
  };
  std::vector<Matrix> xs(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) xs[l] = layer_matrix(l);

  auto predictor = [&](std::size_t l, const Vector& beta) {
    const RefitLayer& layer = layers[l];
    Matrix eta = layer.offset ? *layer.offset : Matrix::Zero(layer.a->rows(), layer.a->cols());
    if (xs[l].cols() > 0) {
      Vector b(xs[l].cols());
      for (std::size_t j = 0; j < design[l].global.size(); ++j)
        b(static_cast<Index>(j)) = beta(design[l].global[j]);
      eta.noalias() += xs[l] * b.asDiagonal() * xs[l].transpose();
    }
    return eta;
  };
  auto nll = [&](const Vector& beta) {
    double total = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l)
      total += detail::entry_nll(*layers[l].a, predictor(l, beta), layers[l].weight, fam);
    return total;
  };

  Vector beta = pack();
  double current = nll(beta);
  rep.nll_before = current;
  rep.nll_after = current;
  if (p == 0) return rep;
  if (!std::isfinite(current)) {
    rep.fallback = true;
    rep.diagnostic = "incumbent likelihood not finite";
    return rep;
  }

  // The Gaussian likelihood is quadratic in the coefficients: one Newton step is exact and a
  // second one polishes rounding.
  const int max_iter = fam.is_gaussian() ? 2 : opt.max_iter;
  rep.converged = false;
  double g_first = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    Matrix h = Matrix::Zero(p, p);
    Vector g = Vector::Zero(p);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Matrix& x = xs[l];
      if (x.cols() == 0) continue;
      Matrix eta = predictor(l, beta);
      Matrix resid = (mean_of(eta, fam) - *layers[l].a).cwiseProduct(layers[l].weight);
      Matrix curv = curvature_of(eta, fam).cwiseProduct(layers[l].weight);
      Matrix rx = resid * x;
      Index q = x.cols();
      Vector gl = (x.array() * rx.array()).colwise().sum().transpose();
      Matrix hl(q, q);
      for (Index a = 0; a < q; ++a) {
        Matrix za = x.array().colwise() * x.col(a).array();
        Matrix cz = curv * za;
        hl.row(a) = (za.array() * cz.array()).colwise().sum();
      }
      const auto& gidx = design[l].global;
      for (Index a = 0; a < q; ++a) {
        g(gidx[static_cast<std::size_t>(a)]) += gl(a);
        for (Index b = 0; b < q; ++b)
          h(gidx[static_cast<std::size_t>(a)], gidx[static_cast<std::size_t>(b)]) += hl(a, b);
      }
    }
    rep.iterations = it + 1;
    double gnorm = g.norm();
    if (g_first < 0.0) g_first = gnorm;
    if (gnorm <= opt.grad_tol * std::max(1.0, g_first)) {
      rep.converged = true;
      break;
    }
    h = symmetrized(h);
    h.diagonal().array() += opt.ridge * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Matrix> ldlt(h);
    Vector step = ldlt.solve(-g);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      rep.diagnostic = "normal matrix solve failed";
      break;
    }
    bool accepted = false;
    double scale = 1.0;
    for (int halving = 0; halving < 40 && !accepted; ++halving, scale *= 0.5) {
      Vector trial = beta + scale * step;
      double value = nll(trial);
      if (std::isfinite(value) && value <= current) {
        double change = current - value;
        beta = trial;
        current = value;
        accepted = true;
        if (change <= 1e-15 * std::max(1.0, std::abs(current))) rep.converged = true;
      }
    }
    if (!accepted) rep.converged = true;  // no descent left at working precision
    if (rep.converged) break;
    if (fam.is_gaussian() && it + 1 == max_iter) rep.converged = true;
  }
  if (!rep.converged && rep.diagnostic.empty())
    rep.diagnostic = "GLM did not converge in " + std::to_string(max_iter) + " iterations";
  if (!beta.allFinite() || !(current <= rep.nll_before)) {
    rep.fallback = true;
    rep.diagnostic = rep.diagnostic.empty() ? "refit diverged" : rep.diagnostic;
    return rep;
  }
  unpack(beta);
  rep.nll_after = current;
  return rep;
}

namespace detail {

inline RefitTerm term_from(const Matrix& z, std::vector<int> layers) {
  EigenPairs e = low_rank_eigs(z);
  return RefitTerm{e.vectors, e.values, std::move(layers)};
}

/// Reassembles a component, dropping coefficients with |γ| <= kRankTolerance.
inline Matrix assemble(const RefitTerm& t) {
  const Index n = t.vectors.rows();
  Vector c = t.coef;
  for (Index i = 0; i < c.size(); ++i)
    if (std::abs(c(i)) <= kRankTolerance) c(i) = 0.0;
  if (c.size() == 0) return Matrix::Zero(n, n);
  return t.vectors * c.asDiagonal() * t.vectors.transpose();
}

inline double layers_nll(const std::vector<const Matrix*>& a, const std::vector<Matrix>& theta,
                         const std::vector<Matrix>& weights, const EdgeFamily& fam) {
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) total += entry_nll(*a[l], theta[l], weights[l], fam);
  return total;
}

}  // namespace detail

struct FirstStageRefitResult {
  Matrix spq;
  std::vector<Matrix> r;
  GlmReport report;
};

/// Refits the eigenvalues of S+Q_k and each R_kl against the group's layers. `masks` (optional,
/// one per layer) restricts the likelihood to observed entries.
inline FirstStageRefitResult first_stage_refit(const Matrix& spq, const std::vector<Matrix>& r,
                                               const std::vector<Matrix>& layers,
                                               const EdgeFamily& fam, bool has_loops,
                                               const std::vector<Matrix>* masks = nullptr) {
  const int m = static_cast<int>(layers.size());
  if (static_cast<int>(r.size()) != m) throw InputError("first_stage_refit: layer count mismatch");
  const Index n = spq.rows();
  std::vector<int> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), 0);
  std::vector<RefitTerm> terms;
  terms.push_back(detail::term_from(spq, all));
  for (int l = 0; l < m; ++l) terms.push_back(detail::term_from(r[static_cast<std::size_t>(l)], {l}));

  std::vector<RefitLayer> rl(static_cast<std::size_t>(m));
  std::vector<Matrix> weights;
  std::vector<const Matrix*> data;
  for (int l = 0; l < m; ++l) {
    auto li = static_cast<std::size_t>(l);
    weights.push_back(counted_entries(n, has_loops, masks ? &(*masks)[li] : nullptr));
    rl[li] = RefitLayer{&layers[li], nullptr, weights.back()};
    data.push_back(&layers[li]);
  }
  FirstStageRefitResult out;
  out.report = fit_eigen_glm(terms, rl, fam);

  std::vector<Matrix> before_theta, after_theta;
  Matrix new_spq = detail::assemble(terms[0]);
  std::vector<Matrix> new_r;
  for (int l = 0; l < m; ++l) {
    auto li = static_cast<std::size_t>(l);
    new_r.push_back(detail::assemble(terms[li + 1]));
    before_theta.push_back(spq + r[li]);
    after_theta.push_back(new_spq + new_r.back());
  }
  double before = detail::layers_nll(data, before_theta, weights, fam);
  double after = detail::layers_nll(data, after_theta, weights, fam);
  if (out.report.fallback || !(after <= before)) {
    out.report.fallback = true;
    if (out.report.diagnostic.empty()) out.report.diagnostic = "refit did not improve likelihood";
    out.spq = spq;
    out.r = r;
    out.report.nll_before = out.report.nll_after = before;
    return out;
  }
  out.report.nll_before = before;
  out.report.nll_after = after;
  out.spq = std::move(new_spq);
  out.r = std::move(new_r);
  return out;
}

struct SecondStageRefitResult {
  Matrix s;
  std::vector<Matrix> q;
  GlmReport report;
};

/// Refits the eigenvalues of S and every Q_k over all layers; the frozen R̂ enter as offsets.
inline SecondStageRefitResult second_stage_refit(const Matrix& s, const std::vector<Matrix>& q,
                                                 const LayerSet& r_hat, const LayerSet& layers,
                                                 const EdgeFamily& fam, bool has_loops,
                                                 const LayerSet* masks = nullptr) {
  const int K = static_cast<int>(layers.size());
  if (static_cast<int>(q.size()) != K || static_cast<int>(r_hat.size()) != K)
    throw InputError("second_stage_refit: group count mismatch");
  const Index n = s.rows();
  std::vector<RefitLayer> rl;
  std::vector<Matrix> weights;
  std::vector<const Matrix*> data;
  std::vector<int> all;
  std::vector<std::vector<int>> by_group(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto ki = static_cast<std::size_t>(k);
    if (r_hat[ki].size() != layers[ki].size())
      throw InputError("second_stage_refit: layer count mismatch");
    for (std::size_t l = 0; l < layers[ki].size(); ++l) {
      int flat = static_cast<int>(data.size());
      all.push_back(flat);
      by_group[ki].push_back(flat);
      weights.push_back(counted_entries(n, has_loops, masks ? &(*masks)[ki][l] : nullptr));
      data.push_back(&layers[ki][l]);
    }
  }
  {
    std::size_t flat = 0;
    for (int k = 0; k < K; ++k)
      for (std::size_t l = 0; l < layers[static_cast<std::size_t>(k)].size(); ++l, ++flat)
        rl.push_back(RefitLayer{data[flat], &r_hat[static_cast<std::size_t>(k)][l], weights[flat]});
  }
  std::vector<RefitTerm> terms;
  terms.push_back(detail::term_from(s, all));
  for (int k = 0; k < K; ++k)
    terms.push_back(detail::term_from(q[static_cast<std::size_t>(k)], by_group[static_cast<std::size_t>(k)]));

  SecondStageRefitResult out;
  out.report = fit_eigen_glm(terms, rl, fam);

  Matrix new_s = detail::assemble(terms[0]);
  std::vector<Matrix> new_q;
  for (int k = 0; k < K; ++k) new_q.push_back(detail::assemble(terms[static_cast<std::size_t>(k) + 1]));
  std::vector<Matrix> before_theta, after_theta;
  for (int k = 0; k < K; ++k) {
    auto ki = static_cast<std::size_t>(k);
    for (std::size_t l = 0; l < layers[ki].size(); ++l) {
      before_theta.push_back(s + q[ki] + r_hat[ki][l]);
      after_theta.push_back(new_s + new_q[ki] + r_hat[ki][l]);
    }
  }
  double before = detail::layers_nll(data, before_theta, weights, fam);
  double after = detail::layers_nll(data, after_theta, weights, fam);
  if (out.report.fallback || !(after <= before)) {
    out.report.fallback = true;
    if (out.report.diagnostic.empty()) out.report.diagnostic = "refit did not improve likelihood";
    out.s = s;
    out.q = q;
    out.report.nll_before = out.report.nll_after = before;
    return out;
  }
  out.report.nll_before = before;
  out.report.nll_after = after;
  out.s = std::move(new_s);
  out.q = std::move(new_q);
  return out;
}

}  // namespace gmn
