#pragma once

// Two-stage proximal gradient fitting. The first stage separates each group's total shared
// component S+Q_k from the layer components R_kl; the second stage splits S from the Q_k
// with the R_kl frozen.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/linalg.hpp>
#include <gmn/parallel.hpp>
#include <gmn/refit.hpp>

#include <algorithm>
#include <chrono>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gmn {

struct HyperParams {
  std::vector<double> lambda1;              ///< per group
  std::vector<std::vector<double>> alpha1;  ///< per layer, nested by group
  double lambda2 = 0.0;
  std::vector<double> alpha2;               ///< per group
  double eta1 = 1.0;
  double eta2 = 1.0;
  double tol = 1e-5;
  int patience = 10;
  int max_iter = 2000;
  Index trunc_rank = 0;  ///< 0 selects ceil(sqrt(n))

  void validate(const GroupLayout& layout) const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    const int K = layout.groups();
    if (static_cast<int>(lambda1.size()) != K || static_cast<int>(alpha1.size()) != K ||
        static_cast<int>(alpha2.size()) != K)
      throw InputError("hyperparameters do not match the number of groups");
    for (int k = 0; k < K; ++k) {
      auto ki = static_cast<std::size_t>(k);
      if (!positive(lambda1[ki]) || !positive(alpha2[ki]))
        throw InputError("penalty parameters must be finite and positive");
      if (static_cast<int>(alpha1[ki].size()) != layout.size(k))
        throw InputError("alpha1 does not match the group sizes");
      for (double a : alpha1[ki])
        if (!positive(a)) throw InputError("penalty parameters must be finite and positive");
    }
    if (!positive(lambda2)) throw InputError("lambda2 must be finite and positive");
    if (!positive(eta1) || !positive(eta2)) throw InputError("learning rates must be positive");
    if (!(tol > 0.0) || patience < 1 || max_iter < 1)
      throw InputError("convergence controls must be positive");
    if (trunc_rank < 0) throw InputError("trunc_rank must be non-negative");
  }
};

/// Rate-optimal defaults: λ1k = c1√(n m_k), α1kl = 1/√m_k, λ2 = c2√(nM), α2k = √(m_k/M);
/// learning rate 1 for gaussian and 3 for bernoulli_logit.
inline HyperParams default_hyperparams(Index n, const GroupLayout& layout, const EdgeFamily& fam,
                                       double c1, double c2) {
  if (!(c1 > 0.0) || !(c2 > 0.0) || !std::isfinite(c1) || !std::isfinite(c2))
    throw InputError("penalty multipliers c1, c2 must be positive");
  HyperParams hp;
  const double nd = static_cast<double>(n);
  const double M = layout.total();
  for (int k = 0; k < layout.groups(); ++k) {
    const double m = layout.size(k);
    hp.lambda1.push_back(c1 * std::sqrt(nd * m));
    hp.alpha1.emplace_back(static_cast<std::size_t>(layout.size(k)), 1.0 / std::sqrt(m));
    hp.alpha2.push_back(std::sqrt(m / M));
  }
  hp.lambda2 = c2 * std::sqrt(nd * M);
  hp.eta1 = hp.eta2 = fam.is_gaussian() ? 1.0 : 3.0;
  return hp;
}

inline HyperParams default_hyperparams(const MultiplexDataset& ds, double c1, double c2) {
  return default_hyperparams(ds.n, ds.layout, ds.family, c1, c2);
}

/// Stops once 1 - L(t) / min_{τ<t} L(τ) stays <= tol for `patience` consecutive updates.
class ConvergenceMonitor {
 public:
  ConvergenceMonitor(double tol, int patience) : tol_(tol), patience_(patience) {}

  bool update(double loss) {
    if (!has_best_) {
      best_ = loss;
      has_best_ = true;
      return false;
    }
    double rel = best_ > 0.0 ? 1.0 - loss / best_ : best_ - loss;
    stall_ = rel <= tol_ ? stall_ + 1 : 0;
    best_ = std::min(best_, loss);
    return stall_ >= patience_;
  }

 private:
  double tol_;
  int patience_;
  double best_ = 0.0;
  bool has_best_ = false;
  int stall_ = 0;
};

struct LossTrace {
  std::string subproblem;
  std::vector<double> objective;  ///< penalized objective; index 0 is the initializer
  std::vector<double> nll;        ///< non-penalized negative log-likelihood
  std::string stop_reason;        ///< "converged" or "max_iter"
};

enum class ProxRule { soft, hard };
enum class SecondInit { residual_mean, shared_mean };

/// Known component ranks: d0 for S, d_k for Q_k, d_kl for R_kl.
struct OracleRanks {
  int d0 = 0;
  std::vector<int> dk;
  std::vector<std::vector<int>> dkl;

  static OracleRanks uniform(const GroupLayout& layout, int d) {
    OracleRanks r;
    r.d0 = d;
    for (int k = 0; k < layout.groups(); ++k) {
      r.dk.push_back(d);
      r.dkl.emplace_back(static_cast<std::size_t>(layout.size(k)), d);
    }
    return r;
  }
};

namespace detail {

/// A proximal-step output with its nuclear norm and rank.
struct ProxValue {
  Matrix value;
  double nuclear = 0.0;
  Index rank = 0;
};

inline double nuclear_norm(const Matrix& z) {
  if (z.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(z), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().sum();
}

inline ProxValue make_prox_value(Matrix z) {
  ProxValue out;
  out.nuclear = nuclear_norm(z);
  out.rank = z.rows();
  out.value = std::move(z);
  return out;
}

/// Soft threshold at s, or the rank-d truncation when `hard_rank` is set.
inline ProxValue prox(const Matrix& z, double s, std::optional<int> hard_rank, Index r_start) {
  ProxValue out;
  if (hard_rank) {
    EigenPairs e = eigh_trunc(z, std::clamp<Index>(*hard_rank, 0, z.rows()));
    out.value = e.reconstruct();
    out.nuclear = e.values.cwiseAbs().sum();
    out.rank = e.size();
    return out;
  }
  SoftThresholdResult r = soft_threshold_detail(z, s, r_start);
  out.value = std::move(r.value);
  out.nuclear = r.nuclear_norm;
  out.rank = r.kept.size();
  return out;
}

inline Index next_start(Index trunc_rank, Index prev_rank, Index n) {
  return std::min(n, std::max(trunc_rank, prev_rank + prev_rank / 4 + 2));
}

/// Replaces unobserved entries (mask 0) of each matrix by the entrywise mean over the matrices
/// observing that entry, or 0 when none does; keeps held-out data out of the initializers.
inline void fill_unobserved(std::vector<Matrix>& xs, const std::vector<const Matrix*>& masks) {
  if (masks.empty() || !masks.front()) return;
  const Index n = xs.front().rows();
  Matrix sum = Matrix::Zero(n, n), count = Matrix::Zero(n, n);
  for (std::size_t l = 0; l < xs.size(); ++l) {
    sum += xs[l].cwiseProduct(*masks[l]);
    count += *masks[l];
  }
  Matrix fill = (count.array() > 0.0).select(sum.array() / count.array().max(1.0), 0.0);
  for (std::size_t l = 0; l < xs.size(); ++l)
    xs[l] = (masks[l]->array() > 0.0).select(xs[l], fill);
}

inline Matrix mean_of_matrices(const std::vector<Matrix>& ms) {
  Matrix out = ms.front();
  for (std::size_t i = 1; i < ms.size(); ++i) out += ms[i];
  return out / static_cast<double>(ms.size());
}

}  // namespace detail

/// Penalized subproblem for one group:
///   min Σ_l loss(A_l, SpQ + R_l) + λ‖SpQ‖_* + Σ_l λα_l‖R_l‖_*.
class FirstStageProblem {
 public:
  struct Config {
    double lambda = 1.0;
    std::vector<double> alpha;
    double eta = 1.0;
    Index trunc_rank = 0;
    ProxRule prox = ProxRule::soft;
    std::optional<int> spq_rank;  ///< d0 + d_k, for truncated init / hard thresholding
    std::vector<int> r_ranks;     ///< d_kl; empty when unknown
  };

  FirstStageProblem(std::vector<const Matrix*> layers, EdgeFamily fam, bool has_loops, Config cfg,
                    std::vector<const Matrix*> masks = {})
      : layers_(std::move(layers)), fam_(fam), loops_(has_loops), cfg_(std::move(cfg)),
        masks_(std::move(masks)) {
    if (layers_.empty()) throw InputError("first stage: empty group");
    if (masks_.empty()) masks_.assign(layers_.size(), nullptr);
    if (cfg_.alpha.size() != layers_.size()) throw InputError("first stage: alpha size mismatch");
    if (cfg_.prox == ProxRule::hard && (!cfg_.spq_rank || cfg_.r_ranks.size() != layers_.size()))
      throw InputError("hard thresholding requires every component rank");
    n_ = layers_.front()->rows();
    if (cfg_.trunc_rank <= 0) cfg_.trunc_rank = default_trunc_rank(n_);
    for (int rank : cfg_.r_ranks)
      if (rank < 0 || rank > n_) throw InputError("component rank exceeds n");
    if (cfg_.spq_rank && (*cfg_.spq_rank < 0 || *cfg_.spq_rank > n_))
      throw InputError("component rank exceeds n");
  }

  int size() const { return static_cast<int>(layers_.size()); }

  /// Averaging initializer on inverse-link transformed layers; truncated when ranks are known.
  void initialize() {
    std::vector<Matrix> proxies;
    for (const Matrix* a : layers_) proxies.push_back(inverse_link_clamped(*a, fam_));
    detail::fill_unobserved(proxies, masks_);
    Matrix mean = detail::mean_of_matrices(proxies);
    std::vector<Matrix> r;
    if (cfg_.spq_rank) mean = hard_threshold(mean, *cfg_.spq_rank);
    for (std::size_t l = 0; l < proxies.size(); ++l) {
      Matrix diff = proxies[l] - mean;
      if (!cfg_.r_ranks.empty()) diff = hard_threshold(diff, cfg_.r_ranks[l]);
      r.push_back(std::move(diff));
    }
    set_state(std::move(mean), std::move(r));
  }

  void set_state(Matrix spq, std::vector<Matrix> r) {
    if (r.size() != layers_.size()) throw InputError("first stage: state size mismatch");
    spq_ = detail::make_prox_value(std::move(spq));
    r_.clear();
    for (auto& m : r) r_.push_back(detail::make_prox_value(std::move(m)));
  }

  /// One iteration: every R_l from the current SpQ, then SpQ from the new R_l.
  void step() {
    const double eta = cfg_.eta;
    const double m = static_cast<double>(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix theta = spq_.value + r_[l].value;
      Matrix z = r_[l].value - eta * layer_grad(*layers_[l], theta, fam_, masks_[l], loops_);
      std::optional<int> hard;
      if (cfg_.prox == ProxRule::hard) hard = cfg_.r_ranks[l];
      r_[l] = detail::prox(z, eta * cfg_.lambda * cfg_.alpha[l], hard,
                           detail::next_start(cfg_.trunc_rank, r_[l].rank, n_));
    }
    Matrix grad = Matrix::Zero(n_, n_);
    for (std::size_t l = 0; l < layers_.size(); ++l)
      grad += layer_grad(*layers_[l], spq_.value + r_[l].value, fam_, masks_[l], loops_);
    Matrix z = spq_.value - (eta / m) * grad;
    std::optional<int> hard;
    if (cfg_.prox == ProxRule::hard) hard = *cfg_.spq_rank;
    spq_ = detail::prox(z, eta * cfg_.lambda / m, hard,
                        detail::next_start(cfg_.trunc_rank, spq_.rank, n_));
  }

  double nll() const {
    double total = 0.0;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      total += layer_loss(*layers_[l], spq_.value + r_[l].value, fam_, masks_[l], loops_);
    return total;
  }

  /// Penalized objective; for hard thresholding the penalty is absent.
  double objective() const {
    double total = nll();
    if (cfg_.prox == ProxRule::soft) {
      total += cfg_.lambda * spq_.nuclear;
      for (std::size_t l = 0; l < r_.size(); ++l) total += cfg_.lambda * cfg_.alpha[l] * r_[l].nuclear;
    }
    return total;
  }

  const Matrix& spq() const { return spq_.value; }
  const Matrix& r(int l) const { return r_.at(static_cast<std::size_t>(l)).value; }
  std::vector<Matrix> r_all() const {
    std::vector<Matrix> out;
    for (const auto& v : r_) out.push_back(v.value);
    return out;
  }

 private:
  std::vector<const Matrix*> layers_;
  EdgeFamily fam_;
  bool loops_;
  Config cfg_;
  std::vector<const Matrix*> masks_;
  Index n_ = 0;
  detail::ProxValue spq_;
  std::vector<detail::ProxValue> r_;
};

/// Penalized second-stage problem with frozen layer components:
///   min Σ_kl loss(A_kl, S + Q_k + R̂_kl) + λ2‖S‖_* + Σ_k λ2 α2k‖Q_k‖_*.
class SecondStageProblem {
 public:
  struct Config {
    double lambda = 1.0;
    std::vector<double> alpha;  ///< per group
    double eta = 1.0;
    Index trunc_rank = 0;
    ProxRule prox = ProxRule::soft;
    std::optional<int> s_rank;
    std::vector<int> q_ranks;
  };

  /// layers and r_hat are nested by group; masks (optional) likewise.
  SecondStageProblem(const LayerSet& layers, const LayerSet& r_hat, EdgeFamily fam, bool has_loops,
                     Config cfg, const LayerSet* masks = nullptr)
      : layers_(layers), r_hat_(r_hat), fam_(fam), loops_(has_loops), cfg_(std::move(cfg)),
        masks_(masks) {
    const std::size_t K = layers_.size();
    if (K == 0) throw InputError("second stage: no groups");
    if (r_hat_.size() != K || cfg_.alpha.size() != K)
      throw InputError("second stage: group count mismatch");
    if (cfg_.prox == ProxRule::hard && (!cfg_.s_rank || cfg_.q_ranks.size() != K))
      throw InputError("hard thresholding requires every component rank");
    n_ = layers_.front().front().rows();
    if (cfg_.trunc_rank <= 0) cfg_.trunc_rank = default_trunc_rank(n_);
    for (std::size_t k = 0; k < K; ++k) total_ += static_cast<int>(layers_[k].size());
  }

  int groups() const { return static_cast<int>(layers_.size()); }

  /// Residual-mean initializer: S⁰ = mean over groups of the group residual means
  /// C_k = mean_l(Ã_kl − R̂_kl), Q_k⁰ = C_k − S⁰. With `shared_mean`, C_k is replaced by the
  /// first-stage estimates of S+Q_k.
  void initialize(SecondInit rule, const std::vector<Matrix>* spq = nullptr) {
    const std::size_t K = layers_.size();
    std::vector<Matrix> centers;
    for (std::size_t k = 0; k < K; ++k) {
      if (rule == SecondInit::shared_mean) {
        if (!spq || spq->size() != K) throw InputError("shared-mean init needs S+Q_k estimates");
        centers.push_back((*spq)[k]);
        continue;
      }
      std::vector<Matrix> resid;
      std::vector<const Matrix*> masks;
      for (std::size_t l = 0; l < layers_[k].size(); ++l) {
        resid.push_back(inverse_link_clamped(layers_[k][l], fam_) - r_hat_[k][l]);
        masks.push_back(mask(k, l));
      }
      detail::fill_unobserved(resid, masks);
      centers.push_back(detail::mean_of_matrices(resid));
    }
    Matrix s = detail::mean_of_matrices(centers);
    if (cfg_.s_rank) s = hard_threshold(s, *cfg_.s_rank);
    std::vector<Matrix> q;
    for (std::size_t k = 0; k < K; ++k) {
      Matrix qk = centers[k] - s;
      if (!cfg_.q_ranks.empty()) qk = hard_threshold(qk, cfg_.q_ranks[k]);
      q.push_back(std::move(qk));
    }
    set_state(std::move(s), std::move(q));
  }

  void set_state(Matrix s, std::vector<Matrix> q) {
    if (q.size() != layers_.size()) throw InputError("second stage: state size mismatch");
    s_ = detail::make_prox_value(std::move(s));
    q_.clear();
    for (auto& m : q) q_.push_back(detail::make_prox_value(std::move(m)));
  }

  /// One iteration: every Q_k from the current S, then S from the new Q_k.
  void step() {
    const double eta = cfg_.eta;
    const std::size_t K = layers_.size();
    for (std::size_t k = 0; k < K; ++k) {
      const double m = static_cast<double>(layers_[k].size());
      Matrix grad = group_grad(k, q_[k].value);
      Matrix z = q_[k].value - (eta / m) * grad;
      std::optional<int> hard;
      if (cfg_.prox == ProxRule::hard) hard = cfg_.q_ranks[k];
      q_[k] = detail::prox(z, eta * cfg_.lambda * cfg_.alpha[k] / m, hard,
                           detail::next_start(cfg_.trunc_rank, q_[k].rank, n_));
    }
    Matrix grad = Matrix::Zero(n_, n_);
    for (std::size_t k = 0; k < K; ++k) grad += group_grad(k, q_[k].value);
    const double M = static_cast<double>(total_);
    Matrix z = s_.value - (eta / M) * grad;
    std::optional<int> hard;
    if (cfg_.prox == ProxRule::hard) hard = *cfg_.s_rank;
    s_ = detail::prox(z, eta * cfg_.lambda / M, hard, detail::next_start(cfg_.trunc_rank, s_.rank, n_));
  }

  double nll() const {
    double total = 0.0;
    for (std::size_t k = 0; k < layers_.size(); ++k)
      for (std::size_t l = 0; l < layers_[k].size(); ++l)
        total += layer_loss(layers_[k][l], s_.value + q_[k].value + r_hat_[k][l], fam_, mask(k, l), loops_);
    return total;
  }

  double objective() const {
    double total = nll();
    if (cfg_.prox == ProxRule::soft) {
      total += cfg_.lambda * s_.nuclear;
      for (std::size_t k = 0; k < q_.size(); ++k) total += cfg_.lambda * cfg_.alpha[k] * q_[k].nuclear;
    }
    return total;
  }

  const Matrix& s() const { return s_.value; }
  const Matrix& q(int k) const { return q_.at(static_cast<std::size_t>(k)).value; }
  std::vector<Matrix> q_all() const {
    std::vector<Matrix> out;
    for (const auto& v : q_) out.push_back(v.value);
    return out;
  }

 private:
  const Matrix* mask(std::size_t k, std::size_t l) const { return masks_ ? &(*masks_)[k][l] : nullptr; }

  Matrix group_grad(std::size_t k, const Matrix& qk) const {
    Matrix grad = Matrix::Zero(n_, n_);
    for (std::size_t l = 0; l < layers_[k].size(); ++l)
      grad += layer_grad(layers_[k][l], s_.value + qk + r_hat_[k][l], fam_, mask(k, l), loops_);
    return grad;
  }

  const LayerSet& layers_;
  const LayerSet& r_hat_;
  EdgeFamily fam_;
  bool loops_;
  Config cfg_;
  const LayerSet* masks_;
  Index n_ = 0;
  int total_ = 0;
  detail::ProxValue s_;
  std::vector<detail::ProxValue> q_;
};

/// Iterates `problem.step()` until the convergence monitor fires or max_iter is reached.
/// A non-finite objective aborts with a NumericalError suggesting a smaller learning rate.
template <typename Problem>
LossTrace run_problem(Problem& problem, const HyperParams& hp, const std::string& name) {
  LossTrace trace;
  trace.subproblem = name;
  ConvergenceMonitor monitor(hp.tol, hp.patience);
  auto record = [&](int iteration) {
    double nll = problem.nll();
    double obj = problem.objective();
    if (!std::isfinite(obj))
      throw NumericalError(name + ": non-finite loss at iteration " + std::to_string(iteration) +
                           "; try a smaller learning rate (--eta)");
    trace.nll.push_back(nll);
    trace.objective.push_back(obj);
    return monitor.update(obj);
  };
  // The monitor also fires on a run of increasing losses; a final loss well above the best
  // one seen means the step size is too large rather than that the iterates settled.
  auto diverged = [&] {
    double best = *std::min_element(trace.objective.begin(), trace.objective.end());
    return trace.objective.back() - best > 1e-3 * std::max(1.0, std::abs(best));
  };
  try {
    record(0);
    for (int t = 1; t <= hp.max_iter; ++t) {
      problem.step();
      if (record(t)) {
        if (diverged())
          throw NumericalError(name + ": loss increasing at iteration " + std::to_string(t) +
                               "; try a smaller learning rate (--eta)");
        trace.stop_reason = "converged";
        return trace;
      }
    }
  } catch (const NumericalError& e) {
    std::string msg = e.what();
    if (msg.find("learning rate") == std::string::npos)
      msg = name + ": " + msg + "; try a smaller learning rate (--eta)";
    throw NumericalError(msg);
  }
  trace.stop_reason = "max_iter";
  return trace;
}

struct FitOptions {
  bool refit = true;
  std::optional<OracleRanks> oracle_ranks;  ///< truncates the initializers when present
  ProxRule prox = ProxRule::soft;           ///< hard requires oracle_ranks
  SecondInit second_init = SecondInit::residual_mean;
  bool skip_second_stage = false;
  const LayerSet* masks = nullptr;  ///< per-layer 0/1 observation masks for edge CV
};

struct FirstStageOutput {
  Matrix spq;
  std::vector<Matrix> r;
  LossTrace trace;
  std::optional<GlmReport> refit;
};

/// Fits one group's first-stage subproblem, with optional refit.
inline FirstStageOutput fit_first_stage(const std::vector<const Matrix*>& layers, const EdgeFamily& fam,
                                        bool has_loops, double lambda, const std::vector<double>& alpha,
                                        const HyperParams& hp, const FitOptions& opt, int group,
                                        const std::vector<const Matrix*>& masks = {}) {
  FirstStageProblem::Config cfg;
  cfg.lambda = lambda;
  cfg.alpha = alpha;
  cfg.eta = hp.eta1;
  cfg.trunc_rank = hp.trunc_rank;
  cfg.prox = opt.prox;
  if (opt.oracle_ranks) {
    const auto& rk = *opt.oracle_ranks;
    auto g = static_cast<std::size_t>(group);
    cfg.spq_rank = rk.d0 + rk.dk.at(g);
    cfg.r_ranks = rk.dkl.at(g);
  } else if (opt.prox == ProxRule::hard) {
    throw InputError("hard thresholding requires oracle ranks");
  }
  FirstStageProblem problem(layers, fam, has_loops, cfg, masks);
  problem.initialize();
  FirstStageOutput out;
  out.trace = run_problem(problem, hp, "first_stage_" + std::to_string(group + 1));
  out.spq = problem.spq();
  out.r = problem.r_all();
  if (opt.refit) {
    std::vector<Matrix> data, mask_copy;
    for (const Matrix* a : layers) data.push_back(*a);
    bool masked = !masks.empty() && masks.front();
    if (masked)
      for (const Matrix* m : masks) mask_copy.push_back(*m);
    auto res = first_stage_refit(out.spq, out.r, data, fam, has_loops, masked ? &mask_copy : nullptr);
    out.spq = std::move(res.spq);
    out.r = std::move(res.r);
    out.refit = res.report;
  }
  return out;
}

struct SecondStageOutput {
  Matrix s;
  std::vector<Matrix> q;
  LossTrace trace;
  std::optional<GlmReport> refit;
};

/// Fits the second stage with the layer components `r_hat` frozen; `spq` (first-stage S+Q_k
/// estimates) is only read by the shared-mean initializer.
inline SecondStageOutput fit_second_stage(const MultiplexDataset& ds, const LayerSet& r_hat,
                                          const std::vector<Matrix>& spq, const HyperParams& hp,
                                          const FitOptions& opt) {
  SecondStageProblem::Config cfg;
  cfg.lambda = hp.lambda2;
  cfg.alpha = hp.alpha2;
  cfg.eta = hp.eta2;
  cfg.trunc_rank = hp.trunc_rank;
  cfg.prox = opt.prox;
  if (opt.oracle_ranks) {
    cfg.s_rank = opt.oracle_ranks->d0;
    cfg.q_ranks = opt.oracle_ranks->dk;
  }
  SecondStageProblem problem(ds.layers, r_hat, ds.family, ds.has_loops, cfg, opt.masks);
  problem.initialize(opt.second_init, &spq);
  SecondStageOutput out;
  out.trace = run_problem(problem, hp, "second_stage");
  out.s = problem.s();
  out.q = problem.q_all();
  if (opt.refit) {
    auto rr = second_stage_refit(out.s, out.q, r_hat, ds.layers, ds.family, ds.has_loops, opt.masks);
    out.s = std::move(rr.s);
    out.q = std::move(rr.q);
    out.refit = rr.report;
  }
  return out;
}

struct FitResult {
  LatentDecomposition decomposition;
  std::vector<Matrix> spq;          ///< first-stage S+Q_k estimates
  std::vector<LossTrace> traces;    ///< first stage per group, then second stage
  std::vector<GlmReport> refit_reports;
  std::vector<std::string> warnings;
  HyperParams hp;
  double seconds = 0.0;
};

/// Runs the first stage for every group (in parallel across groups).
inline std::vector<FirstStageOutput> fit_first_stages(const MultiplexDataset& ds, const HyperParams& hp,
                                                      const FitOptions& opt) {
  const int K = ds.groups();
  std::vector<FirstStageOutput> first(static_cast<std::size_t>(K));
  parallel_for(K, [&](int k) {
    auto ki = static_cast<std::size_t>(k);
    std::vector<const Matrix*> layers, masks;
    for (std::size_t l = 0; l < ds.layers[ki].size(); ++l) {
      layers.push_back(&ds.layers[ki][l]);
      if (opt.masks) masks.push_back(&(*opt.masks)[ki][l]);
    }
    first[ki] = fit_first_stage(layers, ds.family, ds.has_loops, hp.lambda1[ki], hp.alpha1[ki], hp,
                                opt, k, masks);
  });
  return first;
}

/// Runs both stages (the second only when not skipped) on the dataset.
inline FitResult fit(const MultiplexDataset& ds, const HyperParams& hp, const FitOptions& opt = {}) {
  auto start = std::chrono::steady_clock::now();
  ds.validate();
  hp.validate(ds.layout);
  if (opt.prox == ProxRule::hard && !opt.oracle_ranks)
    throw InputError("hard thresholding requires oracle ranks");
  const int K = ds.groups();
  FitResult res;
  res.hp = hp;
  for (int k = 0; k < K; ++k)
    if (ds.layout.size(k) == 1)
      res.warnings.push_back("group " + std::to_string(k + 1) +
                             " has a single layer: S+Q_k and R_k1 are not identifiable");

  std::vector<FirstStageOutput> first = fit_first_stages(ds, hp, opt);
  LatentDecomposition& dec = res.decomposition;
  for (auto& f : first) {
    res.spq.push_back(f.spq);
    res.traces.push_back(f.trace);
    if (f.refit) {
      res.refit_reports.push_back(*f.refit);
      if (f.refit->fallback)
        res.warnings.push_back(f.trace.subproblem + " refit skipped: " + f.refit->diagnostic);
    }
    dec.R.push_back(std::move(f.r));
  }

  if (opt.skip_second_stage) {
    dec.S = Matrix::Zero(ds.n, ds.n);
    dec.Q = res.spq;
  } else {
    SecondStageOutput second = fit_second_stage(ds, dec.R, res.spq, hp, opt);
    res.traces.push_back(std::move(second.trace));
    dec.S = std::move(second.s);
    dec.Q = std::move(second.q);
    if (second.refit) {
      if (second.refit->fallback)
        res.warnings.push_back("second_stage refit skipped: " + second.refit->diagnostic);
      res.refit_reports.push_back(*second.refit);
    }
  }
  dec.detect_signatures();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// ASE factors of every component at its detected rank.
inline LatentPositions extract_positions(const LatentDecomposition& dec) {
  LatentPositions pos;
  auto ase = [](const Matrix& g, Signature sig, Matrix& out, Signature& out_sig) {
    AseResult r = ase_extract(g, sig.dim());
    out = std::move(r.positions);
    out_sig = r.signature;
  };
  ase(dec.S, dec.sig_S, pos.V, pos.sig_V);
  pos.W.resize(dec.Q.size());
  pos.sig_W.resize(dec.Q.size());
  for (std::size_t k = 0; k < dec.Q.size(); ++k) ase(dec.Q[k], dec.sig_Q[k], pos.W[k], pos.sig_W[k]);
  pos.U.resize(dec.R.size());
  pos.sig_U.resize(dec.R.size());
  for (std::size_t k = 0; k < dec.R.size(); ++k) {
    pos.U[k].resize(dec.R[k].size());
    pos.sig_U[k].resize(dec.R[k].size());
    for (std::size_t l = 0; l < dec.R[k].size(); ++l)
      ase(dec.R[k][l], dec.sig_R[k][l], pos.U[k][l], pos.sig_U[k][l]);
  }
  return pos;
}

}  // namespace gmn
