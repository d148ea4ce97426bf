#pragma once

// Edge cross-validation of the penalty scales. Each fold hides a random 20% of every layer's
// node pairs, fits on the rest and scores the non-penalized likelihood of the hidden pairs.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/parallel.hpp>
#include <gmn/solver.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace gmn {

struct CVConfig {
  int folds = 5;
  double train_fraction = 0.8;
  std::vector<double> grid{0.03, 0.1, 0.3, 1.0, 3.0, 10.0};
  std::uint64_t seed = 0;
  bool partition = false;  ///< folds as a partition of the pairs instead of independent resamples
  bool tune_alpha = false;
  std::vector<double> alpha_grid{0.5, 1.0, 2.0};  ///< multipliers of the default α when tune_alpha

  void validate() const {
    if (folds < 1) throw InputError("cv: folds must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw InputError("cv: train_fraction must lie in (0, 1)");
    auto positive = [](const std::vector<double>& g) {
      return !g.empty() && std::all_of(g.begin(), g.end(), [](double c) { return std::isfinite(c) && c > 0.0; });
    };
    if (!positive(grid)) throw InputError("cv: grid must be non-empty and positive");
    if (tune_alpha && !positive(alpha_grid)) throw InputError("cv: alpha grid must be non-empty and positive");
  }
};

/// Train/test masks for one fold; both symmetric 0/1, nested like the dataset's layers. The
/// diagonal is in neither mask for loop-free data.
struct EdgeFold {
  LayerSet train;
  LayerSet test;
};

namespace detail {

inline std::vector<std::pair<Index, Index>> counted_pairs(Index n, bool loops) {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < (loops ? j + 1 : j); ++i) pairs.emplace_back(i, j);
  return pairs;
}

inline void mark(Matrix& m, const std::pair<Index, Index>& p) { m(p.first, p.second) = m(p.second, p.first) = 1.0; }

}  // namespace detail

/// Per fold and layer, round(train_fraction * P) of the P unordered pairs go to training, drawn
/// independently per layer and fold. With `partition`, each layer's pairs are shuffled once and
/// fold f tests the f-th of `folds` near-equal slices.
inline std::vector<EdgeFold> make_edge_folds(Index n, const GroupLayout& layout, bool has_loops,
                                             const CVConfig& cfg) {
  cfg.validate();
  auto pairs = detail::counted_pairs(n, has_loops);
  const auto P = pairs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(P)));
  std::vector<EdgeFold> folds(static_cast<std::size_t>(cfg.folds));
  for (auto& f : folds) {
    f.train.resize(static_cast<std::size_t>(layout.groups()));
    f.test.resize(static_cast<std::size_t>(layout.groups()));
  }
  for (GroupIndex g : layout.indices()) {
    auto ki = static_cast<std::size_t>(g.k);
    std::uint64_t layer_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(layout.flat(g)));
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), 0);
    Rng shared(layer_seed);
    if (cfg.partition) std::shuffle(order.begin(), order.end(), shared);
    for (int f = 0; f < cfg.folds; ++f) {
      Matrix train = Matrix::Zero(n, n), test = Matrix::Zero(n, n);
      if (cfg.partition) {
        std::size_t lo = P * static_cast<std::size_t>(f) / static_cast<std::size_t>(cfg.folds);
        std::size_t hi = P * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(cfg.folds);
        for (std::size_t t = 0; t < P; ++t) detail::mark(t >= lo && t < hi ? test : train, pairs[order[t]]);
      } else {
        Rng rng(derive_seed(layer_seed, static_cast<std::uint64_t>(f) + 1));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t t = 0; t < P; ++t) detail::mark(t < n_train ? train : test, pairs[order[t]]);
      }
      folds[static_cast<std::size_t>(f)].train[ki].push_back(std::move(train));
      folds[static_cast<std::size_t>(f)].test[ki].push_back(std::move(test));
    }
  }
  return folds;
}

inline std::vector<EdgeFold> make_edge_folds(const MultiplexDataset& ds, const CVConfig& cfg) {
  return make_edge_folds(ds.n, ds.layout, ds.has_loops, cfg);
}

/// Scores over a grid of candidate (c_λ, c_α) pairs; scores[c][f] is the held-out loss of
/// fold f, +inf when the fit failed numerically.
struct CVResult {
  std::string stage;
  std::vector<double> grid;
  std::vector<double> alpha_mult;  ///< parallel to grid; all 1 unless α is tuned
  std::vector<std::vector<double>> scores;
  std::vector<double> mean_scores;
  std::size_t chosen = 0;
  double chosen_c() const { return grid.at(chosen); }
  double chosen_alpha_mult() const { return alpha_mult.at(chosen); }
  std::vector<std::string> warnings;
};

namespace detail {

inline void expand_grid(const CVConfig& cfg, CVResult& res) {
  std::vector<double> amult = cfg.tune_alpha ? cfg.alpha_grid : std::vector<double>{1.0};
  std::vector<double> grid = cfg.grid;
  std::sort(grid.begin(), grid.end());
  for (double c : grid)
    for (double a : amult) {
      res.grid.push_back(c);
      res.alpha_mult.push_back(a);
    }
}

/// Fold-averaged scores, argmin with ties going to the earlier (smaller c) candidate.
inline void choose(CVResult& res) {
  res.mean_scores.clear();
  for (const auto& row : res.scores) {
    double sum = 0.0;
    for (double v : row) sum += v;
    res.mean_scores.push_back(sum / static_cast<double>(row.size()));
  }
  res.chosen = 0;
  bool any = false;
  for (std::size_t c = 0; c < res.mean_scores.size(); ++c) {
    if (!std::isfinite(res.mean_scores[c])) continue;
    if (!any || res.mean_scores[c] < res.mean_scores[res.chosen]) res.chosen = c;
    any = true;
  }
  if (!any) throw NumericalError(res.stage + ": every cross-validation fit diverged");
}

template <typename Fn>
void score_grid(CVResult& res, int folds, Fn&& score) {
  const auto G = res.grid.size();
  res.scores.assign(G, std::vector<double>(static_cast<std::size_t>(folds), 0.0));
  std::vector<std::string> failures(G * static_cast<std::size_t>(folds));
  parallel_for(static_cast<int>(G) * folds, [&](int job) {
    auto c = static_cast<std::size_t>(job / folds);
    auto f = static_cast<std::size_t>(job % folds);
    try {
      res.scores[c][f] = score(c, f);
    } catch (const NumericalError& e) {
      res.scores[c][f] = std::numeric_limits<double>::infinity();
      failures[static_cast<std::size_t>(job)] = e.what();
    }
  });
  for (std::size_t j = 0; j < failures.size(); ++j)
    if (!failures[j].empty())
      res.warnings.push_back(res.stage + " c=" + format_double(res.grid[j / static_cast<std::size_t>(folds)]) +
                             " fold " + std::to_string(j % static_cast<std::size_t>(folds) + 1) + ": " +
                             failures[j]);
}

}  // namespace detail

/// Cross-validates λ₁k = c√(n m_k) for group k (α₁kℓ = c_α/√m_k).
inline CVResult tune_first_stage(const MultiplexDataset& ds, int k, const std::vector<EdgeFold>& folds,
                                 const CVConfig& cfg, const HyperParams& base, const FitOptions& opt = {}) {
  cfg.validate();
  auto ki = static_cast<std::size_t>(k);
  CVResult res;
  res.stage = "first_stage_" + std::to_string(k + 1);
  detail::expand_grid(cfg, res);
  const double m = ds.layout.size(k);
  const double nd = static_cast<double>(ds.n);
  std::vector<const Matrix*> layers;
  for (const Matrix& a : ds.layers[ki]) layers.push_back(&a);
  detail::score_grid(res, static_cast<int>(folds.size()), [&](std::size_t c, std::size_t f) {
    const EdgeFold& fold = folds[f];
    std::vector<const Matrix*> masks;
    for (const Matrix& mk : fold.train[ki]) masks.push_back(&mk);
    std::vector<double> alpha(ds.layers[ki].size(), res.alpha_mult[c] / std::sqrt(m));
    FirstStageOutput out = fit_first_stage(layers, ds.family, ds.has_loops, res.grid[c] * std::sqrt(nd * m),
                                           alpha, base, opt, k, masks);
    double loss = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l)
      loss += layer_loss(*layers[l], out.spq + out.r[l], ds.family, &fold.test[ki][l], ds.has_loops);
    return loss;
  });
  detail::choose(res);
  return res;
}

/// Cross-validates λ₂ = c√(nM) (α₂k = c_α√(m_k/M)) with the layer components `r_hat` frozen.
inline CVResult tune_second_stage(const MultiplexDataset& ds, const LayerSet& r_hat,
                                  const std::vector<Matrix>& spq, const std::vector<EdgeFold>& folds,
                                  const CVConfig& cfg, const HyperParams& base, const FitOptions& opt = {}) {
  cfg.validate();
  CVResult res;
  res.stage = "second_stage";
  detail::expand_grid(cfg, res);
  const double M = ds.layout.total();
  const double nd = static_cast<double>(ds.n);
  detail::score_grid(res, static_cast<int>(folds.size()), [&](std::size_t c, std::size_t f) {
    const EdgeFold& fold = folds[f];
    HyperParams hp = base;
    hp.lambda2 = res.grid[c] * std::sqrt(nd * M);
    for (int k = 0; k < ds.groups(); ++k)
      hp.alpha2[static_cast<std::size_t>(k)] = res.alpha_mult[c] * std::sqrt(ds.layout.size(k) / M);
    FitOptions fo = opt;
    fo.masks = &fold.train;
    SecondStageOutput out = fit_second_stage(ds, r_hat, spq, hp, fo);
    double loss = 0.0;
    for (GroupIndex g : ds.layout.indices()) {
      auto ki = static_cast<std::size_t>(g.k);
      auto li = static_cast<std::size_t>(g.l);
      loss += layer_loss(ds.layers[ki][li], out.s + out.q[ki] + r_hat[ki][li], ds.family, &fold.test[ki][li],
                         ds.has_loops);
    }
    return loss;
  });
  detail::choose(res);
  return res;
}

struct TuneResult {
  std::vector<CVResult> first;  ///< one per group
  CVResult second;
  HyperParams hp;               ///< defaults with the chosen λ (and α) substituted
};

/// Full tuning: per-group first-stage CV, a full-data first-stage fit at the chosen λ₁k, then
/// second-stage CV with those layer components frozen.
inline TuneResult tune(const MultiplexDataset& ds, const CVConfig& cfg, const FitOptions& opt = {},
                       std::optional<HyperParams> base = std::nullopt) {
  ds.validate();
  cfg.validate();
  HyperParams hp = base ? *base : default_hyperparams(ds, 1.0, 1.0);
  hp.validate(ds.layout);
  std::vector<EdgeFold> folds = make_edge_folds(ds, cfg);
  TuneResult out;
  const double nd = static_cast<double>(ds.n);
  for (int k = 0; k < ds.groups(); ++k) {
    auto ki = static_cast<std::size_t>(k);
    CVResult r = tune_first_stage(ds, k, folds, cfg, hp, opt);
    const double m = ds.layout.size(k);
    hp.lambda1[ki] = r.chosen_c() * std::sqrt(nd * m);
    for (double& a : hp.alpha1[ki]) a = r.chosen_alpha_mult() / std::sqrt(m);
    out.first.push_back(std::move(r));
  }
  FitOptions full = opt;
  full.masks = nullptr;
  std::vector<FirstStageOutput> first = fit_first_stages(ds, hp, full);
  LayerSet r_hat;
  std::vector<Matrix> spq;
  for (auto& f : first) {
    r_hat.push_back(std::move(f.r));
    spq.push_back(std::move(f.spq));
  }
  out.second = tune_second_stage(ds, r_hat, spq, folds, cfg, hp, opt);
  const double M = ds.layout.total();
  hp.lambda2 = out.second.chosen_c() * std::sqrt(nd * M);
  for (int k = 0; k < ds.groups(); ++k)
    hp.alpha2[static_cast<std::size_t>(k)] = out.second.chosen_alpha_mult() * std::sqrt(ds.layout.size(k) / M);
  out.hp = hp;
  return out;
}

inline json cv_to_json(const CVResult& r) {
  json j;
  j["stage"] = r.stage;
  j["grid"] = r.grid;
  j["alpha_multipliers"] = r.alpha_mult;
  json scores = json::array();
  for (const auto& row : r.scores) {
    json jr = json::array();
    for (double v : row) jr.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    scores.push_back(jr);
  }
  j["fold_scores"] = scores;
  json means = json::array();
  for (double v : r.mean_scores) means.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j["mean_scores"] = means;
  j["chosen_c"] = r.chosen_c();
  j["chosen_alpha_multiplier"] = r.chosen_alpha_mult();
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace gmn
