#pragma once

// Relative Frobenius errors of estimated components against the truth.

#include <gmn/core.hpp>
#include <gmn/data_model.hpp>

#include <map>
#include <string>
#include <vector>

namespace gmn {

/// ‖Z − Ẑ‖_F / ‖Z‖_F.
inline double rfe(const Matrix& truth, const Matrix& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw InputError("rfe: dimension mismatch");
  const double denom = truth.norm();
  if (denom == 0.0) throw InputError("rfe: ground truth is zero");
  return (truth - estimate).norm() / denom;
}

/// Mean of the pairwise RFEs.
inline double arfe(const std::vector<Matrix>& truth, const std::vector<Matrix>& estimate) {
  if (truth.size() != estimate.size()) throw InputError("arfe: length mismatch");
  if (truth.empty()) throw InputError("arfe: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sum += rfe(truth[i], estimate[i]);
  return sum / static_cast<double>(truth.size());
}

/// Per-layer Θ_kl = S + Q_k + R_kl.
inline LayerSet thetas(const LatentDecomposition& dec) {
  LayerSet out(dec.R.size());
  for (std::size_t k = 0; k < dec.R.size(); ++k)
    for (const Matrix& r : dec.R[k]) out[k].push_back(dec.S + dec.Q[k] + r);
  return out;
}

/// ARFE of Θ, S, the Q collection and the R collection.
inline std::map<std::string, double> component_errors(const LatentDecomposition& truth,
                                                      const LatentDecomposition& estimate) {
  if (truth.Q.size() != estimate.Q.size() || truth.R.size() != estimate.R.size())
    throw InputError("metrics: decompositions have different group counts");
  std::map<std::string, double> out;
  out["Theta"] = arfe(flatten(thetas(truth)), flatten(thetas(estimate)));
  out["S"] = rfe(truth.S, estimate.S);
  out["Q"] = arfe(truth.Q, estimate.Q);
  out["R"] = arfe(flatten(truth.R), flatten(estimate.R));
  return out;
}

/// Full metrics report: per-component RFE and the ARFE summaries.
inline json metrics_report(const LatentDecomposition& truth, const LatentDecomposition& estimate) {
  json j;
  j["arfe"] = component_errors(truth, estimate);
  json per;
  per["S"] = rfe(truth.S, estimate.S);
  json q = json::array();
  for (std::size_t k = 0; k < truth.Q.size(); ++k) q.push_back(rfe(truth.Q[k], estimate.Q[k]));
  per["Q"] = q;
  json r = json::object(), th = json::object();
  LayerSet tt = thetas(truth), te = thetas(estimate);
  for (std::size_t k = 0; k < truth.R.size(); ++k) {
    if (truth.R[k].size() != estimate.R[k].size()) throw InputError("metrics: group sizes differ");
    for (std::size_t l = 0; l < truth.R[k].size(); ++l) {
      std::string key = layer_key({static_cast<int>(k), static_cast<int>(l)});
      r[key] = rfe(truth.R[k][l], estimate.R[k][l]);
      th[key] = rfe(tt[k][l], te[k][l]);
    }
  }
  per["R"] = r;
  per["Theta"] = th;
  j["rfe"] = per;
  j["signatures"] = {{"truth", decomposition_summary(truth)}, {"estimate", decomposition_summary(estimate)}};
  return j;
}

}  // namespace gmn
