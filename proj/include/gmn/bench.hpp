#pragma once

// Simulation sweeps: vary one sampler parameter, replicate over seeds, fit every requested
// method and record component errors as a tidy table.

#include <gmn/baselines.hpp>
#include <gmn/core.hpp>
#include <gmn/data_model.hpp>
#include <gmn/metrics.hpp>
#include <gmn/parallel.hpp>
#include <gmn/sampler.hpp>
#include <gmn/solver.hpp>
#include <gmn/tuning.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace gmn {

/// One simulation setting.
struct SimPoint {
  Index n = 200;
  int M = 16;
  int K = 4;
  int d = 3;
  EdgeFamily family = EdgeFamily::gaussian(1.0);
  bool has_loops = false;
  AngleSpec angles;

  GroupLayout layout() const { return balanced_layout(M, K); }
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"gmn", "multiness", "oracle", "mase", "oracle-est"};
  return m;
}

struct SweepConfig {
  std::string vary = "n";  ///< n, M, K, d, sigma2, s_vw, s_vu, s_wu, s_ww, s_uu
  std::vector<double> values{100, 200, 400};
  SimPoint base;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> methods{"gmn"};
  double c1 = 3.0;
  double c2 = 3.0;
  bool tune = false;  ///< cross-validate λ per dataset instead of using c1, c2
  CVConfig cv;
  bool refit = true;

  SimPoint point(double value) const {
    SimPoint p = base;
    auto as_int = [&](const char* name) {
      if (value != std::floor(value) || value < 1) throw InputError(std::string("sweep: ") + name + " values must be positive integers");
      return static_cast<int>(value);
    };
    if (vary == "n") p.n = as_int("n");
    else if (vary == "M") p.M = as_int("M");
    else if (vary == "K") p.K = as_int("K");
    else if (vary == "d") p.d = as_int("d");
    else if (vary == "sigma2") p.family.sigma2 = value;
    else if (vary == "s_vw") p.angles.s_vw = value;
    else if (vary == "s_vu") p.angles.s_vu = value;
    else if (vary == "s_wu") p.angles.s_wu = value;
    else if (vary == "s_ww") p.angles.s_ww = value;
    else if (vary == "s_uu") p.angles.s_uu = value;
    else throw InputError("sweep: unknown parameter to vary '" + vary + "'");
    return p;
  }
};

namespace detail {

/// Reads an optional field, reporting the field path on type errors.
template <typename T>
void read_field(const json& j, const std::string& key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("sweep config: field '" + path + key + "' has the wrong type");
  }
}

inline void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw InputError("sweep config: '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw InputError("sweep config: unknown field '" + path + it.key() + "'");
}

}  // namespace detail

/// Parses a sweep config, e.g.
///   {"vary": "n", "values": [100, 200], "seeds": 5, "methods": ["gmn", "oracle"],
///    "base": {"n": 200, "M": 16, "K": 4, "d": 3, "edge_family": {"kind": "gaussian", "sigma2": 1},
///             "has_loops": false, "angles": {"s_vu": 0.1, "s_wu": 0.1}},
///    "hyper": {"c1": 3, "c2": 3}}
/// `seeds` is either a count (seeds 0..count-1) or an explicit list. `"hyper": "tune"` selects
/// cross-validation, optionally configured by a "cv" object.
inline SweepConfig parse_sweep_config(const json& j) {
  detail::check_keys(j, "", {"vary", "values", "base", "seeds", "methods", "hyper", "cv", "refit"});
  SweepConfig cfg;
  detail::read_field(j, "vary", "", cfg.vary);
  detail::read_field(j, "values", "", cfg.values);
  detail::read_field(j, "refit", "", cfg.refit);
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (s.is_number_unsigned() || s.is_number_integer()) {
      long long count = s.get<long long>();
      if (count < 1) throw InputError("sweep config: field 'seeds' must be positive");
      cfg.seeds.clear();
      for (long long i = 0; i < count; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
    } else {
      detail::read_field(j, "seeds", "", cfg.seeds);
    }
  }
  detail::read_field(j, "methods", "", cfg.methods);
  for (const auto& m : cfg.methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw InputError("sweep config: field 'methods' has unknown method '" + m + "'");
  if (j.contains("base")) {
    const json& b = j.at("base");
    detail::check_keys(b, "base.", {"n", "M", "K", "d", "edge_family", "has_loops", "angles"});
    long long n = cfg.base.n;
    detail::read_field(b, "n", "base.", n);
    cfg.base.n = static_cast<Index>(n);
    detail::read_field(b, "M", "base.", cfg.base.M);
    detail::read_field(b, "K", "base.", cfg.base.K);
    detail::read_field(b, "d", "base.", cfg.base.d);
    detail::read_field(b, "has_loops", "base.", cfg.base.has_loops);
    if (b.contains("edge_family")) cfg.base.family = family_from_json(b.at("edge_family"));
    if (b.contains("angles")) {
      const json& a = b.at("angles");
      detail::check_keys(a, "base.angles.", {"s_vw", "s_vu", "s_wu", "s_ww", "s_uu"});
      detail::read_field(a, "s_vw", "base.angles.", cfg.base.angles.s_vw);
      detail::read_field(a, "s_vu", "base.angles.", cfg.base.angles.s_vu);
      detail::read_field(a, "s_wu", "base.angles.", cfg.base.angles.s_wu);
      detail::read_field(a, "s_ww", "base.angles.", cfg.base.angles.s_ww);
      detail::read_field(a, "s_uu", "base.angles.", cfg.base.angles.s_uu);
    }
  }
  if (j.contains("hyper")) {
    const json& h = j.at("hyper");
    if (h.is_string()) {
      if (h.get<std::string>() != "tune") throw InputError("sweep config: field 'hyper' must be \"tune\" or an object");
      cfg.tune = true;
    } else {
      detail::check_keys(h, "hyper.", {"c1", "c2"});
      detail::read_field(h, "c1", "hyper.", cfg.c1);
      detail::read_field(h, "c2", "hyper.", cfg.c2);
    }
  }
  if (j.contains("cv")) {
    const json& c = j.at("cv");
    detail::check_keys(c, "cv.", {"folds", "train_fraction", "grid", "seed"});
    detail::read_field(c, "folds", "cv.", cfg.cv.folds);
    detail::read_field(c, "train_fraction", "cv.", cfg.cv.train_fraction);
    detail::read_field(c, "grid", "cv.", cfg.cv.grid);
    detail::read_field(c, "seed", "cv.", cfg.cv.seed);
  }
  if (cfg.values.empty()) throw InputError("sweep config: field 'values' must be non-empty");
  if (cfg.seeds.empty()) throw InputError("sweep config: field 'seeds' must be non-empty");
  if (cfg.methods.empty()) throw InputError("sweep config: field 'methods' must be non-empty");
  for (double v : cfg.values) (void)cfg.point(v);
  return cfg;
}

/// One tidy result row.
struct SweepRow {
  std::string method;
  Index n = 0;
  int M = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::string metric;     ///< "arfe" or "seconds"
  std::string component;  ///< Theta, S, Q, R ("all" for seconds)
  double value = 0.0;
  double point = 0.0;     ///< value of the varied parameter
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;
};

/// Ground truth and data for one (point, seed); every method sees the same draw.
inline std::pair<GroundTruth, MultiplexDataset> simulate(const SimPoint& p, std::uint64_t seed) {
  GroundTruth gt = sample_components(p.n, p.d, p.layout(), p.angles, derive_seed(seed, 1));
  MultiplexDataset ds = sample_layers(gt, p.family, p.has_loops, derive_seed(seed, 2));
  return {std::move(gt), std::move(ds)};
}

/// Fits one method and returns its component errors (Θ only for MASE).
inline std::map<std::string, double> run_method(const std::string& method, const SweepConfig& cfg,
                                                const GroundTruth& gt, const MultiplexDataset& ds,
                                                std::uint64_t seed) {
  const OracleRanks ranks = OracleRanks::uniform(ds.layout, gt.d);
  auto hyper = [&]() {
    if (!cfg.tune) return default_hyperparams(ds, cfg.c1, cfg.c2);
    CVConfig cv = cfg.cv;
    cv.seed = derive_seed(cfg.cv.seed, seed);
    FitOptions fo;
    fo.refit = cfg.refit;
    return tune(ds, cv, fo).hp;
  };
  if (method == "gmn") {
    FitOptions fo;
    fo.refit = cfg.refit;
    return component_errors(gt.grams, fit(ds, hyper(), fo).decomposition);
  }
  if (method == "multiness") {
    double c = cfg.c1;
    if (cfg.tune) {
      // Cross-validate the single-group problem over all layers.
      MultiplexDataset flat = ds;
      flat.layout = GroupLayout({ds.layout.total()});
      flat.layers = LayerSet{flatten(ds.layers)};
      CVConfig cv = cfg.cv;
      cv.seed = derive_seed(cfg.cv.seed, seed);
      auto folds = make_edge_folds(flat, cv);
      FitOptions fo;
      fo.refit = cfg.refit;
      c = tune_first_stage(flat, 0, folds, cv, default_hyperparams(flat, 1.0, 1.0), fo).chosen_c();
    }
    return component_errors(gt.grams, fit_multiness_all(ds, c, default_hyperparams(ds, 1.0, 1.0), cfg.refit));
  }
  if (method == "oracle") return component_errors(gt.grams, fit_oracle_nonconvex(ds, ranks).decomposition);
  if (method == "oracle-est") return component_errors(gt.grams, oracle_estimators(ds, gt));
  if (method == "mase") {
    std::vector<std::vector<int>> dims;
    for (int k = 0; k < ds.groups(); ++k) dims.emplace_back(static_cast<std::size_t>(ds.layout.size(k)), 3 * gt.d);
    int joint = gt.d * (1 + ds.groups() + ds.layout.total());
    LayerSet est = fit_mase(ds, dims, joint);
    return {{"Theta", arfe(flatten(gt.theta), flatten(est))}};
  }
  throw InputError("unknown method '" + method + "'");
}

/// Runs every (point, seed) job in parallel; rows come back sorted by (point, seed, method).
inline SweepResult run_sweep(const SweepConfig& cfg) {
  struct Job {
    std::size_t point;
    std::size_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < cfg.values.size(); ++p)
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({p, s});
  std::vector<std::vector<SweepRow>> rows(jobs.size());
  std::vector<std::vector<std::string>> failures(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), [&](int j) {
    const Job job = jobs[static_cast<std::size_t>(j)];
    const double value = cfg.values[job.point];
    const std::uint64_t seed = cfg.seeds[job.seed];
    SimPoint p = cfg.point(value);
    auto row = [&](const std::string& method, const std::string& metric, const std::string& comp, double v) {
      return SweepRow{method, p.n, p.M, p.K, seed, metric, comp, v, value};
    };
    try {
      auto [gt, ds] = simulate(p, seed);
      for (const auto& method : cfg.methods) {
        try {
          auto t0 = std::chrono::steady_clock::now();
          auto errs = run_method(method, cfg, gt, ds, seed);
          double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          for (const auto& [comp, v] : errs) rows[static_cast<std::size_t>(j)].push_back(row(method, "arfe", comp, v));
          rows[static_cast<std::size_t>(j)].push_back(row(method, "seconds", "all", secs));
        } catch (const Error& e) {
          failures[static_cast<std::size_t>(j)].push_back(method + " at " + cfg.vary + "=" + format_double(value) +
                                                          " seed " + std::to_string(seed) + ": " + e.what());
        }
      }
    } catch (const Error& e) {
      failures[static_cast<std::size_t>(j)].push_back("sampling at " + cfg.vary + "=" + format_double(value) +
                                                      " seed " + std::to_string(seed) + ": " + e.what());
    }
  });
  SweepResult out;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    out.rows.insert(out.rows.end(), rows[j].begin(), rows[j].end());
    out.failures.insert(out.failures.end(), failures[j].begin(), failures[j].end());
  }
  return out;
}

inline const std::string& sweep_csv_header() {
  static const std::string h = "method,n,M,K,seed,metric,component,value,point";
  return h;
}

inline void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << sweep_csv_header() << "\n";
  for (const auto& r : rows)
    out << r.method << "," << r.n << "," << r.M << "," << r.K << "," << r.seed << "," << r.metric << ","
        << r.component << "," << format_double(r.value) << "," << format_double(r.point) << "\n";
  if (!out) throw InputError("failed writing " + path.string());
}

/// Mean and sample standard deviation over seeds.
struct SweepSummary {
  std::string method;
  double point = 0.0;
  std::string metric;
  std::string component;
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  int count = 0;
};

inline std::vector<SweepSummary> aggregate(const std::vector<SweepRow>& rows) {
  std::map<std::tuple<std::string, double, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.method, r.point, r.metric, r.component}].push_back(r.value);
  std::vector<SweepSummary> out;
  for (auto& [key, vals] : groups) {
    SweepSummary s;
    std::tie(s.method, s.point, s.metric, s.component) = key;
    s.count = static_cast<int>(vals.size());
    for (double v : vals) s.mean += v;
    s.mean /= s.count;
    double ss = 0.0;
    for (double v : vals) ss += (v - s.mean) * (v - s.mean);
    s.sd = s.count > 1 ? std::sqrt(ss / (s.count - 1)) : 0.0;
    std::sort(vals.begin(), vals.end());
    s.median = s.count % 2 == 1 ? vals[static_cast<std::size_t>(s.count / 2)]
                                : 0.5 * (vals[static_cast<std::size_t>(s.count / 2 - 1)] + vals[static_cast<std::size_t>(s.count / 2)]);
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(const fs::path& path, const std::vector<SweepSummary>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "method,point,metric,component,mean,sd,median,count\n";
  for (const auto& s : rows)
    out << s.method << "," << format_double(s.point) << "," << s.metric << "," << s.component << ","
        << format_double(s.mean) << "," << format_double(s.sd) << "," << format_double(s.median) << "," << s.count
        << "\n";
  if (!out) throw InputError("failed writing " + path.string());
}

/// Looks up one aggregate; throws when absent.
inline const SweepSummary& find_summary(const std::vector<SweepSummary>& rows, const std::string& method,
                                        double point, const std::string& component,
                                        const std::string& metric = "arfe") {
  for (const auto& s : rows)
    if (s.method == method && s.point == point && s.component == component && s.metric == metric) return s;
  throw InputError("no aggregate for " + method + " " + component + " at " + format_double(point));
}

}  // namespace gmn
