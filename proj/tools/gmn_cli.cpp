// gmn: command-line front end for generating, fitting, tuning, benchmarking and analysing
// grouped multiplex networks.

#include <gmn/gmn.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace gmn;

struct PairC {
  double c1 = 1.0;
  double c2 = 1.0;
};

PairC parse_pair(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw InputError("--hyper expects c1,c2");
  PairC p;
  try {
    p.c1 = std::stod(s.substr(0, comma));
    p.c2 = std::stod(s.substr(comma + 1));
  } catch (const std::exception&) {
    throw InputError("--hyper expects two numbers, got '" + s + "'");
  }
  if (!(p.c1 > 0.0) || !(p.c2 > 0.0)) throw InputError("--hyper values must be positive");
  return p;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError(flag + " expects comma-separated integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw InputError(flag + " is empty");
  return out;
}

json hp_to_json(const HyperParams& hp) {
  return json{{"lambda1", hp.lambda1}, {"alpha1", hp.alpha1}, {"lambda2", hp.lambda2},
              {"alpha2", hp.alpha2},   {"eta1", hp.eta1},     {"eta2", hp.eta2},
              {"tol", hp.tol},         {"patience", hp.patience}, {"max_iter", hp.max_iter},
              {"trunc_rank", hp.trunc_rank}};
}

json traces_to_json(const std::vector<LossTrace>& traces) {
  json out = json::array();
  for (const auto& t : traces)
    out.push_back({{"subproblem", t.subproblem},
                   {"iterations", static_cast<int>(t.objective.size()) - 1},
                   {"stop_reason", t.stop_reason},
                   {"final_objective", t.objective.empty() ? 0.0 : t.objective.back()}});
  return out;
}

json refit_to_json(const std::vector<GlmReport>& reports) {
  json out = json::array();
  for (const auto& r : reports)
    out.push_back({{"coefficients", r.coefficients}, {"iterations", r.iterations}, {"converged", r.converged},
                   {"fallback", r.fallback}, {"nll_before", r.nll_before}, {"nll_after", r.nll_after},
                   {"diagnostic", r.diagnostic}});
  return out;
}

void write_trace_csv(const fs::path& path, const std::vector<LossTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "iteration,subproblem,loss\n";
  for (const auto& t : traces)
    for (std::size_t i = 0; i < t.objective.size(); ++i)
      out << i << ',' << t.subproblem << ',' << format_double(t.objective[i]) << '\n';
}

OracleRanks read_oracle_ranks(const fs::path& path, const GroupLayout& layout) {
  json j = read_json_file(path);
  if (j.contains("d")) {
    for (const auto& key : {"d0", "dk", "dkl"})
      if (j.contains(key)) throw InputError(path.string() + ": give either 'd' or 'd0'/'dk'/'dkl'");
    return OracleRanks::uniform(layout, j.at("d").get<int>());
  }
  OracleRanks r;
  try {
    r.d0 = j.at("d0").get<int>();
    r.dk = j.at("dk").get<std::vector<int>>();
    r.dkl = j.at("dkl").get<std::vector<std::vector<int>>>();
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return r;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

MultiplexDataset load(const fs::path& dir, bool symmetrize) {
  LoadOptions opts;
  opts.force_symmetrize = symmetrize;
  LoadReport rep;
  MultiplexDataset ds = load_dataset(dir, opts, &rep);
  print_warnings(rep.warnings);
  return ds;
}

void add_cv_flags(CLI::App* cmd, CVConfig& cv) {
  cmd->add_option("--folds", cv.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--train-fraction", cv.train_fraction, "Fraction of node pairs used for training in each fold")
      ->capture_default_str();
  cmd->add_option("--grid", cv.grid, "Candidate multipliers c for the penalty scale")->delimiter(',');
  cmd->add_option("--cv-seed", cv.seed, "Seed for the edge folds")->capture_default_str();
  cmd->add_flag("--partition", cv.partition, "Use disjoint folds instead of independent resamples");
  cmd->add_flag("--tune-alpha", cv.tune_alpha, "Also cross-validate a multiplier on the individual penalties");
}

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  Index n = 0;
  int d = 0;
  int K = 0;
  std::string m;
  AngleSpec angles;
  std::string family = "gaussian";
  double sigma2 = 1.0;
  bool loops = false;
  std::uint64_t seed = 0;
  std::string out;
};

void run_generate(const GenerateArgs& a) {
  GroupLayout layout(parse_int_list(a.m, "--m"));
  if (a.K != 0 && a.K != layout.groups()) throw InputError("--K does not match the number of entries in --m");
  GroundTruth gt = sample_components(a.n, a.d, layout, a.angles, derive_seed(a.seed, 1));
  MultiplexDataset ds = sample_layers(gt, parse_family(a.family, a.sigma2), a.loops, derive_seed(a.seed, 2));
  fs::path out(a.out);
  save_dataset(ds, out);
  json meta{{"d", a.d},
            {"seed", a.seed},
            {"angles", {{"s_vw", a.angles.s_vw}, {"s_vu", a.angles.s_vu}, {"s_ww", a.angles.s_ww},
                        {"s_wu", a.angles.s_wu}, {"s_uu", a.angles.s_uu}}}};
  write_decomposition_dir(out / "truth", gt.grams, &gt.positions, meta, "truth.json");
  std::cout << "wrote dataset to " << out.string() << " and ground truth to " << (out / "truth").string() << '\n';
}

// --- fit ---------------------------------------------------------------------

struct FitArgs {
  std::string dataset;
  std::string out;
  std::string hyper = "1,1";
  bool tune = false;
  CVConfig cv;
  bool refit = true;
  std::string family;
  double sigma2 = 1.0;
  double eta = 0.0;
  double tol = 1e-5;
  int max_iter = 2000;
  int patience = 10;
  std::string oracle_ranks;
  bool symmetrize = false;
};

void run_fit(const FitArgs& a) {
  MultiplexDataset ds = load(a.dataset, a.symmetrize);
  if (!a.family.empty()) {
    ds.family = parse_family(a.family, a.sigma2);
    ds.validate();
  }
  fs::path out = a.out.empty() ? fs::path(a.dataset) / "fit" : fs::path(a.out);
  PairC c = parse_pair(a.hyper);
  FitOptions opt;
  opt.refit = a.refit;
  json meta;
  HyperParams hp;
  std::optional<TuneResult> tuned;
  if (a.tune) {
    tuned = tune(ds, a.cv, opt);
    hp = tuned->hp;
    meta["cv"] = {{"second", cv_to_json(tuned->second)}};
    for (const auto& f : tuned->first) meta["cv"]["first"].push_back(cv_to_json(f));
  } else {
    hp = default_hyperparams(ds, c.c1, c.c2);
    meta["c1"] = c.c1;
    meta["c2"] = c.c2;
  }
  if (a.eta > 0.0) hp.eta1 = hp.eta2 = a.eta;
  hp.tol = a.tol;
  hp.max_iter = a.max_iter;
  hp.patience = a.patience;
  FitResult r = a.oracle_ranks.empty() ? fit(ds, hp, opt)
                                       : fit_oracle_nonconvex(ds, read_oracle_ranks(a.oracle_ranks, ds.layout), hp);
  print_warnings(r.warnings);
  meta["hyperparameters"] = hp_to_json(r.hp);
  meta["edge_family"] = family_to_json(ds.family);
  meta["has_loops"] = ds.has_loops;
  meta["refit"] = a.oracle_ranks.empty() && a.refit;
  meta["oracle_ranks"] = !a.oracle_ranks.empty();
  meta["traces"] = traces_to_json(r.traces);
  meta["refit_reports"] = refit_to_json(r.refit_reports);
  meta["warnings"] = r.warnings;
  meta["seconds"] = r.seconds;
  write_decomposition_dir(out, r.decomposition, nullptr, meta);
  write_trace_csv(out / "trace.csv", r.traces);
  if (tuned) {
    json cv{{"second", meta["cv"]["second"]}, {"first", meta["cv"]["first"]}, {"hyperparameters", meta["hyperparameters"]}};
    write_json_file(out / "cv.json", cv);
  }
  std::cout << "wrote decomposition to " << out.string() << '\n';
}

// --- tune --------------------------------------------------------------------

struct TuneArgs {
  std::string dataset;
  std::string out;
  CVConfig cv;
  bool refit = true;
  bool symmetrize = false;
};

void run_tune(const TuneArgs& a) {
  MultiplexDataset ds = load(a.dataset, a.symmetrize);
  FitOptions opt;
  opt.refit = a.refit;
  TuneResult r = tune(ds, a.cv, opt);
  json j{{"second", cv_to_json(r.second)}, {"hyperparameters", hp_to_json(r.hp)}};
  j["first"] = json::array();
  for (const auto& f : r.first) j["first"].push_back(cv_to_json(f));
  std::vector<std::string> warnings = r.second.warnings;
  for (const auto& f : r.first) warnings.insert(warnings.end(), f.warnings.begin(), f.warnings.end());
  print_warnings(warnings);
  fs::path out = a.out.empty() ? fs::path(a.dataset) / "cv.json" : fs::path(a.out);
  write_json_file(out, j);
  std::cout << "wrote " << out.string() << '\n';
}

// --- benchmark ---------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::string out = "results.csv";
  std::string summary;
};

void run_benchmark(const BenchArgs& a) {
  json j = read_json_file(a.config);
  SweepConfig cfg = parse_sweep_config(j);
  SweepResult r = run_sweep(cfg);
  for (const auto& f : r.failures) std::cerr << "failed: " << f << '\n';
  fs::path out(a.out);
  write_sweep_csv(out, r.rows);
  fs::path summary = a.summary.empty() ? fs::path(out).replace_extension("").string() + "_summary.csv" : a.summary;
  write_summary_csv(summary, aggregate(r.rows));
  std::cout << "wrote " << r.rows.size() << " rows to " << out.string() << " and summary to " << summary.string()
            << '\n';
}

// --- analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string dataset;
  std::string lobes;
  int nperm = 100;
  int dims = 3;
  std::string out = "analysis";
  std::uint64_t seed = 0;
  std::string hyper = "1,1";
  bool tune = false;
  CVConfig cv;
  bool fisher = false;
  bool no_regress = false;
  bool symmetrize = false;
};

void run_analyze(const AnalyzeArgs& a) {
  MultiplexDataset ds = load(a.dataset, a.symmetrize);
  LobeMap lobes = lobe_map_from_json(read_json_file(a.lobes), ds.n, ds.node_labels);
  PipelineConfig cfg;
  PairC c = parse_pair(a.hyper);
  cfg.c1 = c.c1;
  cfg.c2 = c.c2;
  cfg.tune = a.tune;
  cfg.cv = a.cv;
  cfg.fisher = a.fisher;
  cfg.regress = !a.no_regress;
  if (a.dims < 0) throw InputError("--dims must be non-negative");
  cfg.dims = a.dims;
  PermutationResult r = permutation_test(ds, lobes, cfg, a.nperm, a.seed);
  print_warnings(r.warnings);

  fs::path out(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw InputError("cannot create directory " + out.string());
  {
    std::ofstream emb(out / "group_embeddings.csv");
    if (!emb) throw InputError("cannot write group_embeddings.csv");
    emb << "node,lobe,group";
    for (int j = 0; j < cfg.dims; ++j) emb << ",dim" << j + 1;
    emb << '\n';
    for (int g = 0; g < 2; ++g) {
      const Matrix& w = g == 0 ? r.w1 : r.w2_aligned;
      for (Index i = 0; i < ds.n; ++i) {
        std::string node = ds.node_labels.empty() ? std::to_string(i + 1) : ds.node_labels[static_cast<std::size_t>(i)];
        emb << node << ',' << lobes.labels[static_cast<std::size_t>(i)] << ',' << g + 1;
        for (Index j = 0; j < w.cols(); ++j) emb << ',' << format_double(w(i, j));
        emb << '\n';
      }
    }
  }
  {
    std::ofstream diff(out / "lobe_diff.csv");
    if (!diff) throw InputError("cannot write lobe_diff.csv");
    diff << "lobe_a,lobe_b,diff,p,q,stars\n";
    for (const auto& d : r.table) {
      diff << d.lobe_a << ',' << d.lobe_b << ',';
      if (d.defined)
        diff << format_double(d.diff) << ',' << format_double(d.p) << ',' << format_double(d.q) << ',' << d.stars;
      else
        diff << "NA,NA,NA,";
      diff << '\n';
    }
  }
  json meta{{"aligned", r.aligned},
            {"n_perm_requested", r.n_perm_requested},
            {"n_perm_used", r.n_perm_used},
            {"dims", cfg.dims},
            {"fisher", cfg.fisher},
            {"regress", cfg.regress},
            {"seed", a.seed},
            {"hyperparameters", hp_to_json(r.hp)},
            {"warnings", r.warnings}};
  write_json_file(out / "analysis.json", meta);
  std::cout << "wrote analysis to " << out.string() << '\n';
}

// --- metrics -----------------------------------------------------------------

struct MetricsArgs {
  std::string truth;
  std::string fit;
  std::string out;
};

void run_metrics(const MetricsArgs& a) {
  LatentDecomposition truth = read_decomposition_dir(a.truth);
  LatentDecomposition est = read_decomposition_dir(a.fit);
  json rep = metrics_report(truth, est);
  if (a.out.empty()) {
    std::cout << rep.dump(2) << '\n';
  } else {
    write_json_file(a.out, rep);
    std::cout << "wrote " << a.out << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent space models for grouped multiplex networks"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Maximum worker threads (default: GMN_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample latent components and layers into a dataset directory");
  g->add_option("--n", gen.n, "Number of nodes")->required()->check(CLI::PositiveNumber);
  g->add_option("--d", gen.d, "Latent dimension of every component")->required()->check(CLI::PositiveNumber);
  g->add_option("--K", gen.K, "Number of groups (checked against --m)");
  g->add_option("--m", gen.m, "Comma-separated layers per group, e.g. 4,4")->required();
  g->add_option("--svw", gen.angles.s_vw, "Cosine between shared and group components")->capture_default_str();
  g->add_option("--svu", gen.angles.s_vu, "Cosine between shared and individual components")->capture_default_str();
  g->add_option("--sww", gen.angles.s_ww, "Cosine between group components")->capture_default_str();
  g->add_option("--swu", gen.angles.s_wu, "Cosine between group and individual components")->capture_default_str();
  g->add_option("--suu", gen.angles.s_uu, "Cosine between individual components")->capture_default_str();
  g->add_option("--edge-family", gen.family, "gaussian or bernoulli_logit")->capture_default_str();
  g->add_option("--sigma2", gen.sigma2, "Gaussian noise variance")->capture_default_str();
  g->add_flag("--loops", gen.loops, "Sample self-loops (diagonal entries)");
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output dataset directory; ground truth goes to OUT/truth")->required();

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "Fit the grouped decomposition to a dataset directory");
  f->add_option("dataset", fa.dataset, "Dataset directory")->required();
  f->add_option("--out", fa.out, "Output directory (default DATASET/fit)");
  auto* hyper = f->add_option("--hyper", fa.hyper, "Penalty multipliers c1,c2")->capture_default_str();
  auto* tune_flag = f->add_flag("--tune", fa.tune, "Choose c1, c2 by edge cross-validation");
  hyper->excludes(tune_flag);
  add_cv_flags(f, fa.cv);
  f->add_flag("--refit,!--no-refit", fa.refit, "Refit eigenvalues after each stage (default on)");
  f->add_option("--edge-family", fa.family, "Override the manifest edge family (gaussian or bernoulli_logit)");
  f->add_option("--sigma2", fa.sigma2, "Noise variance used with --edge-family gaussian")->capture_default_str();
  f->add_option("--eta", fa.eta, "Learning rate for both stages (default 1 gaussian, 3 bernoulli_logit)")
      ->check(CLI::PositiveNumber);
  f->add_option("--tol", fa.tol, "Relative improvement tolerance")->capture_default_str()->check(CLI::PositiveNumber);
  f->add_option("--max-iter", fa.max_iter, "Maximum iterations per subproblem")->capture_default_str()
      ->check(CLI::PositiveNumber);
  f->add_option("--patience", fa.patience, "Stalled iterations before stopping")->capture_default_str()
      ->check(CLI::PositiveNumber);
  f->add_option("--oracle-ranks", fa.oracle_ranks,
                "JSON file with known ranks ({\"d\": 3} or {\"d0\", \"dk\", \"dkl\"}); fits by hard thresholding")
      ->check(CLI::ExistingFile);
  f->add_flag("--symmetrize", fa.symmetrize, "Symmetrize asymmetric layers instead of rejecting them");

  TuneArgs ta;
  auto* t = app.add_subcommand("tune", "Cross-validate penalty multipliers and write cv.json");
  t->add_option("dataset", ta.dataset, "Dataset directory")->required();
  t->add_option("--out", ta.out, "Output file (default DATASET/cv.json)");
  add_cv_flags(t, ta.cv);
  t->add_flag("--refit,!--no-refit", ta.refit, "Refit eigenvalues inside every fold fit (default on)");
  t->add_flag("--symmetrize", ta.symmetrize, "Symmetrize asymmetric layers instead of rejecting them");

  BenchArgs ba;
  auto* b = app.add_subcommand("benchmark", "Run a simulation sweep described by a JSON config");
  b->add_option("--config", ba.config, "Sweep configuration JSON")->required()->check(CLI::ExistingFile);
  b->add_option("--out", ba.out, "Tidy results CSV")->capture_default_str();
  b->add_option("--summary", ba.summary, "Aggregated CSV (default OUT with _summary suffix)");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Two-group lobe similarity analysis with a permutation test");
  an->add_option("--dataset", aa.dataset, "Dataset directory with exactly two groups")->required();
  an->add_option("--lobes", aa.lobes, "JSON lobe map ({\"labels\": [...]} or {\"nodes\": {...}})")
      ->required()
      ->check(CLI::ExistingFile);
  an->add_option("--nperm", aa.nperm, "Number of permutations")->capture_default_str()->check(CLI::PositiveNumber);
  an->add_option("--dims", aa.dims, "Embedding dimensions used for alignment and output")->capture_default_str();
  an->add_option("--out", aa.out, "Output directory")->capture_default_str();
  an->add_option("--seed", aa.seed, "Permutation seed")->capture_default_str();
  auto* an_hyper = an->add_option("--hyper", aa.hyper, "Penalty multipliers c1,c2")->capture_default_str();
  auto* an_tune = an->add_flag("--tune", aa.tune, "Choose c1, c2 by edge cross-validation on the observed data");
  an_hyper->excludes(an_tune);
  add_cv_flags(an, aa.cv);
  an->add_flag("--fisher", aa.fisher, "Apply the Fisher z transform to correlation layers");
  an->add_flag("--no-regress", aa.no_regress, "Skip regressing out age and sex covariates");
  an->add_flag("--symmetrize", aa.symmetrize, "Symmetrize asymmetric layers instead of rejecting them");

  MetricsArgs ma;
  auto* me = app.add_subcommand("metrics", "Relative Frobenius errors of a fit against ground truth");
  me->add_option("--truth", ma.truth, "Ground-truth directory (truth.json and component CSVs)")->required();
  me->add_option("--fit", ma.fit, "Decomposition directory written by fit")->required();
  me->add_option("--out", ma.out, "Output JSON file (default: print to stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_thread_limit(threads);
    if (*g) run_generate(gen);
    else if (*f) run_fit(fa);
    else if (*t) run_tune(ta);
    else if (*b) run_benchmark(ba);
    else if (*an) run_analyze(aa);
    else if (*me) run_metrics(ma);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
