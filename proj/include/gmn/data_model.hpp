#pragma once

// Domain types shared across the library and the on-disk formats:
//   dataset directory  = manifest.json + one headerless CSV per layer
//   decomposition dir  = fit.json (or truth.json) + S.csv, Q_k.csv, R_k_l.csv [+ V/W/U CSVs]

#include <gmn/core.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/linalg.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace gmn {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Covariate {
  double age = 0.0;
  bool male = false;
};

/// M symmetric layers on n shared nodes, split into K groups.
struct MultiplexDataset {
  Index n = 0;
  GroupLayout layout;
  LayerSet layers;
  EdgeFamily family;
  bool has_loops = false;
  std::vector<std::string> node_labels;  ///< empty when absent
  std::vector<Covariate> covariates;     ///< flat layer order; empty when absent

  int groups() const { return layout.groups(); }
  int total_layers() const { return layout.total(); }
  const Matrix& layer(GroupIndex g) const {
    return layers.at(static_cast<std::size_t>(g.k)).at(static_cast<std::size_t>(g.l));
  }

  /// Checks shapes, symmetry (1e-12), finiteness and binary entries for bernoulli layers.
  /// With `identifiable`, also requires K >= 2 and m_k >= 2.
  void validate(bool identifiable = false) const {
    family.validate();
    if (static_cast<int>(layers.size()) != layout.groups())
      throw InputError("dataset: layer groups do not match group sizes");
    for (int k = 0; k < layout.groups(); ++k) {
      if (static_cast<int>(layers[static_cast<std::size_t>(k)].size()) != layout.size(k))
        throw InputError("dataset: group " + std::to_string(k + 1) + " has the wrong layer count");
      for (const Matrix& a : layers[static_cast<std::size_t>(k)]) {
        if (a.rows() != n || a.cols() != n) throw InputError("dataset: layer is not n x n");
        if (!a.allFinite()) throw InputError("dataset: non-finite layer entry");
        if (max_asymmetry(a) > 1e-12) throw InputError("dataset: layer is not symmetric");
        if (!family.is_gaussian()) {
          for (Index i = 0; i < a.size(); ++i) {
            double x = a.data()[i];
            if (x != 0.0 && x != 1.0)
              throw InputError("dataset: bernoulli_logit layer has non-binary entries");
          }
        }
      }
    }
    if (!covariates.empty() && static_cast<int>(covariates.size()) != layout.total())
      throw InputError("dataset: covariates must cover every layer");
    if (!node_labels.empty() && static_cast<Index>(node_labels.size()) != n)
      throw InputError("dataset: node_labels must have length n");
    if (identifiable) {
      if (layout.groups() < 2) throw InputError("identifiability requires at least two groups");
      for (int m : layout.sizes())
        if (m < 2) throw InputError("identifiability requires two layers per group");
    }
  }
};

/// Builds a dataset, symmetrizing layers and zeroing diagonals of loop-free data.
inline MultiplexDataset make_dataset(LayerSet layers, GroupLayout layout, EdgeFamily family,
                                     bool has_loops) {
  MultiplexDataset ds;
  ds.layout = std::move(layout);
  ds.family = family;
  ds.has_loops = has_loops;
  ds.n = layers.empty() || layers.front().empty() ? 0 : layers.front().front().rows();
  for (auto& group : layers)
    for (auto& a : group) {
      a = symmetrized(a);
      if (!has_loops) a.diagonal().setZero();
    }
  ds.layers = std::move(layers);
  ds.validate();
  return ds;
}

/// Fitted or ground-truth Gram components S, {Q_k}, {R_kl} with their signatures.
struct LatentDecomposition {
  Matrix S;
  std::vector<Matrix> Q;
  LayerSet R;
  Signature sig_S;
  std::vector<Signature> sig_Q;
  std::vector<std::vector<Signature>> sig_R;

  GroupLayout layout() const {
    std::vector<int> sizes;
    for (const auto& g : R) sizes.push_back(static_cast<int>(g.size()));
    return GroupLayout(sizes);
  }

  Matrix theta(GroupIndex g) const {
    return S + Q.at(static_cast<std::size_t>(g.k)) +
           R.at(static_cast<std::size_t>(g.k)).at(static_cast<std::size_t>(g.l));
  }

  /// Re-derives every signature from eigenvalues with |γ| > 1e-6.
  void detect_signatures() {
    sig_S = signature_of(low_rank_eigs(S).values);
    sig_Q.clear();
    for (const auto& q : Q) sig_Q.push_back(signature_of(low_rank_eigs(q).values));
    sig_R.clear();
    for (const auto& group : R) {
      auto& row = sig_R.emplace_back();
      for (const auto& r : group) row.push_back(signature_of(low_rank_eigs(r).values));
    }
  }
};

/// ASE factors of each component; Z I_{p,q} Zᵀ reproduces the component's Gram matrix.
struct LatentPositions {
  Matrix V;
  std::vector<Matrix> W;
  std::vector<std::vector<Matrix>> U;
  Signature sig_V;
  std::vector<Signature> sig_W;
  std::vector<std::vector<Signature>> sig_U;
};

/// Z I_{p,q} Zᵀ for a position matrix with signature (p, q).
inline Matrix gram_of(const Matrix& positions, Signature sig) {
  Vector diag = Vector::Ones(positions.cols());
  for (Index j = sig.p; j < positions.cols(); ++j) diag(j) = -1.0;
  return positions * diag.asDiagonal() * positions.transpose();
}

// --- CSV ------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  std::string line;
  for (Index i = 0; i < m.rows(); ++i) {
    line.clear();
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) line += ',';
      line += format_double(m(i, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw InputError("failed writing " + path.string());
}

inline double parse_double(std::string_view field, const fs::path& path, Index row) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw InputError(path.string() + ":" + std::to_string(row + 1) + ": cannot parse '" +
                     std::string(field) + "'");
  if (!std::isfinite(value))
    throw InputError(path.string() + ":" + std::to_string(row + 1) + ": non-finite entry");
  return value;
}

/// Reads a headerless numeric CSV. With expected_rows/cols >= 0 the shape is enforced.
inline Matrix read_matrix_csv(const fs::path& path, Index expected_rows = -1,
                              Index expected_cols = -1) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::string_view view(line);
    std::size_t start = 0;
    for (;;) {
      std::size_t comma = view.find(',', start);
      row.push_back(parse_double(view.substr(start, comma - start), path,
                                 static_cast<Index>(rows.size())));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  Index r = static_cast<Index>(rows.size());
  Index c = r ? static_cast<Index>(rows.front().size()) : 0;
  for (const auto& row : rows)
    if (static_cast<Index>(row.size()) != c)
      throw InputError(path.string() + ": ragged rows");
  if ((expected_rows >= 0 && r != expected_rows) || (expected_cols >= 0 && c != expected_cols))
    throw InputError(path.string() + ": dimension mismatch, expected " +
                     std::to_string(expected_rows) + "x" + std::to_string(expected_cols) +
                     ", found " + std::to_string(r) + "x" + std::to_string(c));
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

/// Layers in flat (group-major) order.
inline std::vector<Matrix> flatten(const LayerSet& xs) {
  std::vector<Matrix> out;
  for (const auto& g : xs)
    for (const auto& m : g) out.push_back(m);
  return out;
}

inline std::string layer_key(GroupIndex g) {
  return std::to_string(g.k + 1) + "_" + std::to_string(g.l + 1);
}

// --- dataset directories ----------------------------------------------------

struct LoadOptions {
  bool force_symmetrize = false;
};

struct LoadReport {
  double max_asymmetry = 0.0;
  std::vector<std::string> warnings;
};

inline json family_to_json(const EdgeFamily& fam) {
  json j{{"kind", fam.name()}};
  if (fam.is_gaussian()) j["sigma2"] = fam.sigma2;
  return j;
}

inline EdgeFamily family_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InputError("edge_family: missing 'kind'");
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") return EdgeFamily::gaussian(j.value("sigma2", 1.0));
  if (kind == "bernoulli_logit") return EdgeFamily::bernoulli_logit();
  throw InputError("edge_family: unknown kind '" + kind + "'");
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

/// Loads and validates a dataset directory. Asymmetry up to 1e-6 is symmetrized silently;
/// beyond it loading fails unless force_symmetrize is set.
inline MultiplexDataset load_dataset(const fs::path& dir, const LoadOptions& opts = {},
                                     LoadReport* report = nullptr) {
  fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw InputError("missing manifest: " + manifest_path.string());
  json manifest = read_json_file(manifest_path);
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  MultiplexDataset ds;
  try {
    ds.n = manifest.at("n").get<Index>();
    ds.layout = GroupLayout(manifest.at("group_sizes").get<std::vector<int>>());
    if (manifest.contains("K") && manifest.at("K").get<int>() != ds.layout.groups())
      throw InputError("manifest: K does not match group_sizes");
    ds.family = family_from_json(manifest.at("edge_family"));
    ds.has_loops = manifest.at("has_loops").get<bool>();
    const json& files = manifest.at("layer_files");
    ds.layers.resize(static_cast<std::size_t>(ds.layout.groups()));
    for (GroupIndex g : ds.layout.indices()) {
      std::string key = layer_key(g);
      if (!files.contains(key)) throw InputError("manifest: layer_files lacks '" + key + "'");
      Matrix a = read_matrix_csv(dir / files.at(key).get<std::string>(), ds.n, ds.n);
      double asym = max_asymmetry(a);
      rep.max_asymmetry = std::max(rep.max_asymmetry, asym);
      if (asym > 1e-6) {
        if (!opts.force_symmetrize)
          throw InputError("layer " + key + " asymmetric by " + format_double(asym) +
                           " (use --symmetrize)");
        rep.warnings.push_back("layer " + key + " symmetrized (max asymmetry " +
                               format_double(asym) + ")");
      }
      a = symmetrized(a);
      if (!ds.has_loops) a.diagonal().setZero();
      ds.layers[static_cast<std::size_t>(g.k)].push_back(std::move(a));
    }
    if (manifest.contains("node_labels"))
      ds.node_labels = manifest.at("node_labels").get<std::vector<std::string>>();
    if (manifest.contains("covariates")) {
      const json& cov = manifest.at("covariates");
      for (GroupIndex g : ds.layout.indices()) {
        const json& c = cov.is_array() ? cov.at(static_cast<std::size_t>(ds.layout.flat(g)))
                                       : cov.at(layer_key(g));
        std::string sex = c.at("sex").get<std::string>();
        if (sex != "M" && sex != "F") throw InputError("covariates: sex must be \"M\" or \"F\"");
        ds.covariates.push_back({c.at("age").get<double>(), sex == "M"});
      }
    }
  } catch (const json::exception& e) {
    throw InputError("manifest: " + std::string(e.what()));
  }
  ds.validate();
  return ds;
}

/// Writes manifest.json plus layer_k_l.csv files at 17 significant digits, so that
/// load_dataset reproduces every entry exactly. Loop-free diagonals are written as 0.
inline void save_dataset(const MultiplexDataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create directory " + dir.string());
  json files = json::object();
  for (GroupIndex g : ds.layout.indices()) {
    std::string name = "layer_" + layer_key(g) + ".csv";
    Matrix a = ds.layer(g);
    if (!ds.has_loops) a.diagonal().setZero();
    write_matrix_csv(dir / name, a);
    files[layer_key(g)] = name;
  }
  json manifest{{"n", ds.n},
                {"K", ds.layout.groups()},
                {"group_sizes", ds.layout.sizes()},
                {"edge_family", family_to_json(ds.family)},
                {"has_loops", ds.has_loops},
                {"layer_files", files}};
  if (!ds.node_labels.empty()) manifest["node_labels"] = ds.node_labels;
  if (!ds.covariates.empty()) {
    json cov = json::object();
    for (GroupIndex g : ds.layout.indices()) {
      const Covariate& c = ds.covariates[static_cast<std::size_t>(ds.layout.flat(g))];
      cov[layer_key(g)] = {{"age", c.age}, {"sex", c.male ? "M" : "F"}};
    }
    manifest["covariates"] = cov;
  }
  write_json_file(dir / "manifest.json", manifest);
}

// --- decomposition directories ----------------------------------------------

inline json signature_to_json(Signature s) { return json{{"p", s.p}, {"q", s.q}}; }

/// Ranks and signatures of a decomposition, keyed like the CSV files.
inline json decomposition_summary(const LatentDecomposition& dec) {
  json q = json::object(), r = json::object();
  for (std::size_t k = 0; k < dec.sig_Q.size(); ++k)
    q[std::to_string(k + 1)] = signature_to_json(dec.sig_Q[k]);
  for (std::size_t k = 0; k < dec.sig_R.size(); ++k)
    for (std::size_t l = 0; l < dec.sig_R[k].size(); ++l)
      r[layer_key({static_cast<int>(k), static_cast<int>(l)})] = signature_to_json(dec.sig_R[k][l]);
  return json{{"S", signature_to_json(dec.sig_S)}, {"Q", q}, {"R", r}};
}

/// Writes S.csv, Q_k.csv, R_k_l.csv (and V/W/U CSVs when positions are given) plus a metadata
/// file (`meta_name`) holding `meta` merged with group sizes and signatures.
inline void write_decomposition_dir(const fs::path& dir, const LatentDecomposition& dec,
                                    const LatentPositions* positions, json meta,
                                    const std::string& meta_name = "fit.json") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create directory " + dir.string());
  write_matrix_csv(dir / "S.csv", dec.S);
  for (std::size_t k = 0; k < dec.Q.size(); ++k)
    write_matrix_csv(dir / ("Q_" + std::to_string(k + 1) + ".csv"), dec.Q[k]);
  for (std::size_t k = 0; k < dec.R.size(); ++k)
    for (std::size_t l = 0; l < dec.R[k].size(); ++l)
      write_matrix_csv(dir / ("R_" + layer_key({int(k), int(l)}) + ".csv"), dec.R[k][l]);
  if (positions) {
    write_matrix_csv(dir / "V.csv", positions->V);
    for (std::size_t k = 0; k < positions->W.size(); ++k)
      write_matrix_csv(dir / ("W_" + std::to_string(k + 1) + ".csv"), positions->W[k]);
    for (std::size_t k = 0; k < positions->U.size(); ++k)
      for (std::size_t l = 0; l < positions->U[k].size(); ++l)
        write_matrix_csv(dir / ("U_" + layer_key({int(k), int(l)}) + ".csv"), positions->U[k][l]);
  }
  meta["n"] = dec.S.rows();
  meta["group_sizes"] = dec.layout().sizes();
  meta["signatures"] = decomposition_summary(dec);
  write_json_file(dir / meta_name, meta);
}

/// Reads a decomposition directory written by write_decomposition_dir (fit.json or truth.json).
inline LatentDecomposition read_decomposition_dir(const fs::path& dir) {
  fs::path meta_path = dir / "fit.json";
  if (!fs::exists(meta_path)) meta_path = dir / "truth.json";
  if (!fs::exists(meta_path))
    throw InputError("decomposition directory lacks fit.json/truth.json: " + dir.string());
  json meta = read_json_file(meta_path);
  GroupLayout layout;
  Index n = 0;
  try {
    layout = GroupLayout(meta.at("group_sizes").get<std::vector<int>>());
    n = meta.at("n").get<Index>();
  } catch (const json::exception& e) {
    throw InputError(meta_path.string() + ": " + e.what());
  }
  LatentDecomposition dec;
  dec.S = read_matrix_csv(dir / "S.csv", n, n);
  dec.R.resize(static_cast<std::size_t>(layout.groups()));
  for (int k = 0; k < layout.groups(); ++k)
    dec.Q.push_back(read_matrix_csv(dir / ("Q_" + std::to_string(k + 1) + ".csv"), n, n));
  for (GroupIndex g : layout.indices())
    dec.R[static_cast<std::size_t>(g.k)].push_back(
        read_matrix_csv(dir / ("R_" + layer_key(g) + ".csv"), n, n));
  dec.detect_signatures();
  return dec;
}

}  // namespace gmn
