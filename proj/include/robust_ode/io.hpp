/**
 * @file io.hpp
 * @brief CSV and JSON interchange for observations, smoothed sources, Gamma, weights,
 *        fitted models, and run metadata.
 *
 * Every floating-point value is printed with 17 significant digits, so a write followed by
 * a read reproduces the original doubles bit for bit.
 */
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "robust_ode/dynamics_fit.hpp"
#include "robust_ode/gamma.hpp"
#include "robust_ode/ode_models.hpp"
#include "robust_ode/robust_trajectory.hpp"
#include "robust_ode/smoothing.hpp"
#include "robust_ode/weights.hpp"

namespace robust_ode {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kArtifactVersion = "1.0.0";

[[nodiscard]] inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/** @brief A header plus row-major numeric body. */
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::ptrdiff_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  }
};

namespace detail {

[[nodiscard]] inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

[[nodiscard]] inline double parse_number(const std::string& cell, const fs::path& path, std::size_t line) {
  // from_chars, unlike stod, accepts subnormals and is locale-independent.
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') {
    ++first;
  }
  double v = 0.0;
  const auto [end, ec] = std::from_chars(first, last, v);
  if (ec == std::errc() && end == last && first != last) {
    return v;
  }
  throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line) + ": not a number: '" + cell + "'");
}

inline void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
}

}  // namespace detail

[[nodiscard]] inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::Io, "cannot open input file: " + path.string());
  }
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      continue;
    }
    if (table.header.empty()) {
      table.header = detail::split_line(line);
      continue;
    }
    const auto cells = detail::split_line(line);
    if (cells.size() != table.header.size()) {
      throw Error(ErrorKind::HeaderMismatch, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                                 std::to_string(table.header.size()) + " fields, got " +
                                                 std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      row.push_back(detail::parse_number(c, path, lineno));
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) {
    throw Error(ErrorKind::Io, "empty CSV file: " + path.string());
  }
  return table;
}

inline void write_csv(const fs::path& path, const CsvTable& table) {
  detail::ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::Io, "cannot write file: " + path.string());
  }
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    out << (c ? "," : "") << table.header[c];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c ? "," : "") << format_double(row[c]);
    }
    out << '\n';
  }
}

inline void write_json(const fs::path& path, const json& j) {
  detail::ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::Io, "cannot write file: " + path.string());
  }
  out << j.dump(2) << '\n';
}

[[nodiscard]] inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::Io, "cannot open input file: " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, path.string() + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------------------
// Observations

[[nodiscard]] inline std::vector<std::string> numbered(const std::string& prefix, int p) {
  std::vector<std::string> out;
  for (int j = 1; j <= p; ++j) {
    out.push_back(prefix + std::to_string(j));
  }
  return out;
}

/** Header `t,Y_1..Y_p` (plus `trial` when trial ids are present). */
[[nodiscard]] inline CsvTable source_table(const Source& s) {
  CsvTable t;
  t.header.push_back("t");
  const auto ys = numbered("Y_", s.dimension());
  t.header.insert(t.header.end(), ys.begin(), ys.end());
  const bool with_trial = s.trial.size() == s.n();
  if (with_trial) {
    t.header.push_back("trial");
  }
  for (std::size_t i = 0; i < s.n(); ++i) {
    std::vector<double> row{s.grid[i]};
    for (int j = 0; j < s.dimension(); ++j) {
      row.push_back(s.y(j, static_cast<Eigen::Index>(i)));
    }
    if (with_trial) {
      row.push_back(static_cast<double>(s.trial[i]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/** Header `t,X_1..X_p,dX_1..dX_p`; requires latent truth. */
[[nodiscard]] inline CsvTable latent_table(const Source& s) {
  require(s.latent_states && s.latent_derivatives, "source has no latent truth");
  CsvTable t;
  t.header.push_back("t");
  for (const auto& prefix : {"X_", "dX_"}) {
    const auto names = numbered(prefix, s.dimension());
    t.header.insert(t.header.end(), names.begin(), names.end());
  }
  for (std::size_t i = 0; i < s.n(); ++i) {
    std::vector<double> row{s.grid[i]};
    for (int j = 0; j < s.dimension(); ++j) {
      row.push_back((*s.latent_states)(j, static_cast<Eigen::Index>(i)));
    }
    for (int j = 0; j < s.dimension(); ++j) {
      row.push_back((*s.latent_derivatives)(j, static_cast<Eigen::Index>(i)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/**
 * Parses one subject file: header `t,Y_1..Y_p` with an optional `trial` column. The time
 * column must be strictly increasing; the grid horizon is the last time stamp.
 */
[[nodiscard]] inline Source read_source_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header.front() != "t") {
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": first column must be 't'");
  }
  const std::ptrdiff_t trial_col = t.column("trial");
  int p = 0;
  while (t.column("Y_" + std::to_string(p + 1)) >= 0) {
    if (t.column("Y_" + std::to_string(p + 1)) != p + 1) {
      throw Error(ErrorKind::HeaderMismatch, path.string() + ": Y columns must follow 't' in order");
    }
    ++p;
  }
  const auto expected = static_cast<std::size_t>(1 + p + (trial_col >= 0 ? 1 : 0));
  if (p == 0 || t.header.size() != expected) {
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": expected header t,Y_1..Y_p[,trial]");
  }
  require(t.rows.size() >= 2, path.string() + ": need at least two rows", ErrorKind::Io);
  std::vector<double> times;
  Source s;
  s.y.resize(p, static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double ti = t.rows[i][0];
    if (!times.empty() && !(ti > times.back())) {
      throw Error(ErrorKind::NonMonotoneTime, path.string() + ": time stamps must be strictly increasing (row " +
                                                  std::to_string(i + 2) + ")");
    }
    times.push_back(ti);
    for (int j = 0; j < p; ++j) {
      s.y(j, static_cast<Eigen::Index>(i)) = t.rows[i][static_cast<std::size_t>(j + 1)];
    }
    if (trial_col >= 0) {
      s.trial.push_back(static_cast<int>(t.rows[i][static_cast<std::size_t>(trial_col)]));
    }
  }
  if (times.front() != 0.0) {
    // Shift so the grid starts at zero; absolute offsets carry no information for autonomous fits.
    const double t0 = times.front();
    for (double& v : times) {
      v -= t0;
    }
  }
  s.grid = TimeGrid(times, times.back());
  return s;
}

/** Reads `latent_<k>.csv` into a source's latent fields (grid must match). */
inline void attach_latent(Source& s, const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int p = s.dimension();
  require(t.header.size() == static_cast<std::size_t>(1 + 2 * p), path.string() + ": latent header mismatch",
          ErrorKind::HeaderMismatch);
  require(t.rows.size() == s.n(), path.string() + ": latent rows differ from observations", ErrorKind::GridMismatch);
  Matrix x(p, static_cast<Eigen::Index>(s.n()));
  Matrix d(p, static_cast<Eigen::Index>(s.n()));
  for (std::size_t i = 0; i < s.n(); ++i) {
    for (int j = 0; j < p; ++j) {
      x(j, static_cast<Eigen::Index>(i)) = t.rows[i][static_cast<std::size_t>(1 + j)];
      d(j, static_cast<Eigen::Index>(i)) = t.rows[i][static_cast<std::size_t>(1 + p + j)];
    }
  }
  s.latent_states = std::move(x);
  s.latent_derivatives = std::move(d);
}

/** @brief Observations read from a directory, with one name per subject (file stem). */
struct IngestedData {
  SourceObservations observations;
  std::vector<std::string> names;
};

/**
 * One CSV per subject, sorted by file name; `latent_*.csv` files are skipped (and attached to
 * the matching `source_*.csv` when present). All subjects must share p.
 */
[[nodiscard]] inline IngestedData ingest_multisubject_csv(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::Io, "input directory not found: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && entry.path().extension() == ".csv" && name.rfind("latent_", 0) != 0) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    // Natural order on a numeric suffix keeps source_10 after source_9.
    const auto key = [](const fs::path& p) {
      const std::string stem = p.stem().string();
      const auto pos = stem.find_last_not_of("0123456789");
      const std::string digits = pos == std::string::npos ? stem : stem.substr(pos + 1);
      return std::make_pair(stem.substr(0, stem.size() - digits.size()),
                            digits.empty() ? -1L : std::stol(digits));
    };
    const auto ka = key(a);
    const auto kb = key(b);
    return ka != kb ? ka < kb : a.filename() < b.filename();
  });
  if (files.empty()) {
    throw Error(ErrorKind::Io, "no subject CSV files in " + dir.string());
  }
  IngestedData data;
  for (const auto& f : files) {
    Source s = read_source_csv(f);
    if (!data.observations.sources.empty() && s.dimension() != data.observations.dimension()) {
      throw Error(ErrorKind::HeaderMismatch, f.string() + ": has p=" + std::to_string(s.dimension()) +
                                                 ", expected p=" + std::to_string(data.observations.dimension()));
    }
    const std::string stem = f.stem().string();
    if (stem.rfind("source_", 0) == 0) {
      const fs::path latent = dir / ("latent_" + stem.substr(7) + ".csv");
      if (fs::exists(latent)) {
        attach_latent(s, latent);
      }
    }
    data.names.push_back(stem);
    data.observations.sources.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------------------
// Smoothed sources

/** Header `t,xhat_1..p,dhat_1..p,sigma_1..p`. */
[[nodiscard]] inline CsvTable smoothed_table(const SmoothedSource& s) {
  CsvTable t;
  t.header.push_back("t");
  for (const auto& prefix : {"xhat_", "dhat_", "sigma_"}) {
    const auto names = numbered(prefix, s.dimension());
    t.header.insert(t.header.end(), names.begin(), names.end());
  }
  for (std::size_t q = 0; q < s.eval_grid.size(); ++q) {
    std::vector<double> row{s.eval_grid[q]};
    for (const Matrix* m : {&s.x_hat, &s.d_hat, &s.sigma_hat}) {
      for (int j = 0; j < s.dimension(); ++j) {
        row.push_back((*m)(j, static_cast<Eigen::Index>(q)));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/** Inverse of smoothed_table; smoothing config, boundary flags and n are not stored. */
[[nodiscard]] inline SmoothedSource read_smoothed_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(!t.header.empty() && t.header.front() == "t" && (t.header.size() - 1) % 3 == 0,
          path.string() + ": expected header t,xhat_1..p,dhat_1..p,sigma_1..p", ErrorKind::HeaderMismatch);
  const int p = static_cast<int>((t.header.size() - 1) / 3);
  for (int j = 1; j <= p; ++j) {
    require(t.column("xhat_" + std::to_string(j)) == j && t.column("dhat_" + std::to_string(j)) == p + j &&
                t.column("sigma_" + std::to_string(j)) == 2 * p + j,
            path.string() + ": smoothed column order mismatch", ErrorKind::HeaderMismatch);
  }
  SmoothedSource s;
  const auto m = static_cast<Eigen::Index>(t.rows.size());
  s.x_hat.resize(p, m);
  s.d_hat.resize(p, m);
  s.sigma_hat.resize(p, m);
  std::vector<double> times;
  for (Eigen::Index q = 0; q < m; ++q) {
    const auto& row = t.rows[static_cast<std::size_t>(q)];
    if (!times.empty() && !(row[0] > times.back())) {
      throw Error(ErrorKind::NonMonotoneTime, path.string() + ": time stamps must be strictly increasing");
    }
    times.push_back(row[0]);
    for (int j = 0; j < p; ++j) {
      s.x_hat(j, q) = row[static_cast<std::size_t>(1 + j)];
      s.d_hat(j, q) = row[static_cast<std::size_t>(1 + p + j)];
      s.sigma_hat(j, q) = row[static_cast<std::size_t>(1 + 2 * p + j)];
    }
  }
  s.eval_grid = TimeGrid(times, times.back());
  s.boundary.assign(times.size(), false);
  return s;
}

// ---------------------------------------------------------------------------------------
// JSON encodings

[[nodiscard]] inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

[[nodiscard]] inline Matrix matrix_from_json(const json& j) {
  require(j.is_array() && !j.empty(), "expected a non-empty array of rows", ErrorKind::Io);
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols, "ragged matrix rows",
            ErrorKind::LengthMismatch);
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

[[nodiscard]] inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(v[i]);
  }
  return a;
}

[[nodiscard]] inline Vector vector_from_json(const json& j) {
  require(j.is_array(), "expected an array", ErrorKind::Io);
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

[[nodiscard]] inline json gamma_to_json(const GammaMatrix& g) {
  return json{{"entries", matrix_to_json(g.entries)},
              {"floored", matrix_to_json(g.floored)},
              {"psd_floor_applied", g.psd_floor_applied},
              {"trim", g.trim},
              {"quad_rule", g.quad_rule},
              {"K", g.K()}};
}

/** Accepts the gamma_to_json layout or a bare array of rows. */
[[nodiscard]] inline GammaMatrix gamma_from_json(const json& j) {
  try {
    if (j.is_array()) {
      return make_gamma(matrix_from_json(j), 0.0);
    }
    GammaMatrix g = make_gamma(matrix_from_json(j.at("entries")), j.value("trim", 0.0));
    g.quad_rule = j.value("quad_rule", g.quad_rule);
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed Gamma JSON: ") + e.what());
  }
}

[[nodiscard]] inline json weights_to_json(const SimplexWeights& w) {
  return json{{"omega", vector_to_json(w.omega)},
              {"objective", w.objective},
              {"method", ToString(w.method)},
              {"tuning", w.tuning},
              {"minimum_value", w.minimum_value},
              {"multiplier", w.multiplier},
              {"constraint_residual", w.constraint_residual},
              {"iterations", w.iterations},
              {"gap", w.gap},
              {"certified", w.certified},
              {"certificate_norm_gap", w.certificate_norm_gap}};
}

[[nodiscard]] inline json tolerance_to_json(const ToleranceConfig& t) {
  return json{{"C_d", t.C_d}, {"d_n", t.d_n}, {"ratio", t.ratio}, {"log_n", t.log_n}};
}

[[nodiscard]] inline json model_to_json(const FittedDynamics& f) {
  return json{{"centers", matrix_to_json(f.centers)},
              {"coefficients", matrix_to_json(f.coefficients)},
              {"target_mean", vector_to_json(f.target_mean)},
              {"kernel_bandwidth", f.kernel_bandwidth},
              {"ridge", f.ridge},
              {"include_time", f.include_time},
              {"time_scale", f.time_scale}};
}

[[nodiscard]] inline FittedDynamics model_from_json(const json& j) {
  try {
    FittedDynamics f;
    f.centers = matrix_from_json(j.at("centers"));
    f.coefficients = matrix_from_json(j.at("coefficients"));
    f.target_mean = vector_from_json(j.at("target_mean"));
    f.kernel_bandwidth = j.at("kernel_bandwidth").get<double>();
    f.ridge = j.at("ridge").get<double>();
    f.include_time = j.at("include_time").get<bool>();
    f.time_scale = j.at("time_scale").get<double>();
    require(f.coefficients.rows() == f.centers.rows() && f.target_mean.size() == f.coefficients.cols(),
            "model arrays are inconsistent", ErrorKind::LengthMismatch);
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed model JSON: ") + e.what());
  }
}

/** Rows `t,X_1..p,dX_1..p,sigma_1..p` of the robust trajectory. */
[[nodiscard]] inline CsvTable robust_table(const RobustTrajectory& r) {
  CsvTable t;
  t.header.push_back("t");
  const int p = static_cast<int>(r.x_robust.rows());
  for (const auto& prefix : {"X_", "dX_", "sigma_"}) {
    const auto names = numbered(prefix, p);
    t.header.insert(t.header.end(), names.begin(), names.end());
  }
  t.header.push_back("boundary");
  for (std::size_t q = 0; q < r.eval_grid.size(); ++q) {
    std::vector<double> row{r.eval_grid[q]};
    for (const Matrix* m : {&r.x_robust, &r.d_robust, &r.sigma_robust}) {
      for (int j = 0; j < p; ++j) {
        row.push_back((*m)(j, static_cast<Eigen::Index>(q)));
      }
    }
    row.push_back(r.boundary.empty() ? 0.0 : (r.boundary[q] ? 1.0 : 0.0));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/** Reads states and derivatives back from robust_table output (p x m arrays). */
[[nodiscard]] inline std::pair<Matrix, Matrix> read_robust_csv(const fs::path& path, std::vector<double>& times) {
  const CsvTable t = read_csv(path);
  const std::ptrdiff_t dx1 = t.column("dX_1");
  require(!t.header.empty() && t.header.front() == "t" && dx1 > 1, path.string() + ": expected t,X_1..p,dX_1..p",
          ErrorKind::HeaderMismatch);
  const auto p = static_cast<int>(dx1 - 1);
  Matrix x(p, static_cast<Eigen::Index>(t.rows.size()));
  Matrix d(p, static_cast<Eigen::Index>(t.rows.size()));
  times.clear();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    times.push_back(t.rows[i][0]);
    for (int j = 0; j < p; ++j) {
      x(j, static_cast<Eigen::Index>(i)) = t.rows[i][static_cast<std::size_t>(1 + j)];
      d(j, static_cast<Eigen::Index>(i)) = t.rows[i][static_cast<std::size_t>(1 + p + j)];
    }
  }
  return {x, d};
}

/** Long format `t,dim,xhat,lo,hi,sigma` with the sigma column already divided by sqrt(n h). */
[[nodiscard]] inline CsvTable band_table(const RobustTrajectory& r, const ConfidenceBand& band) {
  CsvTable t;
  t.header = {"t", "dim", "xhat", "lo", "hi", "sigma"};
  const double scale = r.ci_scale();
  for (Eigen::Index j = 0; j < r.x_robust.rows(); ++j) {
    for (std::size_t q = 0; q < r.eval_grid.size(); ++q) {
      const auto c = static_cast<Eigen::Index>(q);
      t.rows.push_back({r.eval_grid[q], static_cast<double>(j + 1), r.x_robust(j, c), band.lower(j, c),
                        band.upper(j, c), r.sigma_robust(j, c) / scale});
    }
  }
  return t;
}

/** meta.json: command, resolved options, seed, thread count, and artifact version. */
inline void write_meta(const fs::path& dir, const std::string& command, const json& config) {
  json meta{{"command", command}, {"artifact_version", kArtifactVersion}, {"config", config}};
  write_json(dir / "meta.json", meta);
}

}  // namespace robust_ode
