// Command-line front end: simulation, each estimation stage on its own, the full pipeline,
// and the benchmark harnesses. Exit codes: 0 ok, 2 input error, 3 numerical failure.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "robust_ode/evaluation.hpp"
#include "robust_ode/io.hpp"

namespace {

using namespace robust_ode;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct GlobalOptions {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out_dir = "out";
  std::string format = "csv";
  std::string argv_line;
};

// Name of the stage currently running, prefixed to error messages.
std::string g_stage = "setup";

struct ExampleOptions {
  std::string example = "enzyme";
  int level = 1;
  std::string design = "stable";
  int K = 5;
  std::size_t n = 0;        // 0: example default
  double noise_sd = -1.0;  // < 0: example default
  double horizon = 0.0;    // 0: example default

  void add(CLI::App* app) {
    app->add_option("--example", example, "Benchmark system")->check(CLI::IsMember({"enzyme", "lv"}));
    app->add_option("--level", level, "Heterogeneity level")->check(CLI::Range(1, 3));
    app->add_option("--case", design, "Stable or unstable design")->check(CLI::IsMember({"stable", "unstable"}));
    app->add_option("--k", K, "Number of sources")->check(CLI::PositiveNumber);
    app->add_option("--n", n, "Time points per source (default: example setting)");
    app->add_option("--noise-sd", noise_sd, "Observation noise sd (default: example setting)");
    app->add_option("--horizon", horizon, "Time horizon T (default: example setting)");
  }

  [[nodiscard]] SimulationConfig config(std::uint64_t seed) const {
    const SystemKind kind = example == "lv" ? SystemKind::LotkaVolterra : SystemKind::EnzymeNetwork;
    SimulationConfig c = SimulationConfig::defaults(kind);
    c.K = K;
    c.level = level_from_int(level);
    c.design = design == "unstable" ? DesignCase::Unstable : DesignCase::Stable;
    if (noise_sd >= 0.0) {
      c.noise_sd = noise_sd;
    }
    const double T = horizon > 0.0 ? horizon : c.grid.horizon();
    const std::size_t points = n > 0 ? n : c.grid.size();
    c.grid = TimeGrid::uniform(points, T);
    c.seed = seed;
    c.validate();
    return c;
  }

  [[nodiscard]] json to_json() const {
    return json{{"example", example}, {"level", level}, {"case", design},
                {"k", K},             {"n", n},         {"noise_sd", noise_sd},
                {"horizon", horizon}};
  }
};

struct SmoothingFlags {
  double h = 0.0;  // 0: automatic (pooled leave-one-out)
  double h_se = 0.0;
  int order = 2;
  std::string kernel = "epanechnikov";
  double undersmooth = 0.7;
  std::string sigma = "equivalent";

  void add(CLI::App* app) {
    app->add_option("--h", h, "Bandwidth in time units (default: leave-one-out CV)");
    app->add_option("--h-se", h_se, "Standard-error bandwidth (default: same as h)");
    app->add_option("--order", order, "Local polynomial order")->check(CLI::Range(1, 3));
    app->add_option("--kernel", kernel, "Smoothing kernel")->check(CLI::IsMember({"epanechnikov", "gaussian"}));
    app->add_option("--undersmooth", undersmooth, "Inference bandwidth factor applied to the CV bandwidth");
    app->add_option("--sigma", sigma, "Standard-error form")->check(CLI::IsMember({"equivalent", "kernel"}));
  }

  [[nodiscard]] SmoothingConfig config() const {
    SmoothingConfig c;
    if (h > 0.0) {
      c.h = h;
    }
    c.h_se = h_se;
    c.order = order;
    c.kernel = kernel_from_string(kernel);
    c.undersmooth_factor = undersmooth;
    c.sigma_method = sigma == "kernel" ? SigmaMethod::Kernel : SigmaMethod::EquivalentKernel;
    c.validate();
    return c;
  }

  [[nodiscard]] json to_json() const {
    return json{{"h", h},         {"h_se", h_se},           {"order", order},
                {"kernel", kernel}, {"undersmooth", undersmooth}, {"sigma", sigma}};
  }
};

struct KernelFlags {
  double bandwidth = 0.0;
  double ridge = 1e-4;
  bool cv = true;
  bool include_time = false;

  void add(CLI::App* app) {
    app->add_option("--bandwidth", bandwidth, "Gaussian kernel bandwidth (default: chosen from the data)");
    app->add_option("--ridge", ridge, "Ridge per training sample");
    app->add_flag("--auto,!--no-auto", cv,
                  "Leave-one-out kernel bandwidth (default); --no-auto uses the median pairwise distance");
    app->add_flag("--include-time", include_time, "Append scaled time as a kernel input");
  }

  [[nodiscard]] KernelParams params() const {
    KernelParams k;
    k.bandwidth = bandwidth;
    k.ridge_per_sample = ridge;
    k.cross_validate = cv;
    k.include_time = include_time;
    return k;
  }

  [[nodiscard]] json to_json() const {
    return json{{"bandwidth", bandwidth}, {"ridge", ridge}, {"auto", cv}, {"include_time", include_time}};
  }
};

struct WeightFlags {
  std::string method = "stable";
  double dn = -1.0;  // < 0: adaptive
  double cd = 0.01;
  double lambda = -1.0;
  double trim = 0.05;
  bool certify = false;

  void add(CLI::App* app) {
    app->add_option("--method", method, "Weight estimator")->check(CLI::IsMember({"plugin", "ridge", "stable"}));
    app->add_option("--dn", dn, "Fixed tolerance d_n (default: split-sample rule)");
    app->add_flag_function(
        "--auto-dn", [this](std::int64_t) { dn = -1.0; }, "Use the split-sample tolerance rule (default)");
    app->add_option("--cd", cd, "Constant C_d of the tolerance rule")->check(CLI::Range(0.001, 1.0));
    app->add_option("--lambda", lambda, "Ridge weight penalty (default: 1e-3 trace(Gamma)/K)");
    app->add_option("--trim", trim, "Boundary trim fraction for Gamma")->check(CLI::Range(0.0, 0.249));
    app->add_flag("--certify", certify, "Cross-check the stabilized solution by direct projection");
  }

  void apply(PipelineOptions& o) const {
    o.method = method == "plugin" ? WeightMethod::PlugIn
                                  : (method == "ridge" ? WeightMethod::Ridge : WeightMethod::Stabilized);
    o.auto_tolerance = dn < 0.0;
    o.d_n = dn < 0.0 ? 0.0 : dn;
    o.C_d = cd;
    o.ridge_lambda = lambda;
    o.trim = trim;
    o.certify_weights = certify;
  }

  [[nodiscard]] json to_json() const {
    return json{{"method", method}, {"dn", dn},     {"cd", cd},
                {"lambda", lambda}, {"trim", trim}, {"certify", certify}};
  }
};

[[nodiscard]] fs::path resolve_out(const std::string& explicit_out, const GlobalOptions& g,
                                   const std::string& default_name) {
  if (!explicit_out.empty()) {
    return explicit_out;
  }
  return fs::path(g.out_dir) / default_name;
}

void write_table(const fs::path& path, const CsvTable& table, const std::string& format) {
  if (format == "json") {
    json rows = json::array();
    for (const auto& r : table.rows) {
      json obj;
      for (std::size_t c = 0; c < table.header.size(); ++c) {
        obj[table.header[c]] = r[c];
      }
      rows.push_back(std::move(obj));
    }
    fs::path p = path;
    write_json(p.replace_extension(".json"), rows);
  } else {
    write_csv(path, table);
  }
}

[[nodiscard]] json global_json(const GlobalOptions& g) {
  return json{{"seed", g.seed}, {"threads", g.threads}, {"out_dir", g.out_dir}, {"format", g.format},
              {"argv", g.argv_line}};
}

void finish(const fs::path& dir, const std::string& command, const GlobalOptions& g, json config) {
  config["global"] = global_json(g);
  write_meta(dir, command, config);
}

// ---------------------------------------------------------------------------------------

void run_simulate(const GlobalOptions& g, const ExampleOptions& ex, const std::string& out, bool heldout) {
  g_stage = "simulate";
  const SimulationConfig c = ex.config(g.seed);
  const SourceObservations obs = generate_sources(c);
  const fs::path dir = out.empty() ? fs::path(g.out_dir) : fs::path(out);
  for (int k = 0; k < obs.K(); ++k) {
    const auto& s = obs.sources[static_cast<std::size_t>(k)];
    write_csv(dir / ("source_" + std::to_string(k + 1) + ".csv"), source_table(s));
    write_csv(dir / ("latent_" + std::to_string(k + 1) + ".csv"), latent_table(s));
  }
  json config{{"example", ex.to_json()}, {"out", dir.string()}, {"heldout", heldout}};
  if (!obs.combination_weights.empty()) {
    config["combination_weights"] = obs.combination_weights;
  }
  if (heldout) {
    const Source h = generate_heldout(c);
    fs::create_directories(dir / "heldout");
    write_csv(dir / "heldout" / "latent.csv", latent_table(h));
  }
  finish(dir, "simulate", g, config);
}

void run_smooth(const GlobalOptions& g, const std::string& in, const SmoothingFlags& sf, bool inference,
                const std::string& out) {
  g_stage = "smooth";
  const Source s = read_source_csv(in);
  SmoothingConfig c = sf.config();
  json config{{"in", in}, {"smoothing", sf.to_json()}, {"inference", inference}};
  if (!(sf.h > 0.0)) {
    const BandwidthSelection sel = select_bandwidth_pooled({SeriesRef{&s.grid.times(), &s.y}}, s.grid.horizon(), c);
    c.h = inference ? sel.inference_bandwidth : sel.cv_bandwidth;
    config["cv_bandwidth"] = sel.cv_bandwidth;
  }
  config["bandwidth"] = c.h;
  const SmoothedSource sm = smooth_source(s.grid, s.y, s.grid, c);
  const fs::path path = resolve_out(out, g, "smoothed.csv");
  write_csv(path, smoothed_table(sm));
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "smooth", g, config);
}

/** Smoothed inputs when every CSV carries an xhat_1 column, else raw observations smoothed here. */
[[nodiscard]] std::vector<SmoothedSource> load_or_smooth(const fs::path& dir, const SmoothingFlags& sf) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::Io, "input directory not found: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  bool all_smoothed = !files.empty();
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string header;
    std::getline(in, header);
    all_smoothed = all_smoothed && header.find("xhat_1") != std::string::npos;
  }
  std::vector<SmoothedSource> out;
  if (all_smoothed) {
    for (const auto& f : files) {
      out.push_back(read_smoothed_csv(f));
    }
    return out;
  }
  const IngestedData data = ingest_multisubject_csv(dir);
  PipelineOptions o;
  o.smoothing = sf.config();
  o.auto_bandwidth = !(sf.h > 0.0);
  o.inference = false;
  o.fit_dynamics = false;
  o.method = WeightMethod::PlugIn;
  return run_estimation(data.observations, o).smoothed;
}

void run_gamma(const GlobalOptions& g, const std::string& in, const SmoothingFlags& sf, double trim,
               const std::string& out) {
  g_stage = "gamma";
  const auto smoothed = load_or_smooth(in, sf);
  const GammaMatrix gm = estimate_gamma(smoothed, trim);
  const fs::path path = resolve_out(out, g, "gamma.json");
  write_json(path, gamma_to_json(gm));
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "gamma", g,
         json{{"in", in}, {"trim", trim}, {"smoothing", sf.to_json()}});
}

void run_weights(const GlobalOptions& g, const std::string& gamma_path, const std::string& in,
                 const SmoothingFlags& sf, const WeightFlags& wf, std::size_t n_hint, const std::string& out) {
  g_stage = "weights";
  const GammaMatrix gm = gamma_from_json(read_json(gamma_path));
  PipelineOptions o;
  wf.apply(o);
  json config{{"gamma", gamma_path}, {"weights", wf.to_json()}};
  double d_n = o.d_n;
  std::optional<ToleranceConfig> tc;
  if (o.method == WeightMethod::Stabilized && o.auto_tolerance) {
    if (in.empty()) {
      throw Error(ErrorKind::InvalidArgument,
                  "the split-sample tolerance needs --in <observation dir>; pass --dn for a fixed tolerance");
    }
    g_stage = "select_tolerance";
    const IngestedData data = ingest_multisubject_csv(in);
    PipelineOptions so;
    so.smoothing = sf.config();
    so.auto_bandwidth = !(sf.h > 0.0);
    so.inference = false;
    so.fit_dynamics = false;
    so.trim = o.trim;
    so.C_d = o.C_d;
    const PipelineResult r = run_estimation(data.observations, so);
    tc = r.tolerance;
    d_n = tc->d_n;
    config["in"] = in;
  }
  (void)n_hint;
  g_stage = "weights";
  const SimplexWeights w = compute_weights(gm, d_n, o);
  json j = weights_to_json(w);
  if (tc) {
    j["tolerance"] = tolerance_to_json(*tc);
  }
  const fs::path path = resolve_out(out, g, "weights.json");
  write_json(path, j);
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "weights", g, config);
}

[[nodiscard]] PipelineOptions pipeline_options(const SmoothingFlags& sf, const WeightFlags& wf,
                                               const KernelFlags& kf, double alpha) {
  PipelineOptions o;
  o.smoothing = sf.config();
  o.auto_bandwidth = !(sf.h > 0.0);
  o.inference = true;
  wf.apply(o);
  o.kernel = kf.params();
  o.alpha = alpha;
  return o;
}

void run_infer(const GlobalOptions& g, const std::string& in, const SmoothingFlags& sf, const WeightFlags& wf,
               double alpha, const std::string& out) {
  g_stage = "infer";
  const IngestedData data = ingest_multisubject_csv(in);
  PipelineOptions o = pipeline_options(sf, wf, KernelFlags{}, alpha);
  o.fit_dynamics = false;
  const PipelineResult r = run_estimation(data.observations, o);
  const fs::path path = resolve_out(out, g, "confidence_band.csv");
  write_csv(path, band_table(r.robust, r.band));
  json config{{"in", in}, {"alpha", alpha}, {"smoothing", sf.to_json()}, {"weights", wf.to_json()},
              {"bandwidth", r.bandwidth}, {"omega", vector_to_json(r.weights.omega)}};
  if (r.tolerance) {
    config["tolerance"] = tolerance_to_json(*r.tolerance);
    const double nh = static_cast<double>(r.robust.n) * r.bandwidth / r.eval_grid.horizon();
    config["nh_squared_dn"] = nh * nh * r.tolerance->d_n;
  }
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "infer", g, config);
}

void run_fit(const GlobalOptions& g, const std::string& in, const KernelFlags& kf, const std::string& out) {
  g_stage = "fit";
  std::vector<double> times;
  const auto [x, d] = read_robust_csv(in, times);
  const double horizon = times.back() > 0.0 ? times.back() : 1.0;
  const FittedDynamics f = fit_dynamics(x, d, times, horizon, kf.params());
  const fs::path path = resolve_out(out, g, "model.json");
  write_json(path, model_to_json(f));
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "fit", g,
         json{{"in", in}, {"kernel", kf.to_json()}});
}

[[nodiscard]] std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) {
    out.push_back(method_from_string(n));
  }
  require(!out.empty(), "at least one method is required");
  return out;
}

[[nodiscard]] CsvTable report_table(const std::vector<LossReport>& reports, std::size_t method_index) {
  CsvTable t;
  t.header = {"replication", "method_index", "max_loss", "avg_loss", "gen_loss"};
  for (const auto& r : reports) {
    t.rows.push_back({static_cast<double>(r.replication), static_cast<double>(method_index), r.max_loss, r.avg_loss, r.gen_loss});
  }
  return t;
}

void run_evaluate(const GlobalOptions& g, const std::string& model, const std::string& in, const ExampleOptions& ex,
                  const std::vector<std::string>& methods, const KernelFlags& kf, const std::string& out) {
  g_stage = "evaluate";
  const fs::path path = resolve_out(out, g, "evaluation.csv");
  CsvTable t;
  json config{{"kernel", kf.to_json()}};
  if (!model.empty()) {
    // Score a saved model on every subject in `in` (latent truth when present, smoothed otherwise).
    const FittedDynamics f = model_from_json(read_json(model));
    const IngestedData data = ingest_multisubject_csv(in);
    t.header = {"source", "loss", "normalized_loss", "uses_latent"};
    for (std::size_t k = 0; k < data.observations.sources.size(); ++k) {
      const Source& s = data.observations.sources[k];
      Matrix xs;
      Matrix ds;
      const bool latent = s.latent_states.has_value();
      if (latent) {
        xs = *s.latent_states;
        ds = *s.latent_derivatives;
      } else {
        SmoothingConfig sc;
        sc.h = select_bandwidth_pooled({SeriesRef{&s.grid.times(), &s.y}}, s.grid.horizon(), sc).cv_bandwidth;
        const SmoothedSource sm = smooth_source(s.grid, s.y, s.grid, sc);
        xs = sm.x_hat;
        ds = sm.d_hat;
      }
      t.rows.push_back({static_cast<double>(k + 1), trajectory_loss(f, xs, ds, s.grid),
                        normalized_loss(f, xs, ds, s.grid), latent ? 1.0 : 0.0});
    }
    config["model"] = model;
    config["in"] = in;
  } else {
    const SimulationConfig c = ex.config(g.seed);
    const SourceObservations obs = generate_sources(c);
    const Source heldout = generate_heldout(c);
    PipelineOptions o = estimation_options();
    o.kernel = kf.params();
    const auto ms = parse_methods(methods);
    const auto fits = fit_methods(obs, ms, o);
    t.header = {"method_index", "max_loss", "avg_loss", "gen_loss"};
    json names = json::array();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const LossReport r = loss_report(fits.at(ms[i]), obs.sources, heldout);
      t.rows.push_back({static_cast<double>(i), r.max_loss, r.avg_loss, r.gen_loss});
      names.push_back(ToString(ms[i]));
    }
    config["example"] = ex.to_json();
    config["methods"] = names;
  }
  write_table(path, t, g.format);
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "evaluate", g, config);
}

void run_bench(const GlobalOptions& g, const ExampleOptions& ex, int reps, const std::vector<std::string>& methods,
               bool coverage, double alpha, const KernelFlags& kf, const std::string& out) {
  g_stage = "bench";
  const fs::path dir = out.empty() ? fs::path(g.out_dir) : fs::path(out);
  json config{{"example", ex.to_json()}, {"reps", reps}, {"coverage", coverage}, {"kernel", kf.to_json()}};
  if (coverage) {
    CoverageConfig cc;
    cc.simulation = ex.config(g.seed);
    cc.replications = reps;
    cc.alpha = alpha;
    cc.threads = g.threads;
    const CoverageReport r = coverage_experiment(cc);
    CsvTable summary;
    summary.header = {"ecp", "cil", "covered", "total"};
    summary.rows.push_back({r.ecp, r.cil, static_cast<double>(r.covered), static_cast<double>(r.total)});
    write_table(dir / "coverage_summary.csv", summary, g.format);
    CsvTable per;
    per.header = {"replication", "ecp", "cil"};
    for (std::size_t i = 0; i < r.ecp_per_replication.size(); ++i) {
      per.rows.push_back({static_cast<double>(i), r.ecp_per_replication[i], r.cil_per_replication[i]});
    }
    write_table(dir / "coverage_replications.csv", per, g.format);
    config["alpha"] = alpha;
  } else {
    BenchConfig b;
    b.simulation = ex.config(g.seed);
    b.replications = reps;
    b.methods = parse_methods(methods);
    b.options.kernel = kf.params();
    b.threads = g.threads;
    const BenchResult r = run_benchmark(b);
    CsvTable summary;
    summary.header = {"method_index", "max_mean", "max_sd", "avg_mean", "avg_sd", "gen_mean", "gen_sd"};
    json names = json::array();
    for (std::size_t i = 0; i < r.summary.size(); ++i) {
      const auto& s = r.summary[i];
      summary.rows.push_back({static_cast<double>(i), s.max_mean, s.max_sd, s.avg_mean, s.avg_sd, s.gen_mean,
                              s.gen_sd});
      names.push_back(s.method);
      write_table(dir / ("replications_" + s.method + ".csv"), report_table(r.reports.at(b.methods[i]), i), g.format);
    }
    write_table(dir / "bench_summary.csv", summary, g.format);
    config["methods"] = names;
  }
  finish(dir, "bench", g, config);
}

void run_loso(const GlobalOptions& g, const std::string& in, const std::vector<std::string>& baselines,
              const KernelFlags& kf, const std::string& out) {
  g_stage = "loso";
  const IngestedData data = ingest_multisubject_csv(in);
  PipelineOptions o = estimation_options();
  o.kernel = kf.params();
  const auto bs = parse_methods(baselines);
  const auto results = leave_one_subject_out(data.observations, data.names, bs, o, g.threads);
  CsvTable t;
  t.header = {"subject_index", "trials"};
  for (Method b : bs) {
    t.header.push_back(std::string("favourable_vs_") + ToString(b));
  }
  json subjects = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::vector<double> row{static_cast<double>(i + 1), static_cast<double>(results[i].trials)};
    for (Method b : bs) {
      row.push_back(static_cast<double>(results[i].favourable.at(ToString(b))));
    }
    t.rows.push_back(std::move(row));
    subjects.push_back(results[i].subject);
  }
  const fs::path path = resolve_out(out, g, "loso.csv");
  write_table(path, t, g.format);
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "loso", g,
         json{{"in", in}, {"subjects", subjects}, {"baselines", baselines}, {"kernel", kf.to_json()}});
}

void run_fig1(const GlobalOptions& g, int seeds, double cd, const std::string& out) {
  g_stage = "fig1";
  const std::vector<ToleranceRule> rules = {ToleranceRule::PlugIn, ToleranceRule::InverseSquare,
                                            ToleranceRule::LogOverN, ToleranceRule::InverseLog,
                                            ToleranceRule::Adaptive};
  const auto points = stability_experiment(stability_n_grid(), rules, seeds, g.seed, cd);
  CsvTable t;
  t.header = {"n", "rule_index", "median_loss", "mean_loss"};
  for (const auto& p : points) {
    const auto idx = std::find(rules.begin(), rules.end(), p.rule) - rules.begin();
    t.rows.push_back({static_cast<double>(p.n), static_cast<double>(idx), p.median_loss, p.mean_loss});
  }
  const fs::path path = resolve_out(out, g, "fig1.csv");
  write_table(path, t, g.format);
  json names = json::array();
  for (auto r : rules) {
    names.push_back(ToString(r));
  }
  finish(path.parent_path().empty() ? fs::path(".") : path.parent_path(), "fig1", g,
         json{{"seeds", seeds}, {"cd", cd}, {"rules", names}});
}

void run_pipeline(const GlobalOptions& g, const std::string& in, const ExampleOptions& ex, const SmoothingFlags& sf,
                  const WeightFlags& wf, const KernelFlags& kf, double alpha) {
  g_stage = "ingest";
  SourceObservations obs;
  json config{{"smoothing", sf.to_json()}, {"weights", wf.to_json()}, {"kernel", kf.to_json()}, {"alpha", alpha}};
  if (!in.empty()) {
    obs = ingest_multisubject_csv(in).observations;
    config["in"] = in;
  } else {
    obs = generate_sources(ex.config(g.seed));
    config["example"] = ex.to_json();
  }
  if (!shared_initial_state(obs, 1e-8) && in.empty()) {
    std::cerr << "warning: sources do not share an initial state\n";
  }
  const PipelineOptions o = pipeline_options(sf, wf, kf, alpha);
  g_stage = "pipeline";
  const PipelineResult r = run_estimation(obs, o);
  const fs::path dir = g.out_dir;
  g_stage = "write";
  for (std::size_t k = 0; k < r.smoothed.size(); ++k) {
    write_csv(dir / "smooth" / ("smoothed_" + std::to_string(k + 1) + ".csv"), smoothed_table(r.smoothed[k]));
  }
  write_json(dir / "gamma.json", gamma_to_json(r.gamma));
  json tol = r.tolerance ? tolerance_to_json(*r.tolerance) : json{{"d_n", o.d_n}, {"fixed", true}};
  if (r.tolerance) {
    const double nh = static_cast<double>(r.robust.n) * r.bandwidth / r.eval_grid.horizon();
    tol["nh_squared_dn"] = nh * nh * r.tolerance->d_n;
  }
  write_json(dir / "tolerance.json", tol);
  write_json(dir / "weights.json", weights_to_json(r.weights));
  write_csv(dir / "robust_trajectory.csv", robust_table(r.robust));
  write_csv(dir / "confidence_band.csv", band_table(r.robust, r.band));
  write_json(dir / "model.json", model_to_json(*r.dynamics));
  config["bandwidth"] = r.bandwidth;
  if (r.bandwidth_selection) {
    config["cv_bandwidth"] = r.bandwidth_selection->cv_bandwidth;
  }
  finish(dir, "pipeline", g, config);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust learning of heterogeneous ODE systems"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  GlobalOptions g;
  for (int i = 0; i < argc; ++i) {
    g.argv_line += (i ? " " : "") + std::string(argv[i]);
  }
  app.add_option("--seed", g.seed, "Base random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (ROBUST_ODE_THREADS overrides)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--format", g.format, "Table format")->check(CLI::IsMember({"csv", "json"}));
  app.fallthrough();

  ExampleOptions ex;
  SmoothingFlags sf;
  WeightFlags wf;
  KernelFlags kf;
  std::string in, out, model, gamma_path;
  bool heldout = false, inference = false, coverage = false;
  double trim = 0.05, alpha = 0.05, cd = 0.01;
  int reps = 100, seeds = 50;
  std::size_t n_hint = 0;
  std::vector<std::string> methods = {"proposed", "erm"};
  std::vector<std::string> baselines = {"erm"};

  auto* sim = app.add_subcommand("simulate", "Generate noisy multi-source observations");
  ex.add(sim);
  sim->add_option("--out", out, "Output directory (default: --out-dir)");
  sim->add_flag("--heldout", heldout, "Also write the held-out source's latent truth");

  auto* smooth = app.add_subcommand("smooth", "Local polynomial smoothing of one source");
  smooth->add_option("--in", in, "Source CSV (t,Y_1..Y_p)")->required();
  sf.add(smooth);
  smooth->add_flag("--auto-h", [&](std::int64_t) { sf.h = 0.0; }, "Leave-one-out bandwidth (default)");
  smooth->add_flag("--inference", inference, "Apply the undersmoothing factor to the CV bandwidth");
  smooth->add_option("--out", out, "Output CSV");

  auto* gamma = app.add_subcommand("gamma", "Gram matrix of derivative trajectories");
  gamma->add_option("--in", in, "Directory of smoothed or raw source CSVs")->required();
  gamma->add_option("--trim", trim, "Boundary trim fraction")->check(CLI::Range(0.0, 0.249));
  sf.add(gamma);
  gamma->add_option("--out", out, "Output JSON");

  auto* weights = app.add_subcommand("weights", "Simplex weights from a Gamma matrix");
  weights->add_option("--gamma", gamma_path, "Gamma JSON")->required();
  weights->add_option("--in", in, "Observation directory for the split-sample tolerance");
  wf.add(weights);
  sf.add(weights);
  weights->add_option("--n", n_hint, "Unused; kept for symmetry with simulate");
  weights->add_option("--out", out, "Output JSON");

  auto* infer = app.add_subcommand("infer", "Robust trajectory with pointwise confidence intervals");
  infer->add_option("--in", in, "Directory of source CSVs")->required();
  infer->add_option("--alpha", alpha, "Nominal level")->check(CLI::Range(1e-6, 0.999999));
  sf.add(infer);
  wf.add(infer);
  infer->add_option("--out", out, "Output CSV");

  auto* fit = app.add_subcommand("fit", "Fit the link function to a robust trajectory");
  fit->add_option("--in", in, "Robust trajectory CSV")->required();
  kf.add(fit);
  fit->add_option("--out", out, "Output model JSON");

  auto* evaluate = app.add_subcommand("evaluate", "Losses of a saved model, or of each method on one replication");
  evaluate->add_option("--model", model, "Model JSON to score");
  evaluate->add_option("--in", in, "Directory of source CSVs (with --model)");
  ex.add(evaluate);
  evaluate->add_option("--methods", methods, "Methods")->delimiter(',');
  kf.add(evaluate);
  evaluate->add_option("--out", out, "Output table");

  auto* bench = app.add_subcommand("bench", "Replicated benchmark (loss tables or coverage)");
  ex.add(bench);
  bench->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
  bench->add_option("--methods", methods, "Methods")->delimiter(',');
  bench->add_flag("--coverage", coverage, "Coverage experiment instead of losses");
  bench->add_option("--alpha", alpha, "Nominal level for --coverage");
  kf.add(bench);
  bench->add_option("--out", out, "Output directory (default: --out-dir)");

  auto* loso = app.add_subcommand("loso", "Leave-one-subject-out comparison on external data");
  loso->add_option("--in", in, "Directory of subject CSVs with a trial column")->required();
  loso->add_option("--baselines", baselines, "Baselines")->delimiter(',');
  kf.add(loso);
  loso->add_option("--out", out, "Output table");

  auto* fig1 = app.add_subcommand("fig1", "Weight-stability curves for the tolerance rules");
  fig1->add_option("--seeds", seeds, "Seeds per n")->check(CLI::PositiveNumber);
  fig1->add_option("--cd", cd, "C_d for the adaptive rule")->check(CLI::Range(0.001, 1.0));
  fig1->add_option("--out", out, "Output table");

  auto* pipeline = app.add_subcommand("pipeline", "All stages, one artifact per stage");
  pipeline->add_option("--in", in, "Directory of source CSVs (default: simulate from the example flags)");
  ex.add(pipeline);
  sf.add(pipeline);
  wf.add(pipeline);
  kf.add(pipeline);
  pipeline->add_option("--alpha", alpha, "Nominal level")->check(CLI::Range(1e-6, 0.999999));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }
  g.threads = resolve_threads(g.threads);

  try {
    if (*sim) {
      run_simulate(g, ex, out, heldout);
    } else if (*smooth) {
      run_smooth(g, in, sf, inference, out);
    } else if (*gamma) {
      run_gamma(g, in, sf, trim, out);
    } else if (*weights) {
      run_weights(g, gamma_path, in, sf, wf, n_hint, out);
    } else if (*infer) {
      run_infer(g, in, sf, wf, alpha, out);
    } else if (*fit) {
      run_fit(g, in, kf, out);
    } else if (*evaluate) {
      if (!model.empty() && in.empty()) {
        throw Error(ErrorKind::InvalidArgument, "--model requires --in");
      }
      run_evaluate(g, model, in, ex, methods, kf, out);
    } else if (*bench) {
      run_bench(g, ex, reps, methods, coverage, alpha, kf, out);
    } else if (*loso) {
      run_loso(g, in, baselines, kf, out);
    } else if (*fig1) {
      run_fig1(g, seeds, cd, out);
    } else if (*pipeline) {
      run_pipeline(g, in, ex, sf, wf, kf, alpha);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << g_stage << "]: " << e.what() << '\n';
    return e.is_input_error() ? kExitInput : kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [" << g_stage << "]: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error [" << g_stage << "]: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}
