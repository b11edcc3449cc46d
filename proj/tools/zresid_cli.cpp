// zresid command-line front end: fit, residuals, test, simulate, plot.
// Exit codes: 0 ok, 2 invalid input, 3 non-convergence / numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "zresid/zresid.hpp"

namespace fs = std::filesystem;
using namespace zresid;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNonConvergence = 3;

struct NotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write '" + path + "'");
  return out;
}

// The fit document carries the column roles so later commands can reload the data.
struct FitDocument {
  FrailtyFit fit;
  CsvSchema schema;
};

FitDocument load_fit_document(const std::string& path) {
  const auto j = read_json_file(path);
  FitDocument doc{fit_from_json(j), {}};
  try {
    const auto& s = j.at("data_schema");
    doc.schema.time = s.at("time").get<std::string>();
    doc.schema.status = s.at("status").get<std::string>();
    doc.schema.cluster = s.at("cluster").get<std::string>();
  } catch (const json::exception& e) {
    throw validation_error("'" + path + "' lacks data_schema: " + e.what());
  }
  doc.schema.covariates = doc.fit.input_columns;
  if (!doc.fit.converged)
    throw NotConverged("'" + path + "' holds a non-converged fit (" + doc.fit.message + ")");
  return doc;
}

std::vector<double> x_values(const std::string& source, const FrailtyFit& fit, const SurvivalDataset& data,
                             std::string& label) {
  if (source == "LP") {
    label = "linear predictor";
    return fitted_values(fit, data).eta;
  }
  const auto term = parse_term(source);
  const auto col = data.covariate_column(term.column);
  if (!col) throw validation_error("--x column '" + term.column + "' is not a model input column");
  label = term.label();
  std::vector<double> x;
  for (const auto& r : data.records()) x.push_back(term.apply(r.covariates[*col]));
  return x;
}

// ---- subcommands ----------------------------------------------------------------

struct FitArgs {
  std::string data, time, status, cluster, out;
  std::vector<std::string> covariates;
  bool no_frailty = false;
};

int run_fit(const FitArgs& a) {
  ModelSpec spec;
  spec.frailty = !a.no_frailty;
  std::vector<std::string> columns;
  for (const auto& tok : a.covariates) {
    spec.terms.push_back(parse_term(tok));
    if (std::find(columns.begin(), columns.end(), spec.terms.back().column) == columns.end())
      columns.push_back(spec.terms.back().column);
  }
  const CsvSchema schema{a.time, a.status, a.cluster, columns};
  const auto data = load_csv(a.data, schema);
  const auto fit = fit_ppl(data, spec);
  auto j = fit_to_json(fit);
  j["data_schema"] = {{"time", a.time}, {"status", a.status}, {"cluster", a.cluster}};
  j["data"] = {{"path", a.data},
               {"records", data.size()},
               {"events", data.event_count()},
               {"clusters", data.cluster_count()},
               {"censoring_rate", data.censoring_rate()}};
  write_json_file(j, a.out);
  if (!fit.converged) {
    std::cerr << "zresid fit: did not converge: " << fit.message << '\n';
    return kExitNonConvergence;
  }
  return 0;
}

struct ResidualArgs {
  std::string fit, data, kind, out;
  std::uint64_t seed = 0;
};

int run_residuals(const ResidualArgs& a) {
  const auto doc = load_fit_document(a.fit);
  const auto data = load_csv(a.data, doc.schema);
  const auto kind = parse_residual_kind(a.kind);
  const auto r = compute_residuals(kind, doc.fit, data, a.seed);
  auto out = open_out(a.out);
  write_residuals_csv(r, data, out);
  if (r.clamped) std::cerr << "zresid residuals: " << r.clamped << " probabilities clamped to [1e-12, 1-1e-12]\n";
  return 0;
}

struct TestArgs {
  std::string fit, data, method, cov, out;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;  // 0: single run with the seed itself
};

int run_test(const TestArgs& a) {
  const auto doc = load_fit_document(a.fit);
  const auto data = load_csv(a.data, doc.schema);
  const auto method = parse_test_method(a.method);
  TestOptions opts;
  opts.k = a.k;
  if (!a.cov.empty()) opts.covariate = parse_term(a.cov);
  if (method == TestMethod::z_aov_cov && !opts.covariate) throw validation_error("z-aov-cov needs --cov");
  json j;
  j["method"] = std::string(test_name(method));
  j["seed"] = a.seed;
  if (a.replicates == 0) {
    const TestContext ctx(doc.fit, data, opts);
    j["report"] = report_to_json(ctx.run(method, a.seed));
  } else {
    const TestMethod tests[] = {method};
    const auto reps = replicate_tests(doc.fit, data, tests, a.replicates, a.seed, opts, default_parallelism());
    j.update(replication_to_json(reps.front()));
  }
  write_json_file(j, a.out);
  return 0;
}

struct SimulateArgs {
  std::string config, out_dir;
};

int run_simulate(const SimulateArgs& a) {
  const auto raw = read_json_file(a.config);
  const auto cfg = sim_config_from_json(raw);
  const unsigned workers = cfg.parallelism ? cfg.parallelism : default_parallelism();
  fs::create_directories(a.out_dir);
  const auto result = run_grid(cfg.grid, workers, cfg.seed);
  {
    auto out = open_out((fs::path(a.out_dir) / "rejection_rates.csv").string());
    write_grid_csv(result, out);
  }
  auto manifest = sim_manifest(cfg, result, workers);

  // Optional: write the first N replicate datasets of every cell with their seeds.
  const std::size_t export_n = raw.value("export_datasets", std::size_t{0});
  if (export_n > 0) {
    const auto dir = fs::path(a.out_dir) / "datasets";
    fs::create_directories(dir);
    auto index = open_out((dir / "index.csv").string());
    index << "file,cluster_size,censor_target,replicate,replicate_seed,z_seed_true,z_seed_wrong\n";
    for (std::size_t s : cfg.grid.cluster_sizes)
      for (std::size_t c = 0; c < cfg.grid.censor_targets.size(); ++c)
        for (std::size_t r = 0; r < std::min(export_n, cfg.grid.replicates); ++r) {
          SimConfig sc = cfg.grid.base;
          sc.cluster_size = s;
          sc.censor_rate_target = cfg.grid.censor_targets[c];
          sc.censor_gamma = result.gammas[c].second;
          const auto seed = cell_replicate_seed(cfg.seed, s, sc.censor_rate_target, r);
          Rng rng(seed);
          const auto data = generate_dataset(sc, rng);
          std::ostringstream name;
          name << "n" << s << "_c" << format_double(sc.censor_rate_target) << "_r" << r << ".csv";
          save_csv(data, (dir / name.str()).string());
          index << name.str() << ',' << s << ',' << format_double(sc.censor_rate_target) << ',' << r << ',' << seed
                << ',' << z_draw_seed(seed, SimModel::true_model) << ',' << z_draw_seed(seed, SimModel::wrong_model)
                << '\n';
        }
    manifest["exported_datasets_per_cell"] = export_n;
  }
  write_json_file(manifest, (fs::path(a.out_dir) / "manifest.json").string());
  return 0;
}

struct PlotArgs {
  std::string kind, fit, data, x = "LP", svg, csv, method = "z-aov-lp";
  std::optional<std::uint64_t> seed;
  std::size_t k = 10;
  std::size_t replicates = 1000;
};

int run_plot(const PlotArgs& a) {
  const auto kind = parse_plot_kind(a.kind);
  const auto doc = load_fit_document(a.fit);
  const auto data = load_csv(a.data, doc.schema);
  if (kind != PlotKind::chf45 && !a.seed) throw validation_error("plot --kind " + a.kind + " needs --seed");
  Figure fig;
  std::string label;
  switch (kind) {
    case PlotKind::qq: fig = qq_figure(z_residual(doc.fit, data, *a.seed).values); break;
    case PlotKind::chf45: fig = chf45_figure(km_chf(cox_snell(doc.fit, data))); break;
    case PlotKind::scatter_lowess: {
      const auto x = x_values(a.x, doc.fit, data, label);
      fig = scatter_lowess_figure(x, z_residual(doc.fit, data, *a.seed).values, label);
      break;
    }
    case PlotKind::grouped_box: {
      const auto x = x_values(a.x, doc.fit, data, label);
      fig = grouped_box_figure(x, z_residual(doc.fit, data, *a.seed).values, a.k, label);
      break;
    }
    case PlotKind::pvalue_hist: {
      const auto method = parse_test_method(a.method);
      TestOptions opts;
      opts.k = a.k;
      if (method == TestMethod::z_aov_cov) {
        if (a.x == "LP") throw validation_error("pvalue_hist with z-aov-cov needs --x <covariate>");
        opts.covariate = parse_term(a.x);
      }
      const TestMethod tests[] = {method};
      const auto reps = replicate_tests(doc.fit, data, tests, a.replicates, *a.seed, opts, default_parallelism());
      fig = pvalue_hist_figure(reps.front().p_values, reps.front().test_name);
      break;
    }
  }
  save_figure(fig, a.svg, a.csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared gamma-frailty Cox models and Z-residual diagnostics"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit a shared gamma-frailty Cox model");
  fit->add_option("--data", fa.data, "input CSV")->required();
  fit->add_option("--time", fa.time, "time column")->required();
  fit->add_option("--status", fa.status, "event indicator column (1 event, 0 censored)")->required();
  fit->add_option("--cluster", fa.cluster, "cluster label column")->required();
  fit->add_option("--covariate", fa.covariates, "covariate column, optionally name:log")->required();
  fit->add_flag("--no-frailty", fa.no_frailty, "plain Cox model without frailty");
  fit->add_option("--out", fa.out, "output JSON")->required();

  ResidualArgs ra;
  auto* res = app.add_subcommand("residuals", "compute residuals from a fitted model");
  res->add_option("--fit", ra.fit, "fit JSON")->required();
  res->add_option("--data", ra.data, "data CSV")->required();
  res->add_option("--kind", ra.kind, "cs|martingale|deviance|censored-z|z")->required();
  res->add_option("--seed", ra.seed, "randomization seed")->required();
  res->add_option("--out", ra.out, "output CSV")->required();

  TestArgs ta;
  auto* test = app.add_subcommand("test", "goodness-of-fit and homogeneity tests");
  test->add_option("--fit", ta.fit, "fit JSON")->required();
  test->add_option("--data", ta.data, "data CSV")->required();
  test->add_option("--method", ta.method, "z-sw|z-sf|z-ks|dev-sw|cz-csf|z-aov-lp|z-aov-cov")->required();
  test->add_option("--cov", ta.cov, "grouping covariate for z-aov-cov, name[:log]");
  test->add_option("--k", ta.k, "number of groups")->capture_default_str();
  test->add_option("--seed", ta.seed, "randomization seed")->required();
  test->add_option("--replicates", ta.replicates, "number of regenerated Z-residual sets")->check(CLI::PositiveNumber);
  test->add_option("--out", ta.out, "output JSON")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "run the rejection-rate grid");
  sim->add_option("--config", sa.config, "grid config JSON")->required();
  sim->add_option("--out-dir", sa.out_dir, "output directory")->required();

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "write a diagnostic plot (SVG) and its points (CSV)");
  plot->add_option("--kind", pa.kind, "qq|chf45|scatter_lowess|grouped_box|pvalue_hist")->required();
  plot->add_option("--fit", pa.fit, "fit JSON")->required();
  plot->add_option("--data", pa.data, "data CSV")->required();
  plot->add_option("--x", pa.x, "name[:log] or LP")->capture_default_str();
  plot->add_option("--svg", pa.svg, "output SVG")->required();
  plot->add_option("--csv", pa.csv, "output CSV")->required();
  plot->add_option("--seed", pa.seed, "randomization seed (all kinds except chf45)");
  plot->add_option("--k", pa.k, "number of groups")->capture_default_str();
  plot->add_option("--method", pa.method, "test for pvalue_hist")->capture_default_str();
  plot->add_option("--replicates", pa.replicates, "replicates for pvalue_hist")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*fit) return run_fit(fa);
    if (*res) return run_residuals(ra);
    if (*test) return run_test(ta);
    if (*sim) return run_simulate(sa);
    if (*plot) return run_plot(pa);
  } catch (const validation_error& e) {
    std::cerr << "zresid: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NotConverged& e) {
    std::cerr << "zresid: " << e.what() << '\n';
    return kExitNonConvergence;
  } catch (const numerical_error& e) {
    std::cerr << "zresid: " << e.what() << '\n';
    return kExitNonConvergence;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "zresid: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
