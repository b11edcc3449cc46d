#include <gtest/gtest.h>

#include <sstream>

#include "zresid/io.hpp"
#include "zresid/sim.hpp"

using namespace zresid;

TEST(Generator, InversionHandValues) {
  // -log(u) = lambda z e^eta t^alpha at t = 1
  const double lambda = 0.007, alpha = 3.0, z = 1.3, eta = 0.4;
  const double u = std::exp(-lambda * z * std::exp(eta));
  EXPECT_NEAR(weibull_frailty_time(u, z, eta, alpha, lambda), 1.0, 1e-12);
  const double t = weibull_frailty_time(0.25, 2.0, -0.5, 3.0, 0.007);
  EXPECT_NEAR(t, std::cbrt(std::log(4.0) / (0.014 * std::exp(-0.5))), 1e-12);
  // cumulative hazard at the generated time recovers -log u
  EXPECT_NEAR(0.007 * 2.0 * std::exp(-0.5) * t * t * t, std::log(4.0), 1e-12);
}

TEST(Generator, ShapeAndCovariates) {
  SimConfig c;
  c.cluster_size = 7;
  Rng rng(1);
  const auto s = generate_sample(c, rng);
  EXPECT_EQ(s.data.size(), 140u);
  EXPECT_EQ(s.data.cluster_count(), 20u);
  EXPECT_EQ(s.frailty.size(), 20u);
  EXPECT_EQ(s.data.censoring_rate(), 0.0);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    const auto& x = s.data[i].covariates;
    EXPECT_GE(x[0], 0.0);
    EXPECT_LE(x[0], 1.0);
    EXPECT_GT(x[1], 0.0);
    EXPECT_TRUE(x[2] == 0.0 || x[2] == 1.0);
    EXPECT_NEAR(s.true_eta[i], x[0] - 2.0 * std::log(x[1]) + 0.5 * x[2], 1e-14);
  }
  c.frailty_var = 0.0;
  Rng rng2(1);
  for (double z : generate_sample(c, rng2).frailty) EXPECT_EQ(z, 1.0);
  c.clusters = 0;
  EXPECT_THROW(c.validate(), validation_error);
}

TEST(Generator, FrailtyMomentsAndWeibullMargin) {
  SimConfig c;
  c.clusters = 4000;
  c.cluster_size = 1;
  Rng rng(2);
  const auto s = generate_sample(c, rng);
  double m = 0.0, v = 0.0;
  for (double z : s.frailty) m += z;
  m /= 4000.0;
  for (double z : s.frailty) v += (z - m) * (z - m);
  v /= 3999.0;
  EXPECT_NEAR(m, 1.0, 0.05);
  EXPECT_NEAR(v, 0.5, 0.06);

  c.frailty_var = 0.0;
  c.beta_true = {0.0, 0.0, 0.0};
  Rng rng2(3);
  const auto w = generate_sample(c, rng2);
  std::vector<double> t;
  for (const auto& r : w.data.records()) t.push_back(r.time);
  const auto ks = ks_test(t, [&](double x) { return 1.0 - std::exp(-c.lambda * std::pow(x, c.alpha)); }, "weibull");
  EXPECT_GT(ks.p_value, 0.01);
}

TEST(Calibration, HitsTargetOnFreshPilot) {
  SimConfig c;
  for (double target : {0.2, 0.5, 0.8}) {
    Rng rng(10);
    c.censor_gamma = calibrate_censoring(c, target, 100000, rng);
    c.cluster_size = 2500;  // 50k fresh records
    Rng fresh(11);
    EXPECT_NEAR(generate_dataset(c, fresh).censoring_rate(), target, 0.02) << target;
    c.cluster_size = 40;
  }
  Rng rng(12);
  EXPECT_EQ(calibrate_censoring(c, 0.0, 1000, rng), 0.0);
}

TEST(Calibration, RateIncreasesWithGamma) {
  SimConfig c;
  c.cluster_size = 500;
  double prev = -1.0;
  for (double g : {0.01, 0.05, 0.2, 1.0}) {
    c.censor_gamma = g;
    Rng rng(13);
    const double r = generate_dataset(c, rng).censoring_rate();
    EXPECT_GT(r, prev);
    prev = r;
  }
}

namespace {

ExperimentGrid small_grid() {
  ExperimentGrid g;
  g.cluster_sizes = {5, 10};
  g.censor_targets = {0.0, 0.3};
  g.replicates = 6;
  g.pilot_size = 5000;
  return g;
}

std::string csv_of(const GridResult& r) {
  std::ostringstream out;
  write_grid_csv(r, out);
  return out.str();
}

}  // namespace

TEST(Grid, ParallelismDoesNotChangeOutput) {
  const auto g = small_grid();
  const auto a = run_grid(g, 1, 42);
  const auto b = run_grid(g, 8, 42);
  EXPECT_EQ(csv_of(a), csv_of(b));
  EXPECT_NE(csv_of(a), csv_of(run_grid(g, 1, 43)));
}

TEST(Grid, RowsAndHeader) {
  const auto g = small_grid();
  const auto r = run_grid(g, 2, 5);
  EXPECT_EQ(r.rows.size(), 2u * 2u * 2u * 7u);
  const auto csv = csv_of(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "cluster_size,censor_target,censor_gamma,achieved_censoring,model,test,replicates,failed,rejections,"
            "rejection_rate,mc_standard_error");
  const auto* row = find_row(r, 10, 0.3, SimModel::wrong_model, "Z-AOV-COV");
  ASSERT_NE(row, nullptr);
  EXPECT_EQ(row->replicates + row->failed, 6u);
  EXPECT_NEAR(row->rejection_rate, static_cast<double>(row->rejections) / row->replicates, 1e-15);
  EXPECT_NEAR(row->mc_standard_error, std::sqrt(row->rejection_rate * (1 - row->rejection_rate) / row->replicates),
              1e-15);
  EXPECT_GT(row->censor_gamma, 0.0);
  EXPECT_EQ(find_row(r, 10, 0.0, SimModel::true_model, "Z-SW")->censor_gamma, 0.0);
  EXPECT_EQ(find_row(r, 99, 0.0, SimModel::true_model, "Z-SW"), nullptr);
}

TEST(Grid, ReplicateReproducibleFromSeeds) {
  const auto g = small_grid();
  SimConfig cfg = g.base;
  cfg.cluster_size = 10;
  const auto seed = cell_replicate_seed(42, 10, 0.0, 3);
  const auto out = run_replicate(g, cfg, seed);
  Rng rng(seed);
  const auto data = generate_dataset(cfg, rng);
  const auto fit = fit_ppl(data, sim_model_spec(SimModel::wrong_model));
  TestOptions opt{g.k, g.grouping_covariate};
  const TestContext ctx(fit, data, opt);
  const auto z = z_residual(ctx.fitted(), data, z_draw_seed(seed, SimModel::wrong_model));
  EXPECT_EQ(ctx.run_on(TestMethod::z_aov_cov, z).p_value, out.p_values[1][6]);
  EXPECT_NE(z_draw_seed(seed, SimModel::true_model), z_draw_seed(seed, SimModel::wrong_model));
}

TEST(SimConfigJson, ParsesAndValidates) {
  const auto c = sim_config_from_json(json::parse(
      R"({"seed": 9, "replicates": 3, "cluster_sizes": [5], "censor_targets": [0.2], "models": ["wrong"],
          "tests": ["z-sw", "Z-AOV-COV"], "k": 4, "pilot_size": 1000, "parallelism": 2})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.parallelism, 2u);
  EXPECT_EQ(c.grid.replicates, 3u);
  EXPECT_EQ(c.grid.models, std::vector<SimModel>{SimModel::wrong_model});
  EXPECT_EQ(c.grid.tests, (std::vector<TestMethod>{TestMethod::z_sw, TestMethod::z_aov_cov}));
  EXPECT_EQ(c.grid.k, 4u);

  const auto full = sim_config_from_json(json::parse(R"({"profile": "full"})"));
  EXPECT_EQ(full.grid.cluster_sizes.size(), 10u);
  EXPECT_EQ(full.grid.censor_targets.size(), 4u);
  EXPECT_EQ(full.grid.replicates, 1000u);

  for (const char* bad : {R"({"profile": "huge"})", R"({"censor_targets": [1.0]})", R"({"models": ["maybe"]})",
                          R"({"replicates": 0})", R"({"beta": [1, 2]})", R"({"seed": "x"})", R"({"tests": ["z-ad"]})"})
    EXPECT_THROW(sim_config_from_json(json::parse(bad)), validation_error) << bad;
}
