#include <gtest/gtest.h>

#include <random>

#include "zresid/gof_tests.hpp"
#include "zresid/sim.hpp"

using namespace zresid;

namespace {

std::vector<double> vec_a(std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 1; i <= n; ++i) v.push_back(std::sin(1.7 * i) * 2.0 + 0.01 * i);
  return v;
}

std::vector<double> vec_b(std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 1; i <= n; ++i) v.push_back(std::exp(1.5 * std::cos(0.9 * i)));
  return v;
}

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

struct Ref {
  char which;
  std::size_t n;
  double stat, p;
};

}  // namespace

// scipy.stats.shapiro
TEST(ShapiroWilk, MatchesReference) {
  const Ref refs[] = {{'a', 3, 0.9704087407959545, 0.6698216340632386},
                      {'b', 3, 0.8920018426397518, 0.36047708338129214},
                      {'a', 11, 0.8969578007967662, 0.16963732890839156},
                      {'b', 11, 0.789702162827091, 0.00688636553875987},
                      {'a', 30, 0.8972471324386686, 0.007197192512514864},
                      {'b', 30, 0.8118709022164962, 0.00010872753846160434},
                      {'a', 120, 0.9387008077060276, 3.50256985760883e-05},
                      {'b', 120, 0.8329486524208133, 2.451186126579999e-10}};
  for (const auto& r : refs) {
    const auto v = r.which == 'a' ? vec_a(r.n) : vec_b(r.n);
    const auto rep = sw_test(v);
    EXPECT_NEAR(rep.statistic, r.stat, 2e-6) << r.which << r.n;
    EXPECT_NEAR(rep.p_value, r.p, 1e-4 * std::max(r.p, 1e-3)) << r.which << r.n;
    EXPECT_EQ(rep.n, r.n);
  }
}

TEST(ShapiroWilk, NullCalibration) {
  Rng rng(2024);
  std::size_t rejected = 0;
  for (int s = 0; s < 2000; ++s) rejected += sw_test(normals(rng, 100)).p_value < 0.05;
  const double rate = rejected / 2000.0;
  EXPECT_GE(rate, 0.035);
  EXPECT_LE(rate, 0.065);
}

TEST(ShapiroWilk, NearPerfectAndSkewed) {
  std::vector<double> q;
  for (int i = 1; i <= 50; ++i) q.push_back(normal_quantile((i - 0.375) / 50.25));
  const auto perfect = sw_test(q);
  EXPECT_GT(perfect.statistic, 0.99);
  EXPECT_GT(perfect.p_value, 0.9);

  Rng rng(5);
  std::size_t rejected = 0;
  for (int s = 0; s < 100; ++s) {
    auto v = normals(rng, 100);
    for (auto& x : v) x = std::exp(x);
    rejected += sw_test(v).p_value < 0.05;
  }
  EXPECT_GE(rejected, 99u);
  EXPECT_THROW(sw_test(std::vector<double>{1.0, 2.0}), validation_error);
}

// scipy-based Royston approximation with Blom scores
TEST(ShapiroFrancia, MatchesReference) {
  const Ref refs[] = {{'a', 5, 0.9264718622393268, 0.6002217936319499},
                      {'b', 5, 0.7300387525773998, 0.02148208374110788},
                      {'a', 30, 0.9179109293088928, 0.025748603175528705},
                      {'b', 30, 0.8267592537032241, 0.00045745810696814316},
                      {'a', 120, 0.9459594747819465, 0.00024358661826230017},
                      {'b', 120, 0.8404544410168295, 7.885070285331641e-09}};
  for (const auto& r : refs) {
    const auto v = r.which == 'a' ? vec_a(r.n) : vec_b(r.n);
    const auto rep = sf_test(v);
    EXPECT_NEAR(rep.statistic, r.stat, 1e-12) << r.which << r.n;
    EXPECT_NEAR(rep.p_value, r.p, 1e-10 * std::max(r.p, 1e-3)) << r.which << r.n;
  }
}

TEST(CensoredShapiroFrancia, AllEventsEqualsUncensored) {
  const auto v = vec_a(40);
  const std::vector<int> st(40, 1);
  const auto c = sf_test_censored(v, st);
  const auto u = sf_test(v);
  EXPECT_NEAR(c.statistic, u.statistic, 1e-12);
  EXPECT_NEAR(c.p_value, u.p_value, 1e-10);
}

TEST(CensoredShapiroFrancia, CalibrationAndPower) {
  Rng rng(77);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::normal_distribution<double> cens(0.7, 1.0);
  std::size_t null_rej = 0, alt_rej = 0;
  const int seeds = 1000;
  for (int s = 0; s < seeds; ++s) {
    std::vector<double> v(200), w(200);
    std::vector<int> st(200), st2(200);
    for (std::size_t i = 0; i < 200; ++i) {
      const double x = nd(rng), c = cens(rng);
      v[i] = std::min(x, c);
      st[i] = x <= c;
      const double y = std::exp(nd(rng)), c2 = std::exp(cens(rng));
      w[i] = std::min(y, c2);
      st2[i] = y <= c2;
    }
    null_rej += sf_test_censored(v, st).p_value < 0.05;
    alt_rej += sf_test_censored(w, st2).p_value < 0.05;
  }
  EXPECT_GE(null_rej / double(seeds), 0.03);
  EXPECT_LE(null_rej / double(seeds), 0.08);
  EXPECT_GE(alt_rej / double(seeds), 0.8);
}

TEST(KolmogorovSmirnov, MatchesReference) {
  const std::pair<std::size_t, std::pair<double, double>> refs[] = {
      {10, {0.31151181762938596, 0.2863301280315064}},
      {30, {0.24954504936266086, 0.04768061920371089}},
      {120, {0.30949663770109237, 2.074743664587279e-10}}};
  for (const auto& [n, dp] : refs) {
    const auto rep = ks_test_normal(vec_a(n));
    EXPECT_NEAR(rep.statistic, dp.first, 1e-14) << n;
    EXPECT_NEAR(rep.p_value, dp.second, 1e-10 * std::max(dp.second, 1e-3)) << n;
  }
  const std::pair<double, double> sf[] = {{0.3, 0.9999906941986655},
                                          {0.5, 0.9639452436648751},
                                          {1.0, 0.26999967167735456},
                                          {1.36, 0.049485876755377876},
                                          {2.0, 0.0006709252557796953}};
  for (auto [x, p] : sf) EXPECT_NEAR(kolmogorov_sf(x), p, 1e-13) << x;
}

TEST(KolmogorovSmirnov, PlottingPositionsAndSinglePoint) {
  std::vector<double> v;
  for (int i = 1; i <= 10; ++i) v.push_back(normal_quantile((i - 0.5) / 10.0));
  EXPECT_NEAR(ks_test_normal(v).statistic, 0.05, 1e-12);
  EXPECT_NEAR(ks_test_normal(std::vector<double>{0.0}).statistic, 0.5, 1e-15);
}

TEST(KolmogorovSmirnov, AsymptoticPValueIsConservative) {
  Rng rng(31);
  std::size_t rejected = 0;
  for (int s = 0; s < 2000; ++s) rejected += ks_test_normal(normals(rng, 20)).p_value < 0.05;
  EXPECT_LE(rejected / 2000.0, 0.05);
}

// scipy.stats.f_oneway
TEST(Anova, MatchesReference) {
  const std::vector<double> r{-1.0, 1.0, 1.0, 3.0};
  const std::vector<double> g{0.0, 0.0, 1.0, 1.0};
  const auto two = anova_homogeneity(r, g, 2);
  EXPECT_NEAR(two.statistic, 2.0, 1e-12);
  EXPECT_NEAR(two.p_value, 0.2928932188134525, 1e-12);

  const auto rep = anova_homogeneity(vec_a(30), vec_b(30), 4);
  ASSERT_TRUE(rep.grouping);
  EXPECT_EQ(rep.grouping->counts, (std::vector<std::size_t>{17, 1, 8, 4}));
  EXPECT_EQ(rep.grouping->nonempty, 4u);
  EXPECT_NEAR(rep.statistic, 2.713594459598672, 1e-10);
  EXPECT_NEAR(rep.p_value, 0.06540201067310096, 1e-10);
}

TEST(Anova, BinsAreRightClosedAndEmptyOnesDropped) {
  // edges 0, 1, 2, 3: the value 1 belongs to the first bin
  const std::vector<double> g{0.0, 1.0, 3.0, 3.0, 0.5, 2.9};
  const std::vector<double> r{0.1, 0.2, 1.0, 1.2, -0.3, 0.9};
  const auto rep = anova_homogeneity(r, g, 3);
  EXPECT_EQ(rep.grouping->counts, (std::vector<std::size_t>{3, 0, 3}));
  EXPECT_EQ(rep.grouping->nonempty, 2u);
  // identical to a two-group test on the same split
  const std::vector<double> two_g{0, 0, 1, 1, 0, 1};
  const auto ref = anova_homogeneity(r, two_g, 2);
  EXPECT_NEAR(rep.statistic, ref.statistic, 1e-12);
  EXPECT_NEAR(rep.p_value, ref.p_value, 1e-12);
}

TEST(KmChf, HandValues) {
  const std::vector<double> v{3.0, 1.0, 2.0};
  const std::vector<int> st{1, 1, 1};
  const auto pts = km_chf(v, st);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_NEAR(pts[0].survival, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(pts[1].survival, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(pts[2].survival, 0.0);
  EXPECT_TRUE(std::isinf(pts[2].cumulative_hazard));
  EXPECT_NEAR(pts[0].cumulative_hazard, std::log(1.5), 1e-15);

  const auto one = km_chf(std::vector<double>{0.5, 1.0, 2.0}, std::vector<int>{0, 1, 0});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].value, 1.0);
  EXPECT_NEAR(one[0].survival, 0.5, 1e-15);
  EXPECT_THROW(km_chf(std::vector<double>{1.0}, std::vector<int>{0}), validation_error);
}

TEST(KmChf, ExponentialFollowsDiagonal) {
  Rng rng(4);
  std::exponential_distribution<double> e(1.0), c(0.3);
  std::vector<double> v;
  std::vector<int> st;
  for (int i = 0; i < 5000; ++i) {
    const double x = e(rng), y = c(rng);
    v.push_back(std::min(x, y));
    st.push_back(x <= y);
  }
  for (const auto& p : km_chf(v, st))
    if (p.value < 2.0) EXPECT_LT(std::fabs(p.cumulative_hazard - p.value), 0.08) << p.value;
}

TEST(Pmin, Examples) {
  EXPECT_NEAR(pmin(std::vector<double>{0.01, 0.5, 0.6, 0.7}), 0.04, 1e-15);
  EXPECT_NEAR(pmin(std::vector<double>{0.01, 0.5, 0.9}), 0.03, 1e-15);
  EXPECT_NEAR(pmin(std::vector<double>{0.2, 0.2, 0.2, 0.2}), 0.2, 1e-15);
  EXPECT_EQ(pmin(std::vector<double>{0.37}), 0.37);
  EXPECT_EQ(pmin(std::vector<double>{0.9, 0.95}), 0.95);
  EXPECT_THROW(pmin(std::vector<double>{}), validation_error);
  EXPECT_THROW(pmin(std::vector<double>{1.2}), validation_error);
}

TEST(Pmin, BoundsHoldOnRandomInputs) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> p(1 + rep % 40);
    for (auto& x : p) x = std::pow(u(rng), 1 + rep % 3);
    const double m = pmin(p);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    EXPECT_LE(m, *hi);
    EXPECT_LE(m, p.size() * *lo + 1e-15);
    EXPECT_GE(m, *lo);
  }
}

namespace {

struct Fitted {
  SurvivalDataset data;
  FrailtyFit fit;
};

Fitted fitted_sample(std::uint64_t seed, std::size_t n_i, double gamma) {
  SimConfig c;
  c.cluster_size = n_i;
  c.censor_gamma = gamma;
  Rng rng(seed);
  auto data = generate_dataset(c, rng);
  auto fit = fit_ppl(data, sim_model_spec(SimModel::true_model));
  return {std::move(data), std::move(fit)};
}

}  // namespace

TEST(ReplicateTests, DeterministicAcrossWorkers) {
  const auto s = fitted_sample(3, 20, 0.3);
  TestOptions opt;
  opt.covariate = parse_term("x2:log");
  const std::vector<TestMethod> all(std::begin(kAllTestMethods), std::end(kAllTestMethods));
  const auto one = replicate_tests(s.fit, s.data, all, 25, 99, opt, 1);
  const auto many = replicate_tests(s.fit, s.data, all, 25, 99, opt, 4);
  ASSERT_EQ(one.size(), all.size());
  for (std::size_t t = 0; t < all.size(); ++t) {
    EXPECT_EQ(one[t].p_values, many[t].p_values) << one[t].test_name;
    EXPECT_EQ(one[t].p_min, many[t].p_min);
    EXPECT_EQ(one[t].p_values.size(), 25u);
    if (!is_randomized(all[t])) {
      EXPECT_TRUE(std::all_of(one[t].p_values.begin(), one[t].p_values.end(),
                              [&](double p) { return p == one[t].p_values[0]; }));
    } else {
      EXPECT_NE(one[t].p_values.front(), one[t].p_values.back()) << one[t].test_name;
    }
  }
  EXPECT_EQ(one[6].covariate_label, std::optional<std::string>{"log(x2)"});
  // replicate r equals a single run with its own seed
  const TestContext ctx(s.fit, s.data, opt);
  EXPECT_EQ(ctx.run(TestMethod::z_aov_cov, replicate_seed(99, 7)).p_value, one[6].p_values[7]);
}

TEST(ReplicateTests, ParseAndRequireCovariate) {
  EXPECT_EQ(parse_test_method("Z-AOV-COV"), TestMethod::z_aov_cov);
  EXPECT_EQ(parse_test_method("dev-sw"), TestMethod::dev_sw);
  EXPECT_THROW(parse_test_method("z-ad"), validation_error);
  const auto s = fitted_sample(4, 10, 0.3);
  const TestContext ctx(s.fit, s.data);
  EXPECT_THROW(ctx.run(TestMethod::z_aov_cov, 1), validation_error);
  TestOptions opt;
  opt.covariate = parse_term("nope");
  EXPECT_THROW(TestContext(s.fit, s.data, opt), validation_error);
}

TEST(ReplicateTests, PminUnderTrueModelRarelySmall) {
  std::size_t large = 0;
  const int outer = 100;
  for (int s = 0; s < outer; ++s) {
    const auto f = fitted_sample(1000 + s, 20, 0.3);
    const TestMethod lp[] = {TestMethod::z_aov_lp};
    const auto rep = replicate_tests(f.fit, f.data, lp, 100, 500 + s);
    large += rep[0].p_min > 0.25;
  }
  EXPECT_GE(large, static_cast<std::size_t>(0.9 * outer));
}
