#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "zresid/normal.hpp"
#include "zresid/parallel.hpp"
#include "zresid/rng.hpp"

using namespace zresid;

// Reference quantiles of the exact double inputs, computed with mpmath.
TEST(Normal, QuantileMatchesHighPrecisionReference) {
  const std::pair<double, double> ref[] = {
      {1e-300, -37.047096299361199237}, {1e-20, -9.2623400897984075796}, {1e-10, -6.3613409024040561991},
      {0.001, -3.0902323061678135354},  {0.025, -1.9599639845400542118}, {0.3, -0.52440051270804081597},
      {0.5, 0.0},                       {0.7, 0.52440051270804065631},   {0.975, 1.9599639845400538556},
      {0.999999, 4.7534243088170877657}};
  for (auto [p, q] : ref) EXPECT_NEAR(normal_quantile(p), q, 1e-14 * std::max(1.0, std::fabs(q))) << p;
}

TEST(Normal, QuantileEdges) {
  EXPECT_EQ(normal_quantile(0.0), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(normal_quantile(1.0), std::numeric_limits<double>::infinity());
  EXPECT_TRUE(std::isnan(normal_quantile(-0.1)));
  EXPECT_TRUE(std::isnan(normal_quantile(1.5)));
}

TEST(Normal, CdfInvertsQuantile) {
  for (double p = 0.0005; p < 1.0; p += 0.0123) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-15);
  EXPECT_NEAR(normal_sf(1.96), 0.024997895148220435, 1e-16);
  EXPECT_NEAR(normal_pdf(0.0), 0.3989422804014327, 1e-16);
}

TEST(Rng, DerivedSeedsAreDeterministicAndDistinct) {
  static_assert(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(7, {a, b}));
  EXPECT_EQ(seen.size(), 2500u);
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
}

TEST(Rng, CounterUniformIsOpenAndFlat) {
  double sum = 0.0;
  std::size_t below = 0;
  const std::size_t n = 200000;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = counter_uniform(99, i);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    below += u < 0.25;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.003);
  EXPECT_NEAR(static_cast<double>(below) / n, 0.25, 0.004);
  EXPECT_EQ(counter_uniform(5, 17), counter_uniform(5, 17));
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (unsigned workers : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) ASSERT_EQ(h.load(), 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(Parallel, RethrowsWorkerException) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 37) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Parallel, EnvironmentOverride) {
  ::setenv("ZRESID_THREADS", "3", 1);
  EXPECT_EQ(default_parallelism(), 3u);
  ::setenv("ZRESID_THREADS", "junk", 1);
  EXPECT_GE(default_parallelism(), 1u);
  ::unsetenv("ZRESID_THREADS");
}
