#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace fes;

TEST(MeanCi, Examples) {
  const std::vector<double> constant(10, 0.7);
  EXPECT_EQ(mean_ci95(constant).halfwidth, 0.0);
  const std::vector<double> zero_one{0.0, 1.0};
  const auto ci = mean_ci95(zero_one);
  EXPECT_DOUBLE_EQ(ci.mean, 0.5);
  EXPECT_NEAR(sample_std(zero_one), 0.7071068, 1e-7);
  EXPECT_NEAR(ci.halfwidth, 1.96 * std::sqrt(0.5) / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(ci.halfwidth, 0.980, 1e-3);
  const std::vector<double> one{0.3};
  EXPECT_THROW(mean_ci95(one), Error);
}

TEST(MeanCi, HalfwidthShrinksWithReplication) {
  const std::vector<double> base{0.2, 0.5, 0.9, 0.4};
  std::vector<double> rep;
  for (int r = 0; r < 16; ++r) rep.insert(rep.end(), base.begin(), base.end());
  // Replication changes the ddof-1 std slightly; correct for it exactly.
  const double s4 = sample_std(base), s64 = sample_std(rep);
  EXPECT_NEAR(mean_ci95(rep).halfwidth / mean_ci95(base).halfwidth, (s64 / s4) / 4.0, 1e-12);
}

TEST(IncompleteBeta, AgreesWithBoost) {
  for (double df : {1.0, 2.0, 4.0, 9.0, 30.0, 200.0})
    for (double t : {0.0, 0.1, 0.7, 1.5, 2.2, 4.0, 12.0}) {
      boost::math::students_t dist(df);
      const double ref = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
      EXPECT_NEAR(student_t_two_sided_p(t, df), ref, 1e-12) << df << " " << t;
    }
}

TEST(PairedTTest, QuadratureOracle) {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{1.1, 1.9, 3.2, 3.8, 5.1};
  const auto r = paired_t_test(a, b);
  std::vector<double> d(5);
  for (int i = 0; i < 5; ++i) d[i] = a[i] - b[i];
  const double t = mean_of(d) / (sample_std(d) / std::sqrt(5.0));
  EXPECT_NEAR(r.t, t, 1e-12);
  EXPECT_NEAR(r.p, oracle::t_two_sided_p(t, 4), 1e-6);
  EXPECT_FALSE(r.degenerate);
}

TEST(PairedTTest, DegenerateCases) {
  const std::vector<double> ones{1, 1, 1, 1}, zeros{0, 0, 0, 0};
  auto r = paired_t_test(ones, zeros);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 0.0);
  EXPECT_TRUE(std::isinf(r.t));

  const std::vector<double> a{0.5, 0.6, 0.7}, b{0.4, 0.5, 0.6};
  r = paired_t_test(a, b);
  EXPECT_NEAR(r.mean_difference, 0.1, 1e-12);
  // Exactly representable differences give sd == 0.
  const std::vector<double> c{0.25, 0.5, 0.75}, e{0.125, 0.375, 0.625};
  r = paired_t_test(c, e);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 0.0);

  r = paired_t_test(a, a);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_EQ(r.t, 0.0);
}

TEST(PairedTTest, AntisymmetryAndErrors) {
  Rng rng(4);
  std::vector<double> a(12), b(12);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : b) v = rng.uniform();
  const auto ab = paired_t_test(a, b), ba = paired_t_test(b, a);
  EXPECT_EQ(ab.t, -ba.t);
  EXPECT_EQ(ab.p, ba.p);
  const std::vector<double> shorter(11, 0.0);
  EXPECT_EQ(fes::testing::error_kind_of([&] { paired_t_test(a, shorter); }), ErrorKind::DimMismatch);
}

TEST(ChiSquare, AgreesWithBoost) {
  for (double df : {1.0, 2.0, 3.0, 7.0, 15.0})
    for (double x : {0.0, 0.3, 1.0, 4.0, 11.0, 40.0}) {
      boost::math::chi_squared dist(df);
      EXPECT_NEAR(chi_square_upper_p(x, df), boost::math::cdf(boost::math::complement(dist, x)), 1e-12);
    }
}

TEST(Ranks, AverageTies) {
  const std::vector<double> row{0.5, 0.9, 0.5, 0.1};
  EXPECT_EQ(average_ranks(row), (std::vector<double>{2.5, 1.0, 2.5, 4.0}));
}

TEST(Friedman, IdenticalMethods) {
  Matrix acc(6, 2);
  Rng rng(5);
  for (std::size_t r = 0; r < 6; ++r) acc(r, 0) = acc(r, 1) = rng.uniform();
  const auto f = friedman_nemenyi(acc);
  EXPECT_EQ(f.mean_ranks, (std::vector<double>{1.5, 1.5}));
  EXPECT_EQ(f.statistic, 0.0);
  EXPECT_EQ(f.p, 1.0);
}

TEST(Friedman, DominantMethodRanksFirst) {
  Matrix acc(10, 3);
  Rng rng(6);
  for (std::size_t r = 0; r < 10; ++r) {
    acc(r, 0) = 0.3 * rng.uniform();
    acc(r, 1) = 0.9 + 0.1 * rng.uniform();
    acc(r, 2) = 0.5 * rng.uniform();
  }
  const auto f = friedman_nemenyi(acc);
  EXPECT_EQ(f.mean_ranks[1], 1.0);
  EXPECT_LT(f.p, 0.01);
}

TEST(Friedman, StatisticMatchesDefinition) {
  Rng rng(7);
  Matrix acc(25, 5);
  for (auto& v : acc.values()) v = std::round(rng.uniform() * 10) / 10;  // plenty of ties
  const auto f = friedman_nemenyi(acc);
  double sum_sq = 0.0;
  for (double m : f.mean_ranks) sum_sq += m * m;
  const double expect = 12.0 * 25 / (5 * 6) * (sum_sq - 5 * 36 / 4.0);
  EXPECT_NEAR(f.statistic, expect, 1e-10);
  boost::math::chi_squared dist(4);
  EXPECT_NEAR(f.p, boost::math::cdf(boost::math::complement(dist, expect)), 1e-12);
}

TEST(Nemenyi, CriticalDifferencePlugIn) {
  EXPECT_NEAR(*nemenyi_cd(4, 4800), 2.569 * std::sqrt(20.0 / 28800.0), 1e-12);
  EXPECT_NEAR(*nemenyi_cd(4, 4800), 0.0677, 1e-4);
  EXPECT_FALSE(nemenyi_cd(11, 100).has_value());
}

TEST(Nemenyi, TableMatchesStudentizedRange) {
  // The published three-decimal table is off by up to 7e-4 in places (k=3
  // and k=7), so this checks the table to within 1e-3 rather than 5e-4.
  for (int k = 2; k <= 10; ++k) EXPECT_NEAR(*nemenyi_q05(k), oracle::nemenyi_q(k), 1e-3) << k;
}

TEST(Nemenyi, Cliques) {
  // Two tied leaders, two clearly separated trailers.
  Rng rng(8);
  Matrix big(200, 4);
  for (std::size_t r = 0; r < 200; ++r) {
    big(r, 0) = 0.8 + 0.05 * rng.normal();
    big(r, 1) = 0.8 + 0.05 * rng.normal();
    big(r, 2) = 0.5 + 0.05 * rng.normal();
    big(r, 3) = 0.2 + 0.05 * rng.normal();
  }
  const auto g = friedman_nemenyi(big);
  ASSERT_EQ(g.cliques.size(), 1u);
  auto clique = g.cliques[0];
  std::sort(clique.begin(), clique.end());
  EXPECT_EQ(clique, (std::vector<std::size_t>{0, 1}));
}

TEST(Friedman, PermutationInvariance) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.uniform_int(0, 20), k = 2 + rng.uniform_int(0, 6);
    Matrix acc(n, k);
    for (auto& v : acc.values()) v = std::round(rng.uniform() * 8) / 8;
    const auto base = friedman_nemenyi(acc);

    double total = 0;
    for (double m : base.mean_ranks) total += m;
    EXPECT_NEAR(total, k * (k + 1) / 2.0, 1e-12);
    for (std::size_t r = 0; r < n; ++r) {
      const auto ranks = average_ranks(acc.row(r));
      EXPECT_NEAR(std::accumulate(ranks.begin(), ranks.end(), 0.0), k * (k + 1) / 2.0, 1e-12);
    }

    std::vector<std::size_t> cols(k), rows(n);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(cols));
    rng.shuffle(std::span<std::size_t>(rows));
    Matrix perm(n, k);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) perm(r, c) = acc(rows[r], cols[c]);
    const auto p = friedman_nemenyi(perm);
    for (std::size_t c = 0; c < k; ++c) EXPECT_NEAR(p.mean_ranks[c], base.mean_ranks[cols[c]], 1e-12);
    EXPECT_NEAR(p.statistic, base.statistic, 1e-9);
  }
}

TEST(Friedman, DegenerateInputs) {
  EXPECT_THROW(friedman_nemenyi(Matrix(5, 1)), Error);
  EXPECT_THROW(friedman_nemenyi(Matrix(1, 3)), Error);
}
