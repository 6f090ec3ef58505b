#include <doctest.h>

#include <cmath>
#include <vector>

#include "rerand/chisq.hpp"
#include "rerand/error.hpp"

using namespace rerand;

// Reference values below come from scipy.stats (chi2, ncx2).

TEST_CASE("central cdf closed forms") {
  CHECK(chisq_cdf(2, 2.0 * std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(chisq_cdf(1, 0.0) == 0.0);
  for (double x : {0.01, 0.5, 3.0, 40.0}) CHECK(chisq_cdf(2, x) == doctest::Approx(1.0 - std::exp(-x / 2)).epsilon(1e-13));
}

TEST_CASE("central cdf against reference") {
  CHECK(std::abs(chisq_cdf(50, 49.33) - 0.4998014988304629) < 1e-10);
  CHECK(std::abs(chisq_cdf(15, 1e-3) - 1.2441975921732908e-29) < 1e-10);
  CHECK(std::abs(chisq_cdf(250, 500.0) - 1.0) < 1e-10);
}

TEST_CASE("central quantile") {
  CHECK(std::abs(chisq_quantile(2, 1e-3) - (-2.0 * std::log(1.0 - 1e-3))) < 1e-10);
  CHECK(std::abs(chisq_quantile(2, 1e-4) - (-2.0 * std::log(1.0 - 1e-4))) < 1e-12);
  CHECK(chisq_quantile(1, 0.5) == doctest::Approx(0.454936423119572).epsilon(1e-10));
  CHECK(chisq_quantile(50, 1e-3) == doctest::Approx(24.67390527187726).epsilon(1e-10));
  CHECK(chisq_quantile(250, 1e-3) == doctest::Approx(186.55410374993096).epsilon(1e-10));
  CHECK(chisq_quantile(15, 0.999) == doctest::Approx(37.69729821835383).epsilon(1e-10));
  CHECK(chisq_quantile(1, 1e-4) == doctest::Approx(1.5707963350195693e-08).epsilon(1e-8));
}

TEST_CASE("cdf/quantile round trip") {
  for (int df : {1, 2, 15, 50, 250})
    for (double q : {1e-4, 1e-3, 0.5, 0.999}) {
      CAPTURE(df);
      CAPTURE(q);
      CHECK(std::abs(chisq_cdf(df, chisq_quantile(df, q)) - q) < 1e-8);
    }
}

TEST_CASE("noncentral cdf and quantile") {
  CHECK(noncentral_chisq_cdf(50, 10.0, 60.0) == doctest::Approx(0.5257117789457617).epsilon(1e-9));
  CHECK(noncentral_chisq_cdf(2, 0.5, 3.0) == doctest::Approx(0.695906030043514).epsilon(1e-9));
  CHECK(noncentral_chisq_quantile(50, 10.0, 1.0 / 239) == doctest::Approx(33.33741735686646).epsilon(1e-8));
  CHECK(noncentral_chisq_quantile(5, 7.5, 0.3) == doctest::Approx(8.601245111647009).epsilon(1e-8));
}

TEST_CASE("noncentral reduces to central at zero noncentrality") {
  for (int df : {1, 2, 50})
    for (double x : {0.1, 1.0, 30.0, 80.0}) CHECK(std::abs(noncentral_chisq_cdf(df, 0.0, x) - chisq_cdf(df, x)) < 1e-10);
  for (double q : {1e-3, 0.5}) CHECK(std::abs(noncentral_chisq_quantile(7, 0.0, q) - chisq_quantile(7, q)) < 1e-10);
}

TEST_CASE("noncentral quantile increases with noncentrality") {
  double previous = noncentral_chisq_quantile(10, 0.0, 0.05);
  for (double lambda : {0.5, 1.0, 4.0, 20.0}) {
    const double q = noncentral_chisq_quantile(10, lambda, 0.05);
    CHECK(q > previous);
    previous = q;
  }
}

TEST_CASE("threshold settings") {
  ThresholdSpec pa{AcceptanceProbability{1e-3}, 2};
  CHECK(pa.threshold() == doctest::Approx(0.002001000667167068).epsilon(1e-12));
  ThresholdSpec fixed{ExplicitThreshold{5.0}, 3};
  CHECK(fixed.threshold() == 5.0);
  CHECK_THROWS_AS((ThresholdSpec{AcceptanceProbability{1.5}, 2}.threshold()), Error);
  CHECK_THROWS_AS((ThresholdSpec{ExplicitThreshold{-1.0}, 2}.threshold()), Error);
}

TEST_CASE("sequential schedule") {
  SUBCASE("single stage matches the simple threshold") {
    SequentialThresholdSpec spec{{1000.0}, 4, {80}};
    const std::vector<double> prev{0.0};
    CHECK(sequential_thresholds(spec, prev)[0] == doctest::Approx(chisq_quantile(4, 1e-3)).epsilon(1e-12));
  }
  SUBCASE("two equal stages with a perfectly balanced first stage") {
    SequentialThresholdSpec spec{{239.0, 761.0}, 50, {100, 100}};
    const std::vector<double> prev{0.0, 0.0};
    const auto a = sequential_thresholds(spec, prev);
    CHECK(a[0] == doctest::Approx(chisq_quantile(50, 1.0 / 239)).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(12.591659283287749).epsilon(1e-9));
  }
  SUBCASE("realized first-stage imbalance enters as noncentrality") {
    SequentialThresholdSpec spec{{239.0, 239.0}, 50, {100, 100}};
    CHECK(sequential_stage_threshold(spec, 1, 10.0) ==
          doctest::Approx(0.5 * noncentral_chisq_quantile(50, 10.0, 1.0 / 239)).epsilon(1e-12));
  }
  SUBCASE("share of one leaves the stage unconstrained") {
    SequentialThresholdSpec spec{{1.0, 239.0}, 2, {10, 10}};
    CHECK(std::isinf(sequential_stage_threshold(spec, 0, 0.0)));
  }
  SUBCASE("p = 250 shares") {
    SequentialThresholdSpec spec{{264.0, 736.0}, 250, {250, 250}};
    const double a1 = sequential_stage_threshold(spec, 0, 0.0);
    CHECK(a1 == doctest::Approx(chisq_quantile(250, 1.0 / 264)).epsilon(1e-12));
    const double a2 = sequential_stage_threshold(spec, 1, a1);
    CHECK(a2 == doctest::Approx(0.5 * noncentral_chisq_quantile(250, a1, 1.0 / 736)).epsilon(1e-12));
  }
  SUBCASE("misaligned inputs") {
    SequentialThresholdSpec spec{{239.0}, 2, {10, 10}};
    CHECK_THROWS_AS(sequential_stage_threshold(spec, 0, 0.0), Error);
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(chisq_quantile(0, 0.5), Error);
  CHECK_THROWS_AS(chisq_quantile(3, 0.0), Error);
  CHECK_THROWS_AS(noncentral_chisq_cdf(3, -1.0, 2.0), Error);
}
