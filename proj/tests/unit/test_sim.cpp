#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <cmath>
#include <map>

#include "debiatt/error.hpp"
#include "debiatt/sim.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace debiatt;
using testing::vec;

namespace {

SimParams noiseless_1cov() {
  SimParams p = preset("paper-1cov");
  p.sigma = Matrix::Zero(1, 1);
  return p;
}

double chi_square_p(const std::vector<int>& counts, double mu, int draws) {
  // bins 0..hi-1 plus a tail bin; every expected count >= 5
  boost::math::poisson_distribution<> pois(mu);
  int hi = 0;
  while (draws * boost::math::pdf(pois, hi) >= 5.0 || hi < mu) ++hi;
  std::vector<double> observed(static_cast<std::size_t>(hi) + 1, 0.0);
  for (int c : counts) observed[static_cast<std::size_t>(std::min(c, hi))] += 1.0;
  double stat = 0.0;
  for (int b = 0; b <= hi; ++b) {
    const double pr = b < hi ? boost::math::pdf(pois, b) : boost::math::cdf(complement(pois, hi - 1));
    const double e = draws * pr;
    stat += (observed[static_cast<std::size_t>(b)] - e) * (observed[static_cast<std::size_t>(b)] - e) / e;
  }
  boost::math::chi_squared_distribution<> chi(hi);  // hi + 1 bins, no fitted parameters
  return boost::math::cdf(complement(chi, stat));
}

}  // namespace

TEST_CASE("presets validate and carry the one-covariate values") {
  for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
  const SimParams p = preset("paper-1cov");
  CHECK(p.d_x == 1);
  CHECK(p.kappa_d0(0) == -0.25);
  CHECK(p.kappa_d1(0) == 0.25);
  CHECK(p.delta_x(0) == -0.25);
  CHECK(p.lambda(0) == 0.12);
  CHECK(p.min_x(0) == 0.0);
  CHECK(p.max_x(0) == 10.0);
  CHECK(p.sigma(0, 0) == 0.4);
  CHECK(p.m == 1.5);
  CHECK(p.delta0 == 30.0);
  CHECK(preset("paper-3cov").d_x == 3);
  CHECK(preset("paper-6cov").d_x == 6);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("overrides and scenario text") {
  SimParams p = preset("paper-3cov");
  apply_override(p, "sigma", "1.2");
  CHECK(p.sigma.isApprox(1.2 * Matrix::Identity(3, 3)));
  apply_override(p, "kappa_d0", "-0.1");
  CHECK(p.kappa_d0 == Vector::Constant(3, -0.1));
  apply_override(p, "n", "50");
  CHECK(p.n == 50);
  CHECK_THROWS_AS(apply_override(p, "bogus", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(p, "n", "fifty"), ConfigError);
  CHECK_THROWS_AS(apply_override(p, "n", "0"), ConfigError);

  const SimParams q = parse_scenario("# comment\npreset = paper-1cov\nsigma = 0.8\nseed=9\n");
  CHECK(q.sigma(0, 0) == 0.8);
  CHECK(q.seed == 9);
  CHECK_THROWS_AS(parse_scenario("sigma 0.8\n"), ConfigError);

  // describe() round-trips through overrides
  SimParams r = preset("paper-1cov");
  for (const auto& [k, v] : describe(q)) apply_override(r, k, v);
  CHECK(describe(r) == describe(q));
}

TEST_CASE("baseline draws") {
  SimParams p = preset("paper-1cov");
  Rng rng(11);
  const int n = 100000;
  std::vector<double> z1, z3;
  for (int i = 0; i < n; ++i) {
    const Vector z = draw_baseline(p, rng);
    REQUIRE(z.size() == 3);
    z1.push_back(z(0));
    z3.push_back(z(2));
    CHECK((z(1) == 0.0 || z(1) == 1.0));
  }
  CHECK(std::abs(testing::sample_mean(z1) + 15.0) < 0.05);
  CHECK(std::abs(testing::sample_mean(z3) - 0.1) < 0.01);

  p.p_z2 = 0.0;
  for (int i = 0; i < 1000; ++i) CHECK(draw_baseline(p, rng)(1) == 0.0);
}

TEST_CASE("covariate steps") {
  SimParams p = noiseless_1cov();
  const NoiseModel noise(p.sigma);
  Rng rng(3);

  SUBCASE("untreated contraction") {
    const auto st = step_covariates(vec({10}), vec({10}), false, p, noise, rng);
    CHECK(st.x_next(0) == doctest::Approx(-2.5));
    CHECK(st.x0_next(0) == st.x_next(0));
  }
  SUBCASE("treated mean reversion has a fixed point at the target") {
    const double target = std::sqrt(1000.0);
    const auto st = step_covariates(vec({target}), vec({3}), true, p, noise, rng);
    CHECK(st.x_next(0) == doctest::Approx(target).epsilon(1e-14));
    CHECK(st.x0_next(0) == doctest::Approx(-0.75));
  }
  SUBCASE("noise variance") {
    p.sigma = Matrix::Constant(1, 1, 0.4);
    const NoiseModel nm(p.sigma);
    std::vector<double> untreated, treated;
    for (int i = 0; i < 100000; ++i) {
      untreated.push_back(step_covariates(vec({4}), vec({4}), false, p, nm, rng).x_next(0) + 1.0);
      treated.push_back(step_covariates(vec({4}), vec({4}), true, p, nm, rng).x0_next(0) + 1.0);
    }
    CHECK(std::abs(testing::sample_var(untreated) / 0.4 - 1.0) < 0.02);
    CHECK(std::abs(testing::sample_mean(untreated)) < 0.01);
    CHECK(std::abs(testing::sample_var(treated) / 0.4 - 1.0) < 0.02);
  }
  SUBCASE("correlated noise reproduces a full covariance") {
    Matrix s(2, 2);
    s << 1.0, 0.6, 0.6, 0.5;
    const NoiseModel nm(s);
    Matrix acc = Matrix::Zero(2, 2);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const Vector e = nm.draw(rng);
      acc += e * e.transpose();
    }
    CHECK(((acc / n) - s).norm() / s.norm() < 0.02);
  }
}

TEST_CASE("treatment probability") {
  SimParams p = preset("paper-1cov");
  CHECK(treatment_probability(vec({0}), p) == doctest::Approx(0.18));
  Rng rng(21);
  int hits = 0;
  for (int i = 0; i < 100000; ++i) hits += draw_treatment(vec({0}), p, rng) ? 1 : 0;
  CHECK(std::abs(hits / 1e5 - 0.18) < 0.005);

  CHECK(treatment_probability(vec({100}), p) == 1.0);
  for (int i = 0; i < 100; ++i) CHECK(draw_treatment(vec({100}), p, rng));

  p.m = 0.0;
  CHECK(treatment_probability(vec({5}), p) == 0.0);
  for (int i = 0; i < 100; ++i) CHECK_FALSE(draw_treatment(vec({5}), p, rng));
}

TEST_CASE("thinning sampler") {
  Rng rng(99);
  SUBCASE("zero intensity") {
    for (int i = 0; i < 1000; ++i) CHECK(thinning_sample([](double) { return 0.0; }, 0, 1, 5, rng) == 0);
  }
  SUBCASE("constant rate 30: Poisson moments") {
    std::vector<double> c;
    for (int i = 0; i < 100000; ++i) c.push_back(thinning_sample([](double) { return 30.0; }, 2, 3, 45, rng));
    CHECK(std::abs(testing::sample_mean(c) - 30.0) < 0.2);
    CHECK(std::abs(testing::sample_var(c) / 30.0 - 1.0) < 0.03);
  }
  SUBCASE("constant rate 5 under bound 20: chi-square against Poisson(5) is calibrated") {
    // a correct sampler rejects at level 0.01 in about 1% of independent
    // streams; more than 2 of 20 has probability ~0.001
    int rejections = 0;
    for (std::uint64_t stream = 0; stream < 20; ++stream) {
      Rng r = make_stream(99, "chi-square", stream);
      std::vector<int> c;
      for (int i = 0; i < 100000; ++i) c.push_back(thinning_sample([](double) { return 5.0; }, 0, 1, 20, r));
      if (chi_square_p(c, 5.0, 100000) < 0.01) ++rejections;
    }
    CHECK(rejections <= 2);
  }
  SUBCASE("time-varying rate: mean equals the integral and times are ordered in range") {
    std::vector<double> c;
    std::vector<double> times;
    for (int i = 0; i < 20000; ++i) {
      times.clear();
      c.push_back(thinning_sample([](double t) { return 4.0 * t; }, 1, 3, 12, rng, &times));
      for (std::size_t j = 0; j < times.size(); ++j) {
        CHECK(times[j] > 1.0);
        CHECK(times[j] <= 3.0);
        if (j > 0) CHECK(times[j] >= times[j - 1]);
      }
    }
    CHECK(std::abs(testing::sample_mean(c) - 16.0) < 0.15);
  }
  SUBCASE("bound violation is detected") {
    CHECK_THROWS_AS(
        [&] {
          for (int i = 0; i < 100; ++i) thinning_sample([](double) { return 10.0; }, 0, 1, 5, rng);
        }(),
        NumericalError);
  }
}

TEST_CASE("intensity spec") {
  IntensitySpec s{-0.01, 30.0, vec({0.1, 0.02, 0.01}), vec({-0.25}), 1.0, vec({-15, 1, 0}), vec({4})};
  CHECK(s.raw() == doctest::Approx(30 - 0.01 - 1.5 + 0.02 - 1.0));
  s.delta0 = -100.0;
  CHECK(s(0.0) == 0.0);
}

TEST_CASE("cohort simulation") {
  SimParams p = preset("paper-1cov");
  p.n = 300;
  p.seed = 17;
  const PanelDataset a = simulate_cohort(p);
  const PanelDataset b = simulate_cohort(p);

  SUBCASE("deterministic for a seed") {
    REQUIRE(a.n() == b.n());
    for (int i = 0; i < a.n(); ++i) {
      CHECK(a.subjects[i].covariates == b.subjects[i].covariates);
      CHECK(a.subjects[i].event_counts == b.subjects[i].event_counts);
      CHECK(a.subjects[i].treatment_start == b.subjects[i].treatment_start);
    }
  }
  SUBCASE("structure") {
    CHECK(a.grid.intervals() == 11);
    CHECK(validate_panel(a).ok());
    for (const auto& s : a.subjects) {
      CHECK(s.follow_up_end == 11);
      CHECK(s.covariates(0, 0) >= 0.0);
      CHECK(s.covariates(0, 0) <= 10.0);
      if (s.treatment_start) {
        CHECK(*s.treatment_start >= 1);
        // counterfactual equals observed up to and including the anchor
        for (int k = 0; k < *s.treatment_start; ++k) {
          CHECK((*s.true_counterfactuals)(k, 0) == s.covariates(k, 0));
        }
      } else {
        CHECK(*s.true_counterfactuals == s.covariates);
      }
    }
  }
  SUBCASE("no treatment when m = 0") {
    p.m = 0.0;
    const PanelDataset c = simulate_cohort(p);
    for (const auto& s : c.subjects) {
      CHECK_FALSE(s.treatment_start.has_value());
      CHECK(*s.true_counterfactuals == s.covariates);
    }
  }
  SUBCASE("pure baseline intensity gives Poisson(30) counts") {
    p.delta = 0.0;
    p.delta_z = Vector::Zero(3);
    p.delta_x = Vector::Zero(1);
    p.n = 2000;
    std::vector<double> counts;
    for (int r = 0; r < 5; ++r) {
      p.seed = 100 + r;
      for (const auto& s : simulate_cohort(p).subjects) {
        for (int c : s.event_counts) counts.push_back(c);
      }
    }
    CHECK(std::abs(testing::sample_mean(counts) - 30.0) < 0.1);
  }
}

TEST_CASE("treated fraction fixture (one covariate, 100 replicates of 1000)") {
  // Cumulative fraction treated by grid point t (t = 1..11), pinned from the
  // first validated run; tolerance is ~5 Monte-Carlo SDs of the pooled mean.
  const std::vector<double> pinned = {0.0,    0.3469, 0.4494, 0.5515, 0.6326, 0.6977,
                                      0.7523, 0.7973, 0.8349, 0.8646, 0.8892, 0.9091};
  SimParams p = preset("paper-1cov");
  std::vector<double> frac(12, 0.0);
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_stream(2024, "fixture", static_cast<std::uint64_t>(r));
    for (const auto& s : simulate_cohort(p, rng).subjects) {
      if (!s.treatment_start) continue;
      for (int t = *s.treatment_start; t <= 11; ++t) frac[static_cast<std::size_t>(t)] += 1.0;
    }
  }
  for (int t = 0; t <= 11; ++t) {
    const double f = frac[static_cast<std::size_t>(t)] / (reps * p.n);
    CAPTURE(t);
    CAPTURE(f);
    CHECK(std::abs(f - pinned[static_cast<std::size_t>(t)]) < 0.008);
  }
  CHECK(frac[11] > 0.0);
  // first step in closed form: E[m * lambda * exp(lambda * U(0, 10))]
  const double first = 1.5 * 0.12 * (std::exp(1.2) - 1.0) / 1.2;
  CHECK(std::abs(frac[1] / (reps * p.n) - first) < 0.006);
}
