#include <cmath>
#include <sstream>

#include "debiatt/error.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/rng.hpp"
#include "debiatt/sim.hpp"
#include "debiatt/var_model.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace debiatt;
using testing::vec;

namespace {

PanelDataset random_panel(std::uint64_t seed, int n, int d_z, int d_x, bool with_x0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_int_distribution<int> tau_d(1, 6), cnt(0, 9);
  PanelDataset p;
  p.grid = TimeGrid::unit(6);
  p.d_z = d_z;
  p.d_x = d_x;
  for (int i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = 100 + 7 * i;
    s.follow_up_end = tau_d(rng);
    s.baseline = Vector(d_z);
    for (int j = 0; j < d_z; ++j) s.baseline(j) = g(rng) * 1e-3 + std::ldexp(g(rng), -30);
    s.covariates = Matrix(s.follow_up_end + 1, d_x);
    for (Eigen::Index c = 0; c < s.covariates.size(); ++c) s.covariates.data()[c] = g(rng) / 7.0;
    std::uniform_int_distribution<int> start(0, s.follow_up_end + 2);
    const int st = start(rng);
    if (st <= s.follow_up_end) s.treatment_start = st;
    for (int k = 0; k < s.follow_up_end; ++k) s.event_counts.push_back(cnt(rng));
    if (with_x0) {
      Matrix x0 = s.covariates;
      if (s.treatment_start) {
        for (int k = *s.treatment_start; k <= s.follow_up_end; ++k) {
          for (int j = 0; j < d_x; ++j) x0(k, j) = std::exp(g(rng));
        }
      }
      s.true_counterfactuals = x0;
    }
    p.subjects.push_back(std::move(s));
  }
  return p;
}

}  // namespace

TEST_CASE("minimal CSV: one untreated subject, two intervals, no baseline covariates") {
  std::istringstream in("id,t_index,D,dN,X1\n1,0,0,2,0.5\n1,1,0,1,0.25\n1,2,0,0,1\n");
  const PanelDataset p = read_panel(in);
  CHECK(p.n() == 1);
  CHECK(p.d_z == 0);
  CHECK(p.d_x == 1);
  CHECK(p.grid.intervals() == 2);
  const auto& s = p.subjects[0];
  CHECK_FALSE(s.treatment_start.has_value());
  CHECK(s.follow_up_end == 2);
  CHECK(s.event_counts == std::vector<int>{2, 1});
  CHECK(s.covariates(1, 0) == 0.25);
  CHECK_FALSE(p.has_true_counterfactuals());
}

TEST_CASE("treatment switching off is rejected with the subject id") {
  std::istringstream in(
      "id,t_index,D,dN,X1\n"
      "3,0,0,0,1\n3,1,0,0,1\n3,2,1,0,1\n3,3,0,0,1\n");
  CHECK_THROWS_WITH_AS(read_panel(in), "non-monotone treatment for subject 3", DataError);
}

TEST_CASE("ingestion errors") {
  SUBCASE("missing covariate columns") {
    std::istringstream in("id,t_index,D,dN,Z1\n1,0,0,0,1\n1,1,0,0,1\n");
    CHECK_THROWS_AS(read_panel(in), DataError);
  }
  SUBCASE("missing required column") {
    std::istringstream in("id,t_index,dN,X1\n1,0,0,1\n1,1,0,1\n");
    CHECK_THROWS_WITH_AS(read_panel(in), "missing column 'D'", DataError);
  }
  SUBCASE("time indices out of order") {
    std::istringstream in("id,t_index,D,dN,X1\n1,0,0,0,1\n1,2,0,0,1\n1,1,0,0,1\n");
    CHECK_THROWS_AS(read_panel(in), DataError);
  }
  SUBCASE("events at the follow-up end") {
    std::istringstream in("id,t_index,D,dN,X1\n1,0,0,0,1\n1,1,0,4,1\n");
    CHECK_THROWS_AS(read_panel(in), DataError);
  }
  SUBCASE("unparsable number names line and column") {
    std::istringstream in("id,t_index,D,dN,X1\n1,0,0,0,abc\n1,1,0,0,1\n");
    CHECK_THROWS_WITH_AS(read_panel(in), doctest::Contains("X1"), DataError);
  }
  SUBCASE("counterfactual diverging before treatment") {
    std::istringstream in("id,t_index,D,dN,X1,X0_1\n1,0,0,0,1,1\n1,1,0,0,1,2\n1,2,1,0,1,1\n");
    CHECK_THROWS_WITH_AS(read_panel(in), doctest::Contains("counterfactual diverges"), DataError);
  }
}

TEST_CASE("write then read reproduces random panels bit-exactly") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const bool with_x0 = seed % 2 == 0;
    const int d_z = static_cast<int>(seed % 3);
    const int d_x = 1 + static_cast<int>(seed % 3);
    PanelDataset p = random_panel(seed, 9, d_z, d_x, with_x0);
    std::stringstream buf;
    write_panel(buf, p);
    const PanelDataset q = read_panel(buf, {}, p.grid);
    REQUIRE(q.n() == p.n());
    CHECK(q.d_z == p.d_z);
    CHECK(q.d_x == p.d_x);
    for (int i = 0; i < p.n(); ++i) {
      const auto& a = p.subjects[i];
      const auto& b = q.subjects[i];
      CHECK(a.id == b.id);
      CHECK(a.follow_up_end == b.follow_up_end);
      CHECK(a.treatment_start == b.treatment_start);
      CHECK(a.event_counts == b.event_counts);
      CHECK(testing::identical_nan_aware(a.baseline, b.baseline));
      CHECK(testing::identical_nan_aware(a.covariates, b.covariates));
      CHECK(a.true_counterfactuals.has_value() == b.true_counterfactuals.has_value());
      if (a.true_counterfactuals) {
        CHECK(testing::identical_nan_aware(*a.true_counterfactuals, *b.true_counterfactuals));
      }
    }
  }
}

TEST_CASE("regressor assembly") {
  PanelDataset p;
  p.grid = TimeGrid::unit(4);
  p.d_z = 1;
  p.d_x = 1;
  auto treated = testing::subject(1, vec({0.7}), {1, 2, 3, 4, 5}, {0, 0, 0, 0}, 2);
  treated.true_counterfactuals = Matrix(5, 1);
  *treated.true_counterfactuals << 1, 2, 0.9, 1.5, 1.1;
  auto untreated = testing::subject(2, vec({-1}), {3, 3, 3, 3, 3}, {1, 1, 1, 1});
  untreated.true_counterfactuals = untreated.covariates;
  p.subjects = {treated, untreated};

  auto fc = std::make_shared<ForecastSet>(2);
  (*fc)[0].id = 1;
  (*fc)[0].start = 2;
  (*fc)[0].values = Matrix(3, 1);
  (*fc)[0].values << 1.0, 1.25, 0.5;
  const auto forecast = CovariateSource::forecast(fc);

  SUBCASE("direct placement for the true counterfactual") {
    const auto r = assemble_regressor(p, 0, 3, CovariateSource::true_counterfactual());
    CHECK(r.x_block_offset == 2);
    CHECK(r.values.isApprox(vec({1, 0.7, 1.5, 1})));
  }
  SUBCASE("observed source uses X after treatment") {
    const auto r = assemble_regressor(p, 0, 3, CovariateSource::observed());
    CHECK(r.values.isApprox(vec({1, 0.7, 4, 1})));
  }
  SUBCASE("untreated subject: all sources agree") {
    for (int k = 0; k < 4; ++k) {
      const Vector a = assemble_regressor(p, 1, k, CovariateSource::observed()).values;
      CHECK(a == assemble_regressor(p, 1, k, CovariateSource::true_counterfactual()).values);
      CHECK(a == assemble_regressor(p, 1, k, forecast).values);
      CHECK(a(3) == 0.0);
    }
  }
  SUBCASE("forecast minus true counterfactual isolates the X block") {
    for (int k = 2; k < 4; ++k) {
      const Vector d = assemble_regressor(p, 0, k, forecast).values -
                       assemble_regressor(p, 0, k, CovariateSource::true_counterfactual()).values;
      const double eps = (*fc)[0].values(k - 2, 0) - (*treated.true_counterfactuals)(k, 0);
      CHECK(d.isApprox(vec({0, 0, eps, 0})));
    }
  }
  SUBCASE("pre-treatment rows ignore the source") {
    CHECK(assemble_regressor(p, 0, 1, forecast).values == vec({1, 0.7, 2, 0}));
  }
  SUBCASE("missing counterfactual is a data error") {
    p.subjects[0].true_counterfactuals.reset();
    CHECK_THROWS_AS(assemble_regressor(p, 0, 3, CovariateSource::true_counterfactual()),
                    DataError);
  }
}

TEST_CASE("forecast source on a simulated panel: difference equals the forecast error") {
  // three covariates with a lowered treatment hazard so that subjects have
  // untreated history to fit on
  SimParams params = preset("paper-3cov");
  apply_override(params, "lambda", "0.03");
  params.n = 60;
  params.seed = 5;
  const PanelDataset p = simulate_cohort(params);
  const VarModel model = fit_var(p);
  auto fc = std::make_shared<const ForecastSet>(forecast_all(model, p));
  const auto src = CovariateSource::forecast(fc);
  int checked = 0;
  for (int i = 0; i < p.n(); ++i) {
    const auto& s = p.subjects[i];
    if (!s.treatment_start || *s.treatment_start == 0) continue;
    for (int k = *s.treatment_start; k < s.follow_up_end; ++k) {
      const Vector d = assemble_regressor(p, i, k, src).values -
                       assemble_regressor(p, i, k, CovariateSource::true_counterfactual()).values;
      const Vector eps = (*fc)[i].values.row(k - *s.treatment_start).transpose() -
                         s.true_counterfactuals->row(k).transpose();
      CHECK(d.head(p.x_offset()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(d(p.treatment_index()) == 0.0);
      CHECK((d.segment(p.x_offset(), p.d_x) - eps).cwiseAbs().maxCoeff() == 0.0);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("validation") {
  SimParams params = preset("paper-1cov");
  params.n = 40;
  PanelDataset p = simulate_cohort(params);
  CHECK(validate_panel(p).ok());

  SUBCASE("NaN cell is reported with subject, time and column") {
    p.subjects[4].covariates(6, 0) = std::nan("");
    p.subjects[4].true_counterfactuals.reset();
    const auto rep = validate_panel(p);
    REQUIRE(rep.issues.size() == 1);
    CHECK(rep.issues[0].subject_id == p.subjects[4].id);
    CHECK(rep.issues[0].t_index == 6);
    CHECK(rep.issues[0].column == "X1");
    CHECK(rep.issues[0].message == "non-finite value");
    CHECK(rep.summary().find("X1") != std::string::npos);
  }
  SUBCASE("counterfactual diverging before treatment") {
    auto& s = p.subjects[0];
    s.treatment_start = 3;
    s.true_counterfactuals = s.covariates;
    (*s.true_counterfactuals)(1, 0) += 1.0;
    const auto rep = validate_panel(p);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.issues[0].message == "counterfactual diverges before treatment");
    CHECK(rep.issues[0].t_index == 1);
  }
  SUBCASE("event count vector longer than follow-up") {
    p.subjects[2].event_counts.push_back(1);
    CHECK_FALSE(validate_panel(p).ok());
  }
}

TEST_CASE("time grid") {
  const TimeGrid g({0.0, 0.5, 2.0});
  CHECK(g.intervals() == 2);
  CHECK(g.width(1) == 1.5);
  CHECK_THROWS_AS(TimeGrid({0.0, 1.0, 1.0}), DataError);
  CHECK_THROWS_AS(TimeGrid({0.0}), DataError);
}
