#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>

#include "debiatt/additive.hpp"
#include "debiatt/bench.hpp"
#include "debiatt/error.hpp"
#include "debiatt/panel.hpp"
#include "debiatt/sim.hpp"
#include "debiatt/var_model.hpp"

namespace py = pybind11;
using namespace debiatt;

namespace {

SimParams make_params(const std::string& name, const std::optional<py::dict>& overrides) {
  SimParams p = preset(name);
  if (overrides) {
    for (const auto& [k, v] : *overrides) {
      apply_override(p, py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
    }
  }
  p.validate();
  return p;
}

std::vector<double> grid_points(const TimeGrid& g) { return g.points(); }

CoefficientPaths estimate(const PanelDataset& panel, const std::string& estimator,
                          const std::string& fallback, double ridge,
                          const std::optional<std::string>& preset_name,
                          const std::optional<py::dict>& overrides) {
  FitOptions options;
  options.ridge = ridge;
  options.fallback = FallbackPolicy::parse(fallback);
  const Estimator e = parse_estimator(estimator);
  CoefficientPaths paths;
  if (e == Estimator::Oracle) {
    paths = fit(panel, CovariateSource::true_counterfactual(), options);
  } else if (e == Estimator::Naive) {
    paths = fit(panel, CovariateSource::observed(), options);
  } else {
    const VarModel model = fit_var(panel);
    const auto fc = std::make_shared<const ForecastSet>(forecast_all(model, panel));
    const int big_k = panel.grid.intervals();
    if (e == Estimator::Uncorrected) {
      paths = fit(panel, CovariateSource::forecast(fc), options);
    } else if (e == Estimator::Debiased) {
      paths = fit_debiased(panel, fc, error_covariance(model, big_k), options);
    } else {
      if (!preset_name) throw ConfigError("debiased_true needs the generating scenario (preset=...)");
      const SimParams p = make_params(*preset_name, overrides);
      if (p.d_x != panel.d_x) throw ConfigError("debiased_true: scenario d_x does not match the panel");
      paths = fit_debiased(panel, fc, generator_error_covariance(p, big_k), options);
    }
  }
  paths.label = to_string(e);
  return paths;
}

py::dict benchmark(const std::string& preset_name, const std::optional<py::dict>& overrides, int reps,
                   int truth_reps, std::uint64_t seed, int jobs, const std::string& fallback) {
  const SimParams p = make_params(preset_name, overrides);
  BenchmarkOptions o;
  o.reps = reps;
  o.truth_reps = truth_reps > 0 ? truth_reps : reps;
  o.seed = seed;
  o.jobs = jobs;
  o.fit.fallback = FallbackPolicy::parse(fallback);
  BenchmarkResult r;
  {
    py::gil_scoped_release release;
    r = run_benchmark(p, o, preset_name);
  }
  py::dict summary, mise_values, p_values;
  for (Estimator e : all_estimators()) {
    const auto& s = r.summary.at(e);
    summary[py::str(to_string(e))] = py::dict(py::arg("mean") = s.mean, py::arg("sd") = s.sd,
                                              py::arg("n") = s.n);
    mise_values[py::str(to_string(e))] = r.mise_of(e);
    if (auto it = r.tests.find(e); it != r.tests.end()) p_values[py::str(to_string(e))] = it->second.p_value;
  }
  py::dict out;
  out["sigma_kk"] = r.sigma_label;
  out["summary"] = summary;
  out["mise"] = mise_values;
  out["p_value_vs_debiased"] = p_values;
  out["failures"] = r.failures;
  out["truth"] = r.truth.att;
  out["table"] = format_table({r});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Debiased ATT estimation with VAR(1) counterfactual covariates";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<PanelDataset>(m, "Panel")
      .def_property_readonly("n", &PanelDataset::n)
      .def_readonly("d_z", &PanelDataset::d_z)
      .def_readonly("d_x", &PanelDataset::d_x)
      .def_property_readonly("intervals", [](const PanelDataset& p) { return p.grid.intervals(); })
      .def_property_readonly("grid", [](const PanelDataset& p) { return grid_points(p.grid); })
      .def_property_readonly("ids",
                             [](const PanelDataset& p) {
                               std::vector<std::int64_t> ids;
                               for (const auto& s : p.subjects) ids.push_back(s.id);
                               return ids;
                             })
      .def_property_readonly("treatment_starts",
                             [](const PanelDataset& p) {
                               std::vector<std::optional<int>> out;
                               for (const auto& s : p.subjects) out.push_back(s.treatment_start);
                               return out;
                             })
      .def_property_readonly("has_true_counterfactuals", &PanelDataset::has_true_counterfactuals)
      .def("covariates", [](const PanelDataset& p, int i) { return p.subjects.at(static_cast<std::size_t>(i)).covariates; },
           py::arg("index"))
      .def("event_counts", [](const PanelDataset& p, int i) { return p.subjects.at(static_cast<std::size_t>(i)).event_counts; },
           py::arg("index"))
      .def("write", [](const PanelDataset& p, const std::string& path) { write_panel(path, p); },
           py::arg("path"))
      .def("__repr__", [](const PanelDataset& p) {
        return "<Panel n=" + std::to_string(p.n()) + " d_z=" + std::to_string(p.d_z) +
               " d_x=" + std::to_string(p.d_x) + " K=" + std::to_string(p.grid.intervals()) + ">";
      });

  py::class_<VarModel>(m, "VarModel")
      .def_readonly("pi", &VarModel::pi)
      .def_readonly("intercept", &VarModel::intercept)
      .def_readonly("z_loadings", &VarModel::z_loadings)
      .def_readonly("resid_cov", &VarModel::resid_cov)
      .def_readonly("n_obs", &VarModel::n_obs)
      .def_readonly("dof", &VarModel::dof);

  py::class_<CoefficientPaths>(m, "CoefficientPaths")
      .def_readonly("label", &CoefficientPaths::label)
      .def_readonly("coef", &CoefficientPaths::coef)
      .def_readonly("risk_set_size", &CoefficientPaths::risk_set_size)
      .def_readonly("treated_count", &CoefficientPaths::treated_count)
      .def_readonly("fallback", &CoefficientPaths::fallback)
      .def_property_readonly("names", &CoefficientPaths::names)
      .def_property_readonly("att", &CoefficientPaths::att)
      .def_property_readonly("grid", [](const CoefficientPaths& c) { return grid_points(c.grid); })
      .def("cumulative", &CoefficientPaths::cumulative)
      .def("time_averaged", &CoefficientPaths::time_averaged);

  m.def("presets", &preset_names);
  m.def("estimators", [] {
    std::vector<std::string> out;
    for (Estimator e : all_estimators()) out.push_back(to_string(e));
    return out;
  });
  m.def("scenario", [](const std::string& name, const std::optional<py::dict>& overrides) {
          return describe(make_params(name, overrides));
        },
        py::arg("preset") = "paper-1cov", py::arg("overrides") = py::none(),
        "Effective scenario parameters as key -> text.");
  m.def("simulate",
        [](const std::string& name, const std::optional<py::dict>& overrides,
           std::optional<std::uint64_t> seed) {
          SimParams p = make_params(name, overrides);
          if (seed) p.seed = *seed;
          py::gil_scoped_release release;
          return simulate_cohort(p);
        },
        py::arg("preset") = "paper-1cov", py::arg("overrides") = py::none(), py::arg("seed") = py::none(),
        "Simulate one cohort panel with true counterfactual covariates.");
  m.def("load_panel", [](const std::string& path) { return load_panel(path); }, py::arg("path"));
  m.def("fit_var", [](const PanelDataset& p) { return fit_var(p); }, py::arg("panel"));
  m.def("error_covariance",
        [](const Matrix& pi, const Matrix& sigma, int l_max) {
          const ErrorCovariance e = error_covariance(pi, sigma, l_max);
          std::vector<Matrix> out;
          for (int l = 1; l <= l_max; ++l) out.push_back(e.at(l));
          return out;
        },
        py::arg("pi"), py::arg("sigma"), py::arg("l_max"), "Sigma(l) for l = 1..l_max.");
  m.def("estimate", &estimate, py::arg("panel"), py::arg("estimator"), py::arg("fallback") = "psd-floor",
        py::arg("ridge") = 0.0, py::arg("preset") = py::none(), py::arg("overrides") = py::none(),
        "Fit one estimator (oracle, naive, uncorrected, debiased, debiased_true).");
  m.def("mise",
        [](const Vector& curve, const Vector& truth, const Vector& grid) {
          return mise(curve, truth, TimeGrid(std::vector<double>(grid.data(), grid.data() + grid.size())));
        },
        py::arg("curve"), py::arg("truth"), py::arg("grid"));
  m.def("wilcoxon_signed_rank",
        [](const std::vector<double>& a, const std::vector<double>& b, bool exact) {
          const WilcoxonResult r = exact ? wilcoxon_signed_rank_exact(a, b) : wilcoxon_signed_rank(a, b);
          return py::dict(py::arg("statistic") = r.statistic, py::arg("p_value") = r.p_value,
                          py::arg("z") = r.z, py::arg("n_used") = r.n_used,
                          py::arg("degenerate") = r.degenerate);
        },
        py::arg("a"), py::arg("b"), py::arg("exact") = false);
  m.def("run_benchmark", &benchmark, py::arg("preset") = "paper-1cov", py::arg("overrides") = py::none(),
        py::arg("reps") = 100, py::arg("truth_reps") = 0, py::arg("seed") = 1, py::arg("jobs") = 1,
        py::arg("fallback") = "psd-floor",
        "Monte-Carlo MISE comparison of the five estimators for one scenario.");
}
