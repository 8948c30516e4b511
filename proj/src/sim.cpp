#include "debiatt/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debiatt/error.hpp"

namespace debiatt {

namespace {

Vector constant(int n, double v) { return Vector::Constant(n, v); }

Vector make_vector(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ConfigError(fmt::format("invalid number '{}' for key '{}'", text, key));
  }
  return v;
}

std::vector<double> to_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError(fmt::format("empty value for key '{}'", key));
  return out;
}

Vector to_vector(const std::string& key, const std::string& text, int dim) {
  const auto vals = to_list(key, text);
  if (vals.size() == 1) return constant(dim, vals[0]);
  if (static_cast<int>(vals.size()) != dim) {
    throw ConfigError(fmt::format("key '{}' needs 1 or {} values, got {}", key, dim, vals.size()));
  }
  return Eigen::Map<const Vector>(vals.data(), dim);
}

int to_int(const std::string& key, const std::string& text) {
  const double v = to_double(key, text);
  if (v != std::floor(v)) throw ConfigError(fmt::format("key '{}' must be an integer", key));
  return static_cast<int>(v);
}

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += fmt::format("{}{}", i ? "," : "", v(i));
  return out;
}

}  // namespace

void SimParams::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid scenario: " + msg); };
  if (d_x < 1) fail("d_x must be >= 1");
  if (horizon < 1) fail("horizon must be >= 1");
  if (n < 1) fail("n must be >= 1");
  auto dim = [&](const Vector& v, const char* name) {
    if (v.size() != d_x) fail(fmt::format("{} has length {} (d_x = {})", name, v.size(), d_x));
  };
  dim(min_x, "min_x");
  dim(max_x, "max_x");
  dim(kappa_d0, "kappa_d0");
  dim(kappa_d1, "kappa_d1");
  dim(lambda, "lambda");
  dim(delta_x, "delta_x");
  if (delta_z.size() != kDz) fail("delta_z must have 3 entries");
  if ((min_x.array() > max_x.array()).any()) fail("min_x must be <= max_x");
  if (sigma.rows() != d_x || sigma.cols() != d_x) fail("sigma must be d_x x d_x");
  if (!is_symmetric(sigma)) fail("sigma must be symmetric");
  if (min_eigenvalue(sigma) < -1e-12 * std::max(1.0, sigma.cwiseAbs().maxCoeff())) {
    fail("sigma must be positive semi-definite");
  }
  if (m < 0) fail("m must be >= 0");
  if (p_z2 < 0 || p_z2 > 1) fail("p_z2 must lie in [0, 1]");
  if (!(lambda_z3 > 0)) fail("lambda_z3 must be > 0");
  if (min_z1 > max_z1) fail("min_z1 must be <= max_z1");
}

SimParams preset(const std::string& name) {
  SimParams p;
  p.delta_z = make_vector({0.1, 0.02, 0.01});
  if (name == "paper-1cov") {
    p.d_x = 1;
    p.min_x = make_vector({0});
    p.max_x = make_vector({10});
    p.delta_x = make_vector({-0.25});
    p.lambda = make_vector({0.12});
  } else if (name == "paper-3cov") {
    p.d_x = 3;
    p.min_x = make_vector({0, 0, 0});
    p.max_x = make_vector({10, 20, 30});
    p.delta_x = make_vector({-0.3, 0, -0.25});
    p.lambda = make_vector({0.16, 0.14, 0});
  } else if (name == "paper-6cov") {
    p.d_x = 6;
    p.min_x = constant(6, 0.0);
    p.max_x = make_vector({10, 20, 30, 10, 20, 30});
    p.delta_x = make_vector({-0.3, -0.2, 0, 0, -0.2, -0.25});
    p.lambda = make_vector({0.13, 0.12, 0.13, 0.14, 0, 0});
  } else {
    throw ConfigError(fmt::format("unknown preset '{}' (known: {})", name,
                                  fmt::join(preset_names(), ", ")));
  }
  p.kappa_d0 = constant(p.d_x, -0.25);
  p.kappa_d1 = constant(p.d_x, 0.25);
  p.sigma = 0.4 * Matrix::Identity(p.d_x, p.d_x);
  return p;
}

std::vector<std::string> preset_names() { return {"paper-1cov", "paper-3cov", "paper-6cov"}; }

void apply_override(SimParams& p, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key == "n") {
    p.n = to_int(key, value);
    if (p.n < 1) throw ConfigError("n must be >= 1");
  } else if (key == "seed") {
    p.seed = static_cast<std::uint64_t>(std::stoull(value));
  } else if (key == "horizon") {
    p.horizon = to_int(key, value);
  } else if (key == "d_x") {
    const int d = to_int(key, value);
    if (d < 1) throw ConfigError("d_x must be >= 1");
    if (d != p.d_x) {
      // dimension change resets vector fields to broadcasts of their first entry
      auto resize = [d](Vector& v) { v = constant(d, v.size() ? v(0) : 0.0); };
      resize(p.min_x);
      resize(p.max_x);
      resize(p.kappa_d0);
      resize(p.kappa_d1);
      resize(p.lambda);
      resize(p.delta_x);
      const double s = p.sigma.size() ? p.sigma(0, 0) : 0.0;
      p.sigma = s * Matrix::Identity(d, d);
      p.d_x = d;
    }
  } else if (key == "min_x") {
    p.min_x = to_vector(key, value, p.d_x);
  } else if (key == "max_x") {
    p.max_x = to_vector(key, value, p.d_x);
  } else if (key == "kappa_d0") {
    p.kappa_d0 = to_vector(key, value, p.d_x);
  } else if (key == "kappa_d1") {
    p.kappa_d1 = to_vector(key, value, p.d_x);
  } else if (key == "lambda") {
    p.lambda = to_vector(key, value, p.d_x);
  } else if (key == "delta_x") {
    p.delta_x = to_vector(key, value, p.d_x);
  } else if (key == "delta_z") {
    p.delta_z = to_vector(key, value, SimParams::kDz);
  } else if (key == "sigma") {
    p.sigma = to_double(key, value) * Matrix::Identity(p.d_x, p.d_x);
  } else if (key == "sigma_diag") {
    p.sigma = to_vector(key, value, p.d_x).asDiagonal();
  } else if (key == "sigma_matrix") {
    const auto vals = to_list(key, value);
    if (static_cast<int>(vals.size()) != p.d_x * p.d_x) {
      throw ConfigError(fmt::format("sigma_matrix needs {} values (row-major)", p.d_x * p.d_x));
    }
    p.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        vals.data(), p.d_x, p.d_x);
  } else if (key == "m") {
    p.m = to_double(key, value);
  } else if (key == "delta") {
    p.delta = to_double(key, value);
  } else if (key == "delta0") {
    p.delta0 = to_double(key, value);
  } else if (key == "min_z1") {
    p.min_z1 = to_double(key, value);
  } else if (key == "max_z1") {
    p.max_z1 = to_double(key, value);
  } else if (key == "p_z2") {
    p.p_z2 = to_double(key, value);
  } else if (key == "lambda_z3") {
    p.lambda_z3 = to_double(key, value);
  } else if (key == "treated_target") {
    p.treated_target = to_double(key, value);
  } else if (key == "counterfactual_recursion") {
    if (value == "counterfactual") {
      p.recursion = CounterfactualRecursion::Counterfactual;
    } else if (value == "observed") {
      p.recursion = CounterfactualRecursion::Observed;
    } else {
      throw ConfigError("counterfactual_recursion must be 'counterfactual' or 'observed'");
    }
  } else {
    throw ConfigError(fmt::format("unknown scenario key '{}'", key));
  }
}

SimParams parse_scenario(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string preset_name = "paper-1cov";
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("scenario line {}: expected key = value", line_no));
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      preset_name = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  SimParams p = preset(preset_name);
  // d_x first so vector-valued keys see the final dimension
  for (const auto& [k, v] : entries) {
    if (k == "d_x") apply_override(p, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "d_x") apply_override(p, k, v);
  }
  return p;
}

SimParams load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open scenario file {}", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::map<std::string, std::string> describe(const SimParams& p) {
  std::map<std::string, std::string> out;
  out["d_x"] = fmt::format("{}", p.d_x);
  out["horizon"] = fmt::format("{}", p.horizon);
  out["n"] = fmt::format("{}", p.n);
  out["seed"] = fmt::format("{}", p.seed);
  out["min_x"] = join(p.min_x);
  out["max_x"] = join(p.max_x);
  out["kappa_d0"] = join(p.kappa_d0);
  out["kappa_d1"] = join(p.kappa_d1);
  out["lambda"] = join(p.lambda);
  out["delta_x"] = join(p.delta_x);
  out["delta_z"] = join(p.delta_z);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> s = p.sigma;
  out["sigma_matrix"] = join(Eigen::Map<const Vector>(s.data(), s.size()));
  out["m"] = fmt::format("{}", p.m);
  out["delta"] = fmt::format("{}", p.delta);
  out["delta0"] = fmt::format("{}", p.delta0);
  out["min_z1"] = fmt::format("{}", p.min_z1);
  out["max_z1"] = fmt::format("{}", p.max_z1);
  out["p_z2"] = fmt::format("{}", p.p_z2);
  out["lambda_z3"] = fmt::format("{}", p.lambda_z3);
  out["treated_target"] = fmt::format("{}", p.treated_target);
  out["counterfactual_recursion"] =
      p.recursion == CounterfactualRecursion::Counterfactual ? "counterfactual" : "observed";
  return out;
}

double IntensitySpec::raw() const {
  double mu = delta * treated + delta0;
  if (z.size()) mu += delta_z.dot(z);
  if (x.size()) mu += delta_x.dot(x);
  return mu;
}

int thinning_sample(const std::function<double(double)>& intensity, double a, double b,
                    double bound, Rng& rng, std::vector<double>* times) {
  if (!(a < b)) throw NumericalError(fmt::format("thinning interval ({}, {}] is empty", a, b));
  if (!(bound >= 0.0) || !std::isfinite(bound)) {
    throw NumericalError(fmt::format("thinning bound {} is not a finite non-negative rate", bound));
  }
  if (bound == 0.0) {
    // a zero bound is only valid for a null intensity
    if (intensity(a) > 0.0) {
      throw NumericalError(fmt::format("thinning bound 0 below intensity {} at t = {}",
                                       intensity(a), a));
    }
    return 0;
  }
  std::exponential_distribution<double> gap(bound);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int count = 0;
  double t = a;
  while (true) {
    t += gap(rng);
    if (t > b) break;
    const double mu = intensity(t);
    if (mu > bound) {
      throw NumericalError(
          fmt::format("thinning bound {} below intensity {} at t = {}", bound, mu, t));
    }
    if (unif(rng) * bound <= mu && mu > 0.0) {
      if (++count > kMaxEventsPerInterval) {
        throw NumericalError(fmt::format(
            "more than {} events on ({}, {}] (bound {}); check delta0/delta_x/delta_z",
            kMaxEventsPerInterval, a, b, bound));
      }
      if (times) times->push_back(t);
    }
  }
  return count;
}

Vector draw_baseline(const SimParams& p, Rng& rng) {
  Vector z(SimParams::kDz);
  z(0) = std::uniform_real_distribution<double>(p.min_z1, p.max_z1)(rng);
  z(1) = std::bernoulli_distribution(p.p_z2)(rng) ? 1.0 : 0.0;
  z(2) = static_cast<double>(std::poisson_distribution<int>(p.lambda_z3)(rng));
  return z;
}

NoiseModel::NoiseModel(const Matrix& sigma) : factor_(psd_factor(sigma)) {}

Vector NoiseModel::draw(Rng& rng) const {
  std::normal_distribution<double> norm(0.0, 1.0);
  Vector e(factor_.cols());
  for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = norm(rng);
  return factor_ * e;
}

CovariateStep step_covariates(const Vector& x, const Vector& x0, bool treated,
                              const SimParams& p, const NoiseModel& noise, Rng& rng) {
  CovariateStep out;
  if (!treated) {
    out.x_next = p.kappa_d0.cwiseProduct(x) + noise.draw(rng);
    out.x0_next = out.x_next;
    return out;
  }
  const Vector target = Vector::Constant(x.size(), p.treated_target);
  out.x_next = x + p.kappa_d1.cwiseProduct(target - x) + noise.draw(rng);
  const Vector& anchor = p.recursion == CounterfactualRecursion::Counterfactual ? x0 : x;
  out.x0_next = p.kappa_d0.cwiseProduct(anchor) + noise.draw(rng);
  return out;
}

double treatment_probability(const Vector& x, const SimParams& p) {
  const double prob = p.m * p.lambda.sum() * std::exp(p.lambda.dot(x));
  if (!(prob > 0.0)) return 0.0;  // also maps NaN to 0
  return std::min(prob, 1.0);
}

bool draw_treatment(const Vector& x, const SimParams& p, Rng& rng) {
  const double prob = treatment_probability(x, p);
  if (prob <= 0.0) return false;
  if (prob >= 1.0) return true;
  return std::bernoulli_distribution(prob)(rng);
}

PanelDataset simulate_cohort(const SimParams& params) {
  Rng rng(params.seed);
  return simulate_cohort(params, rng);
}

PanelDataset simulate_cohort(const SimParams& p, Rng& rng) {
  p.validate();
  const int big_k = p.horizon;
  PanelDataset panel;
  panel.grid = TimeGrid::unit(big_k);
  panel.d_z = SimParams::kDz;
  panel.d_x = p.d_x;
  panel.subjects.reserve(static_cast<std::size_t>(p.n));
  const NoiseModel noise(p.sigma);

  IntensitySpec spec;
  spec.delta = p.delta;
  spec.delta0 = p.delta0;
  spec.delta_z = p.delta_z;
  spec.delta_x = p.delta_x;

  for (int i = 0; i < p.n; ++i) {
    SubjectRecord s;
    s.id = i + 1;
    s.follow_up_end = big_k;
    s.covariates.resize(big_k + 1, p.d_x);
    Matrix x0(big_k + 1, p.d_x);
    s.event_counts.assign(static_cast<std::size_t>(big_k), 0);

    Vector x(p.d_x);
    for (int j = 0; j < p.d_x; ++j) {
      x(j) = std::uniform_real_distribution<double>(p.min_x(j), p.max_x(j))(rng);
    }
    s.baseline = draw_baseline(p, rng);
    s.covariates.row(0) = x.transpose();
    x0.row(0) = x.transpose();
    Vector xcf = x;
    bool treated = false;

    for (int t = 0; t < big_k; ++t) {
      // events on (t, t+1] under the state at t
      spec.treated = treated ? 1.0 : 0.0;
      spec.z = s.baseline;
      spec.x = x;
      const double mu = spec(t);
      s.event_counts[static_cast<std::size_t>(t)] =
          thinning_sample(std::cref(spec), t, t + 1.0, mu, rng);

      const CovariateStep step = step_covariates(x, xcf, treated, p, noise, rng);
      if (!treated && draw_treatment(x, p, rng)) {
        treated = true;
        s.treatment_start = t + 1;
      }
      x = step.x_next;
      xcf = step.x0_next;
      s.covariates.row(t + 1) = x.transpose();
      x0.row(t + 1) = xcf.transpose();
    }
    s.true_counterfactuals = std::move(x0);
    panel.subjects.push_back(std::move(s));
  }
  return panel;
}

}  // namespace debiatt
