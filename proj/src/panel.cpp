#include "debiatt/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

#include <fmt/format.h>

#include "debiatt/error.hpp"

namespace debiatt {

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw DataError("time grid needs at least two points");
  for (std::size_t k = 0; k + 1 < points_.size(); ++k) {
    if (!(points_[k + 1] > points_[k])) {
      throw DataError(fmt::format("time grid not strictly increasing at index {}", k + 1));
    }
  }
}

TimeGrid TimeGrid::unit(int intervals) {
  std::vector<double> pts(static_cast<std::size_t>(intervals) + 1);
  for (int k = 0; k <= intervals; ++k) pts[static_cast<std::size_t>(k)] = k;
  return TimeGrid(std::move(pts));
}

bool PanelDataset::has_true_counterfactuals() const {
  return !subjects.empty() && std::all_of(subjects.begin(), subjects.end(), [](const auto& s) {
    return s.true_counterfactuals.has_value();
  });
}

void fill_regressor(const PanelDataset& panel, int subject_index, int k,
                    const CovariateSource& source, Eigen::Ref<Vector> out) {
  const SubjectRecord& s = panel.subjects[static_cast<std::size_t>(subject_index)];
  const int dx = panel.d_x;
  const int off = panel.x_offset();
  out(0) = 1.0;
  out.segment(1, panel.d_z) = s.baseline;
  const bool treated = s.treated_at(k);
  out(panel.treatment_index()) = treated ? 1.0 : 0.0;

  if (!treated || source.kind() == CovariateSource::Kind::Observed) {
    out.segment(off, dx) = s.covariates.row(k).transpose();
    return;
  }
  if (source.kind() == CovariateSource::Kind::TrueCounterfactual) {
    if (!s.true_counterfactuals) {
      throw DataError(fmt::format("subject {}: true counterfactual covariates absent", s.id));
    }
    out.segment(off, dx) = s.true_counterfactuals->row(k).transpose();
    return;
  }
  const ForecastSet* fs = source.forecasts();
  if (fs == nullptr || fs->size() != panel.subjects.size()) {
    throw DataError("forecast set does not match the panel");
  }
  const ForecastPath& f = (*fs)[static_cast<std::size_t>(subject_index)];
  const int row = k - f.start;
  if (f.values.rows() == 0 || row < 0 || row >= f.values.rows()) {
    throw DataError(fmt::format("subject {}: no counterfactual forecast at t_index {}", s.id, k));
  }
  out.segment(off, dx) = f.values.row(row).transpose();
}

RegressorVector assemble_regressor(const PanelDataset& panel, int subject_index, int k,
                                   const CovariateSource& source) {
  if (subject_index < 0 || subject_index >= panel.n()) {
    throw DataError(fmt::format("subject index {} out of range", subject_index));
  }
  const auto& s = panel.subjects[static_cast<std::size_t>(subject_index)];
  if (k < 0 || k >= s.follow_up_end) {
    throw DataError(fmt::format("subject {}: t_index {} outside follow-up [0, {})", s.id, k,
                                s.follow_up_end));
  }
  RegressorVector w{Vector(panel.regressor_size()), panel.x_offset()};
  fill_regressor(panel, subject_index, k, source, w.values);
  return w;
}

std::string ValidationReport::summary(std::size_t max_items) const {
  std::string out;
  for (std::size_t i = 0; i < issues.size() && i < max_items; ++i) {
    const auto& is = issues[i];
    out += fmt::format("subject {}", is.subject_id);
    if (is.t_index) out += fmt::format(", t_index {}", *is.t_index);
    if (!is.column.empty()) out += fmt::format(", column {}", is.column);
    out += ": " + is.message + "\n";
  }
  if (issues.size() > max_items) out += fmt::format("... {} more\n", issues.size() - max_items);
  return out;
}

namespace {

void check_matrix_finite(const SubjectRecord& s, const Matrix& m, const std::string& prefix,
                         ValidationReport& report) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        report.issues.push_back({s.id, static_cast<int>(r), fmt::format("{}{}", prefix, c + 1),
                                 "non-finite value"});
      }
    }
  }
}

}  // namespace

ValidationReport validate_panel(const PanelDataset& panel) {
  ValidationReport report;
  const int big_k = panel.grid.intervals();
  for (const auto& s : panel.subjects) {
    auto add = [&](std::optional<int> k, std::string col, std::string msg) {
      report.issues.push_back({s.id, k, std::move(col), std::move(msg)});
    };
    if (s.follow_up_end < 1 || s.follow_up_end > big_k) {
      add(std::nullopt, "", fmt::format("follow-up end {} outside grid [1, {}]", s.follow_up_end,
                                        big_k));
      continue;
    }
    if (s.baseline.size() != panel.d_z) add(std::nullopt, "Z", "baseline dimension mismatch");
    if (s.covariates.rows() != s.follow_up_end + 1 || s.covariates.cols() != panel.d_x) {
      add(std::nullopt, "X", "covariate matrix shape mismatch");
      continue;
    }
    if (static_cast<int>(s.event_counts.size()) != s.follow_up_end) {
      add(std::nullopt, "dN", "event counts recorded after follow-up end");
    }
    for (std::size_t k = 0; k < s.event_counts.size(); ++k) {
      if (s.event_counts[k] < 0) add(static_cast<int>(k), "dN", "negative event count");
    }
    for (Eigen::Index j = 0; j < s.baseline.size(); ++j) {
      if (!std::isfinite(s.baseline(j))) {
        add(std::nullopt, fmt::format("Z{}", j + 1), "non-finite value");
      }
    }
    check_matrix_finite(s, s.covariates, "X", report);
    if (s.treatment_start && (*s.treatment_start < 0 || *s.treatment_start > big_k)) {
      add(std::nullopt, "D", "treatment start outside grid");
    }
    if (s.true_counterfactuals) {
      const Matrix& x0 = *s.true_counterfactuals;
      if (x0.rows() != s.covariates.rows() || x0.cols() != s.covariates.cols()) {
        add(std::nullopt, "X0", "counterfactual matrix shape mismatch");
        continue;
      }
      check_matrix_finite(s, x0, "X0_", report);
      const int pre = s.treatment_start ? std::min<int>(*s.treatment_start, s.follow_up_end + 1)
                                        : s.follow_up_end + 1;
      for (int k = 0; k < pre; ++k) {
        for (int j = 0; j < panel.d_x; ++j) {
          if (x0(k, j) != s.covariates(k, j) && std::isfinite(x0(k, j))) {
            add(k, fmt::format("X0_{}", j + 1), "counterfactual diverges before treatment");
          }
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return out;
}

double parse_double(std::string_view f, std::size_t line_no, std::string_view col) {
  if (f == "nan" || f == "NaN" || f == "NA") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto* first = f.data();
  if (!f.empty() && f.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size()) {
    throw DataError(fmt::format("line {}: column {}: cannot parse '{}' as a number", line_no, col, f));
  }
  return v;
}

std::int64_t parse_int(std::string_view f, std::size_t line_no, std::string_view col) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size()) {
    throw DataError(fmt::format("line {}: column {}: cannot parse '{}' as an integer", line_no,
                                col, f));
  }
  return v;
}

// Consecutive columns prefix1, prefix2, ... ; returns their positions.
std::vector<std::size_t> indexed_columns(const std::map<std::string, std::size_t>& pos,
                                         const std::string& prefix) {
  std::vector<std::size_t> cols;
  for (int j = 1;; ++j) {
    auto it = pos.find(fmt::format("{}{}", prefix, j));
    if (it == pos.end()) break;
    cols.push_back(it->second);
  }
  return cols;
}

struct RawRow {
  std::int64_t id;
  std::int64_t t;
  double d;
  std::int64_t dn;
  std::vector<double> z, x, x0;
  std::size_t line;
};

}  // namespace

PanelDataset read_panel(std::istream& in, const PanelSchema& schema, std::optional<TimeGrid> grid) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("panel CSV is empty (header row required)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos.emplace(std::string(header[i]), i);

  auto require = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw DataError(fmt::format("missing column '{}'", name));
    return it->second;
  };
  const std::size_t c_id = require(schema.id);
  const std::size_t c_t = require(schema.t_index);
  const std::size_t c_d = require(schema.treatment);
  const std::size_t c_dn = require(schema.events);
  const auto c_z = indexed_columns(pos, schema.z_prefix);
  const auto c_x = indexed_columns(pos, schema.x_prefix);
  const auto c_x0 = indexed_columns(pos, schema.x0_prefix);
  if (c_x.empty()) throw DataError(fmt::format("missing column '{}1'", schema.x_prefix));
  if (!c_x0.empty() && c_x0.size() != c_x.size()) {
    throw DataError(fmt::format("found {} counterfactual columns for {} covariates", c_x0.size(),
                                c_x.size()));
  }

  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw DataError(fmt::format("line {}: expected {} fields, found {}", line_no, header.size(),
                                  f.size()));
    }
    RawRow r;
    r.line = line_no;
    r.id = parse_int(f[c_id], line_no, schema.id);
    r.t = parse_int(f[c_t], line_no, schema.t_index);
    r.d = parse_double(f[c_d], line_no, schema.treatment);
    r.dn = parse_int(f[c_dn], line_no, schema.events);
    for (auto c : c_z) r.z.push_back(parse_double(f[c], line_no, header[c]));
    for (auto c : c_x) r.x.push_back(parse_double(f[c], line_no, header[c]));
    for (auto c : c_x0) r.x0.push_back(parse_double(f[c], line_no, header[c]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("panel CSV has no data rows");
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RawRow& a, const RawRow& b) { return a.id < b.id; });

  PanelDataset panel;
  panel.d_z = static_cast<int>(c_z.size());
  panel.d_x = static_cast<int>(c_x.size());
  const bool with_x0 = !c_x0.empty();
  int max_tau = 0;

  for (std::size_t b = 0; b < rows.size();) {
    std::size_t e = b;
    while (e < rows.size() && rows[e].id == rows[b].id) ++e;
    const std::int64_t id = rows[b].id;
    // within a subject rows must already be in increasing, contiguous time order
    for (std::size_t r = b; r < e; ++r) {
      if (rows[r].t != static_cast<std::int64_t>(r - b)) {
        throw DataError(fmt::format("non-monotone time indices for subject {} (line {})", id,
                                    rows[r].line));
      }
    }
    const int n_rows = static_cast<int>(e - b);
    if (n_rows < 2) throw DataError(fmt::format("subject {} has fewer than two time points", id));
    SubjectRecord s;
    s.id = id;
    s.follow_up_end = n_rows - 1;
    s.baseline = Eigen::Map<const Vector>(rows[b].z.data(), panel.d_z);
    s.covariates.resize(n_rows, panel.d_x);
    if (with_x0) s.true_counterfactuals = Matrix(n_rows, panel.d_x);
    s.event_counts.resize(static_cast<std::size_t>(s.follow_up_end));
    for (int k = 0; k < n_rows; ++k) {
      const RawRow& r = rows[b + static_cast<std::size_t>(k)];
      if (r.z != rows[b].z) {
        throw DataError(fmt::format("baseline covariates vary over time for subject {}", id));
      }
      for (int j = 0; j < panel.d_x; ++j) s.covariates(k, j) = r.x[static_cast<std::size_t>(j)];
      if (with_x0) {
        for (int j = 0; j < panel.d_x; ++j) {
          (*s.true_counterfactuals)(k, j) = r.x0[static_cast<std::size_t>(j)];
        }
      }
      if (r.d != 0.0 && r.d != 1.0) {
        throw DataError(fmt::format("treatment indicator must be 0 or 1 for subject {} (line {})",
                                    id, r.line));
      }
      if (r.d == 1.0 && !s.treatment_start) s.treatment_start = k;
      if (r.d == 0.0 && s.treatment_start) {
        throw DataError(fmt::format("non-monotone treatment for subject {}", id));
      }
      if (r.dn < 0) throw DataError(fmt::format("negative event count for subject {}", id));
      if (k < s.follow_up_end) {
        s.event_counts[static_cast<std::size_t>(k)] = static_cast<int>(r.dn);
      } else if (r.dn != 0) {
        throw DataError(fmt::format("events recorded after follow-up end for subject {}", id));
      }
    }
    max_tau = std::max(max_tau, s.follow_up_end);
    panel.subjects.push_back(std::move(s));
    b = e;
  }

  if (grid) {
    if (grid->intervals() < max_tau) {
      throw DataError(fmt::format("time grid has {} intervals but follow-up reaches {}",
                                  grid->intervals(), max_tau));
    }
    panel.grid = std::move(*grid);
  } else {
    panel.grid = TimeGrid::unit(max_tau);
  }

  const auto report = validate_panel(panel);
  if (!report.ok()) throw DataError("invalid panel:\n" + report.summary());
  return panel;
}

PanelDataset load_panel(const std::filesystem::path& path, const PanelSchema& schema,
                        std::optional<TimeGrid> grid) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open panel file {}", path.string()));
  return read_panel(in, schema, std::move(grid));
}

void write_panel(std::ostream& out, const PanelDataset& panel, const PanelSchema& schema) {
  const bool with_x0 = panel.has_true_counterfactuals();
  std::string line = fmt::format("{},{},{},{}", schema.id, schema.t_index, schema.treatment,
                                 schema.events);
  for (int j = 1; j <= panel.d_z; ++j) line += fmt::format(",{}{}", schema.z_prefix, j);
  for (int j = 1; j <= panel.d_x; ++j) line += fmt::format(",{}{}", schema.x_prefix, j);
  if (with_x0) {
    for (int j = 1; j <= panel.d_x; ++j) line += fmt::format(",{}{}", schema.x0_prefix, j);
  }
  out << line << '\n';

  fmt::memory_buffer buf;
  for (const auto& s : panel.subjects) {
    for (int k = 0; k <= s.follow_up_end; ++k) {
      buf.clear();
      const int dn = k < s.follow_up_end ? s.event_counts[static_cast<std::size_t>(k)] : 0;
      fmt::format_to(std::back_inserter(buf), "{},{},{},{}", s.id, k, s.treated_at(k) ? 1 : 0,
                     dn);
      for (int j = 0; j < panel.d_z; ++j) fmt::format_to(std::back_inserter(buf), ",{}", s.baseline(j));
      for (int j = 0; j < panel.d_x; ++j) {
        fmt::format_to(std::back_inserter(buf), ",{}", s.covariates(k, j));
      }
      if (with_x0) {
        for (int j = 0; j < panel.d_x; ++j) {
          fmt::format_to(std::back_inserter(buf), ",{}", (*s.true_counterfactuals)(k, j));
        }
      }
      buf.push_back('\n');
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
  }
}

void write_panel(const std::filesystem::path& path, const PanelDataset& panel,
                 const PanelSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write panel file {}", path.string()));
  write_panel(out, panel, schema);
  if (!out) throw DataError(fmt::format("write failed for {}", path.string()));
}

}  // namespace debiatt
