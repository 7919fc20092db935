#include "gslosh/metrics.hpp"

#include "gslosh/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace gslosh {

namespace {

void check_points(std::span<const double> pts, std::size_t dim, const char* what) {
  if (dim == 0) throw ConfigError(std::string(what) + ": point dimension must be positive");
  if (pts.size() % dim != 0) {
    throw DataError(std::string(what) + ": coordinate count " + std::to_string(pts.size()) +
                    " is not a multiple of " + std::to_string(dim));
  }
}

double dist_sq(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// Largest nearest-neighbour distance from points of a to the set b.
double directed(std::span<const double> a, std::span<const double> b, std::size_t dim) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); i += dim) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); j += dim) {
      best = std::min(best, dist_sq(a.data() + i, b.data() + j, dim));
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + file.string());
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth, std::size_t dim) {
  check_points(pred, dim, "rmse");
  check_points(truth, dim, "rmse");
  if (pred.size() != truth.size()) {
    throw DataError("rmse: point counts differ (" + std::to_string(pred.size() / dim) + " vs " +
                    std::to_string(truth.size() / dim) + ")");
  }
  if (pred.empty()) throw DataError("rmse: empty point lists");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); i += dim) s += dist_sq(pred.data() + i, truth.data() + i, dim);
  return std::sqrt(s / static_cast<double>(pred.size() / dim));
}

double hausdorff(std::span<const double> x, std::span<const double> y, std::size_t dim) {
  check_points(x, dim, "hausdorff");
  check_points(y, dim, "hausdorff");
  if (x.empty() || y.empty()) throw DataError("hausdorff: point set is empty");
  return std::max(directed(x, y, dim), directed(y, x, dim));
}

AuditSummary thermo_audit(const RolloutResult& rollout, const AuditTolerances& tol) {
  AuditSummary a;
  a.steps = rollout.operators.size();
  if (rollout.operators.empty()) return a;
  a.min_s_dot = std::numeric_limits<double>::infinity();
  a.min_eig_m = std::numeric_limits<double>::infinity();
  for (const auto& ops : rollout.operators) {
    const Vector f = ops.rate();
    a.max_abs_e_dot = std::max(a.max_abs_e_dot, std::abs(ops.DE.dot(f)));
    a.min_s_dot = std::min(a.min_s_dot, ops.DS.dot(f));
    a.max_deg_residual = std::max(a.max_deg_residual, degeneracy_residual(ops));
    a.min_eig_m = std::min(a.min_eig_m, min_eigenvalue(ops.M));
  }
  a.energy_ok = a.max_abs_e_dot <= tol.energy;
  a.entropy_ok = a.min_s_dot >= -tol.entropy;
  a.degeneracy_ok = a.max_deg_residual <= tol.degeneracy;
  return a;
}

bool EvalReport::audit_passed() const {
  return std::all_of(audits.begin(), audits.end(), [](const auto& a) { return a.passed(); }) &&
         std::all_of(rollouts.begin(), rollouts.end(), [](const auto& r) { return r.completed; });
}

double EvalReport::fraction_rmse_within(double rel) const {
  if (surface.rmse.empty()) return 1.0;
  const double bound = rel * peak_amplitude;
  const auto ok = std::count_if(surface.rmse.begin(), surface.rmse.end(),
                                [&](double r) { return r <= bound; });
  return static_cast<double>(ok) / static_cast<double>(surface.rmse.size());
}

std::string report_json(const EvalReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema"] = EvalReport::kSchema;
  j["bundle_checksum"] = r.bundle_checksum;
  j["tolerances"] = {{"energy", r.tolerances.energy},
                     {"entropy", r.tolerances.entropy},
                     {"degeneracy", r.tolerances.degeneracy}};
  auto groups = ordered_json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"group", group_name(g.group)},
                      {"sae_rank", g.rank},
                      {"sae_mse", g.sae_mse},
                      {"pod_modes", g.pod_modes},
                      {"pod_mse", g.pod_mse}});
  }
  j["groups"] = groups;

  const auto max_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  };
  j["surface"] = {{"frames", r.surface.size()},
                  {"peak_amplitude", r.peak_amplitude},
                  {"max_rmse", max_of(r.surface.rmse)},
                  {"max_hd", max_of(r.surface.hd)},
                  {"fraction_rmse_within_5pct", r.fraction_rmse_within(0.05)}};
  j["one_step"] = {{"spnn_test_mse", r.spnn_test_mse}, {"spnn_test_deg", r.spnn_test_deg}};
  j["gru_test_loss"] = r.gru_test_loss;

  auto audits = ordered_json::array();
  for (std::size_t k = 0; k < r.audits.size(); ++k) {
    const auto& a = r.audits[k];
    audits.push_back({{"rollout", k},
                      {"steps", a.steps},
                      {"completed", k < r.rollouts.size() ? r.rollouts[k].completed : true},
                      {"max_abs_e_dot", a.max_abs_e_dot},
                      {"min_s_dot", a.min_s_dot},
                      {"max_deg_residual", a.max_deg_residual},
                      {"min_eig_m", a.min_eig_m},
                      {"passed", a.passed()}});
  }
  j["audits"] = audits;
  j["audit_passed"] = r.audit_passed();
  return j.dump(2) + "\n";
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());

  write_text(dir / "report.json", report_json(r));

  std::string groups = "group,sae_rank,sae_mse,pod_modes,pod_mse\n";
  for (const auto& g : r.groups) {
    groups += std::string(group_name(g.group)) + ',' + std::to_string(g.rank) + ',' +
              num(g.sae_mse) + ',' + std::to_string(g.pod_modes) + ',' + num(g.pod_mse) + '\n';
  }
  write_text(dir / "groups.csv", groups);

  std::string series = "step,t,rmse,hd,Edot,Sdot,deg_residual\n";
  const auto& s = r.surface;
  for (std::size_t i = 0; i < s.size(); ++i) {
    series += std::to_string(i) + ',' + num(s.time[i]) + ',' + num(s.rmse[i]) + ',' +
              num(s.hd[i]) + ',' + num(s.e_dot[i]) + ',' + num(s.s_dot[i]) + ',' +
              num(s.deg_residual[i]) + '\n';
  }
  write_text(dir / "series.csv", series);

  for (std::size_t k = 0; k < r.rollouts.size(); ++k) {
    write_rollout_csv(dir / ("rollout_" + std::to_string(k) + ".csv"), r.rollouts[k]);
  }
}

}  // namespace gslosh
