#pragma once

// Surface error metrics, thermodynamic rollout audit and evaluation reports.

#include "gslosh/spnn.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gslosh {

/// Root of the mean squared pointwise Euclidean distance between two point
/// lists of equal length (`dim` coordinates per point).
double rmse(std::span<const double> pred, std::span<const double> truth, std::size_t dim = 2);

/// Symmetric Hausdorff distance by exhaustive pair search.
double hausdorff(std::span<const double> x, std::span<const double> y, std::size_t dim = 2);

struct AuditTolerances {
  double energy = 1e-4;
  double entropy = 1e-4;
  double degeneracy = 1e-3;
};

struct AuditSummary {
  double max_abs_e_dot = 0.0;
  double min_s_dot = 0.0;
  double max_deg_residual = 0.0;
  double min_eig_m = 0.0;
  std::size_t steps = 0;
  bool energy_ok = true;
  bool entropy_ok = true;
  bool degeneracy_ok = true;
  bool passed() const { return energy_ok && entropy_ok && degeneracy_ok; }
};

/// Recomputes E-dot, S-dot and the residual from the recorded operators.
AuditSummary thermo_audit(const RolloutResult& rollout, const AuditTolerances& tol = {});

struct GroupErrorRow {
  Group group = Group::q;
  std::size_t rank = 0;       // SAE active channels
  double sae_mse = 0.0;       // mean summed squared error, normalized units
  std::size_t pod_modes = 0;
  double pod_mse = 0.0;
};

/// One-step-ahead evaluation frames: surface errors plus the audit
/// quantities of the operators used for that step.
struct SurfaceSeries {
  std::vector<double> time;
  std::vector<double> rmse;
  std::vector<double> hd;
  std::vector<double> e_dot;
  std::vector<double> s_dot;
  std::vector<double> deg_residual;
  std::size_t size() const { return time.size(); }
};

struct EvalReport {
  static constexpr const char* kSchema = "gslosh-report/1";

  std::string bundle_checksum;
  std::vector<GroupErrorRow> groups;
  SurfaceSeries surface;
  double peak_amplitude = 0.0;
  double spnn_test_mse = 0.0;
  double spnn_test_deg = 0.0;
  double gru_test_loss = 0.0;
  std::vector<RolloutResult> rollouts;
  std::vector<AuditSummary> audits;
  AuditTolerances tolerances;

  /// Every audit passes and every rollout ran to the requested length.
  bool audit_passed() const;
  /// Fraction of frames whose RMSE is at most `rel` times the peak amplitude.
  double fraction_rmse_within(double rel) const;
};

/// Writes report.json, groups.csv, series.csv and rollout_<k>.csv into
/// `dir`. Output is a pure function of the report contents.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

/// JSON rendering used by write_report.
std::string report_json(const EvalReport& report);

}  // namespace gslosh
