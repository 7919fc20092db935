#pragma once

// Structure-preserving latent integrator: a feed-forward net emits
// (L, M, DE, DS) and one explicit Euler step advances the latent state.

#include "gslosh/generic.hpp"
#include "gslosh/nn.hpp"
#include "gslosh/reduction.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gslosh {

/// How the friction block of the raw output becomes M.
enum class FrictionParam {
  symmetric,  // upper triangle incl. diagonal, mirrored
  psd,        // upper-triangular A, M = A A^T
};

std::string to_string(FrictionParam p);
FrictionParam friction_param_from_string(const std::string& name);

/// d(d-1)/2 + d(d+1)/2 + 2d
constexpr std::size_t spnn_output_size(std::size_t d) {
  return d * (d - 1) / 2 + d * (d + 1) / 2 + 2 * d;
}

/// Raw layout: strict upper triangle of L (row-major), upper triangle of M
/// (or A) incl. diagonal, then DE, then DS.
GenericOperators unpack_operators(std::span<const double> raw, std::size_t d,
                                  FrictionParam param = FrictionParam::symmetric);
/// Inverse of unpack_operators for the symmetric parametrization.
Vector pack_operators(const GenericOperators& ops);

/// x + dt (L DE + M DS). Throws IntegrationError on a non-finite result.
Vector generic_step(const Vector& x, const GenericOperators& ops, double dt,
                    std::size_t step_index = 0);

/// |L DS|^2 + |M DE|^2 for one state.
double degeneracy_residual(const GenericOperators& ops);
/// Batch mean of degeneracy_residual.
double degeneracy_loss(std::span<const GenericOperators> batch);

/// L <- P_S L P_S and M <- P_E M P_E with P_v the orthogonal projector onto
/// v's complement, so L DS = 0 and M DE = 0 hold exactly. Skewness, symmetry
/// and positive semi-definiteness are kept.
GenericOperators project_degenerate(const GenericOperators& ops);

/// Smallest eigenvalue of the symmetric part of M.
double min_eigenvalue(const Tensor2& m);

struct SpnnConfig {
  std::size_t hidden_layers = 13;
  std::size_t hidden_width = 195;
  double lambda_mse = 1e3;
  /// Weight on the degeneracy term; 0 removes it (ablation).
  double degeneracy_weight = 1.0;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t epochs = 5000;
  std::size_t batch_size = 64;
  LrSchedule schedule = LrSchedule({{1500, 0.1}, {2400, 0.1}, {4000, 0.1}});
  double dt = 0.015;
  FrictionParam friction = FrictionParam::symmetric;
  /// Evaluate the operators once more at the explicit prediction.
  bool corrected = false;
  /// Integrate with project_degenerate(ops) in training and inference.
  bool project = false;
  /// Std of Gaussian noise added to the training inputs x_n (targets stay
  /// clean); 0 disables it.
  double input_noise = 0.0;
  std::uint64_t seed = 1;
  double divergence_factor = 1e3;
};

class SpnnModel {
 public:
  SpnnModel() = default;
  SpnnModel(Mlp net, std::size_t dim, FrictionParam friction, bool corrected,
            bool project = false);

  static SpnnModel build(std::size_t dim, const SpnnConfig& config);

  std::size_t dim() const { return dim_; }
  FrictionParam friction() const { return friction_; }
  bool corrected() const { return corrected_; }
  void set_corrected(bool c) { corrected_ = c; }
  bool projected() const { return project_; }
  void set_projected(bool p) { project_ = p; }
  /// Largest latent norm seen in training; scales the blow-up guard.
  double reference_norm() const { return reference_norm_; }
  void set_reference_norm(double n) { reference_norm_ = n; }

  GenericOperators operators(const Vector& x) const;
  /// One integration step; with `corrected` the operators are re-evaluated
  /// at the explicit prediction and the step is retaken from x.
  Vector step(const Vector& x, double dt, std::size_t step_index = 0) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

 private:
  Mlp net_;
  std::size_t dim_ = 0;
  FrictionParam friction_ = FrictionParam::symmetric;
  bool corrected_ = false;
  bool project_ = false;
  double reference_norm_ = 1.0;
};

struct SpnnLoss {
  double total = 0.0;
  double mse = 0.0;
  double deg = 0.0;
};

/// Loss over a batch of consecutive pairs (rows of x_n / x_next):
/// lambda_mse * mean |x_hat - x_next|^2 + weight * mean degeneracy residual.
SpnnLoss spnn_loss(const Tensor2& x_n, const Tensor2& x_next, const SpnnModel& model, double dt,
                   double lambda_mse = 1e3, double degeneracy_weight = 1.0);

/// Same loss evaluated from raw network outputs; when `d_raw` is given it
/// receives dLoss/dRaw. The step always starts from x_n, so the raw rows may
/// come from operators evaluated elsewhere. With `project` the step uses
/// project_degenerate(ops); the degeneracy term is always taken on the raw
/// operators.
SpnnLoss spnn_loss_from_raw(const Tensor2& raw, const Tensor2& x_n, const Tensor2& x_next,
                            std::size_t d, FrictionParam friction, double dt, double lambda_mse,
                            double degeneracy_weight, Tensor2* d_raw = nullptr,
                            bool project = false);

struct SpnnTrainResult {
  SpnnModel model;
  TrainingCurve curve;
};

SpnnTrainResult train_spnn(const Tensor2& x_n, const Tensor2& x_next, const SpnnConfig& config);

struct RolloutOptions {
  /// Abort when |x| exceeds blowup_factor * model.reference_norm().
  double blowup_factor = 1e3;
  double steady_tolerance = 1e-6;
  std::size_t steady_window = 50;
  /// Called after each step with the step number; a returned state
  /// replaces the integrated one (observation re-synchronization).
  std::function<std::optional<Vector>(std::size_t)> override_state;
};

struct RolloutResult {
  std::vector<Vector> states;           // n_steps + 1 on success
  std::vector<GenericOperators> operators;  // evaluated at each state
  std::vector<double> e_dot;            // DE . (L DE + M DS)
  std::vector<double> s_dot;            // DS . (L DE + M DS)
  std::vector<double> deg_residual;
  std::vector<double> min_eig_m;
  double dt = 0.0;
  bool completed = true;
  std::string error;
  std::optional<std::size_t> steady_state_step;
};

/// Iterates SpnnModel::step from x0. A blow-up or non-finite state stops the
/// run; the partial result is returned with completed = false.
RolloutResult rollout(const Vector& x0, const SpnnModel& model, std::size_t n_steps, double dt,
                      const RolloutOptions& options = {});

/// step, t, x0..x{d-1}, Edot, Sdot, deg_residual, min_eig_M
void write_rollout_csv(const std::filesystem::path& file, const RolloutResult& r);

}  // namespace gslosh
