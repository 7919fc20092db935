#pragma once

// Dense layers, feed-forward chains with cached reverse-mode gradients,
// initialization and the Adam optimizer shared by every learned component.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gslosh {

/// Row-major dense matrix. Batches are stored one sample per row.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { linear, relu, sigmoid, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Applies the activation elementwise.
Tensor2 activate(Activation a, const Tensor2& pre);

/// Derivative of the activation, evaluated from pre-activations and outputs.
/// relu'(0) is taken as 0.
Tensor2 activation_derivative(Activation a, const Tensor2& pre, const Tensor2& out);

/// A learnable tensor and its gradient, viewed as flat spans.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

struct DenseLayer {
  Tensor2 weights;  // out x in
  Vector biases;    // out
  Activation activation = Activation::linear;

  Tensor2 grad_weights;
  Vector grad_biases;

  DenseLayer() = default;
  DenseLayer(Tensor2 w, Vector b, Activation act);

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t parameter_count() const { return weights.size() + biases.size(); }
};

/// Feed-forward chain. forward() caches per-layer activations so backward()
/// can return parameter gradients without a tape.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// widths = {in, hidden..., out}; hidden layers use `hidden`, the output
  /// layer `output`. Weights are Kaiming-initialized, biases zero.
  static Mlp build(std::span<const std::size_t> widths, std::uint64_t seed,
                   Activation hidden = Activation::relu, Activation output = Activation::linear);

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::size_t depth() const { return layers_.size(); }
  std::vector<std::size_t> widths() const;
  std::size_t parameter_count() const;

  /// Training forward pass on a batch (rows = samples). Caches activations.
  Tensor2 forward(const Tensor2& batch);
  /// Single-vector convenience wrapper around forward().
  Vector forward(const Vector& input);
  /// Inference forward pass; no cache, safe to call concurrently.
  Tensor2 predict(const Tensor2& batch) const;
  Vector predict(const Vector& input) const;

  /// Consumes dLoss/dOutput for the cached batch, stores parameter gradients
  /// and returns dLoss/dInput. Throws StateError if forward() was not called.
  Tensor2 backward(const Tensor2& upstream);

  void zero_grad();
  void collect_params(std::vector<ParamSlot>& out);

  /// Flat copies of parameters (layer by layer, weights then biases).
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);
  std::vector<double> flat_grads() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
  // inputs_[i] is the input to layer i, pre_[i]/post_[i] its pre/post activation.
  std::vector<Tensor2> inputs_;
  std::vector<Tensor2> pre_;
  std::vector<Tensor2> post_;
  bool cached_ = false;
};

/// Weights ~ N(0, 2 / fan_in) with fan_in = cols; deterministic per seed.
Tensor2 kaiming_init(std::size_t rows, std::size_t cols, std::uint64_t seed);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n_params, double lr, double wd);
};

/// One Adam update with decoupled weight decay over all slots (moments are
/// laid out in slot order). Throws TrainingError on a non-finite gradient.
void adam_step(std::span<const ParamSlot> params, AdamState& state);
/// Flat-vector overload.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

struct Milestone {
  std::size_t epoch;
  double multiplier;
};

class LrSchedule {
 public:
  LrSchedule() = default;
  /// Throws ConfigError unless thresholds are strictly increasing.
  explicit LrSchedule(std::vector<Milestone> milestones);
  const std::vector<Milestone>& milestones() const { return milestones_; }

 private:
  std::vector<Milestone> milestones_;
};

/// Multiplies state.lr by every milestone multiplier whose threshold equals
/// `epoch` and returns the new learning rate.
double apply_schedule(AdamState& state, const LrSchedule& schedule, std::size_t epoch);

/// Sum of squares over every gradient; handy for divergence diagnostics.
double grad_norm_sq(std::span<const ParamSlot> params);

struct CurveRow {
  std::size_t epoch = 0;
  double mse = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Per-epoch training losses; CSV columns depend on the stage.
struct TrainingCurve {
  std::vector<CurveRow> rows;
  std::string reg_label = "reg";

  bool empty() const { return rows.empty(); }
  double first_total() const { return rows.empty() ? 0.0 : rows.front().total; }
  double last_total() const { return rows.empty() ? 0.0 : rows.back().total; }
  /// "epoch,mse,<reg_label>,total"
  void write_csv(const std::filesystem::path& file) const;
};

}  // namespace gslosh
