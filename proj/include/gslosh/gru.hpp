#pragma once

// Gated recurrent encoder mapping a fixed-length observation window to one
// latent vector (many-to-one).

#include "gslosh/constants.hpp"
#include "gslosh/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace gslosh {

/// Bias-free GRU cell, row-vector convention (x U + h W):
///   z = sigmoid(x Uz + h Wz)
///   r = sigmoid(x Ur + h Wr)
///   n = tanh(x Uh + (r * h) Wh)
///   h' = (1 - z) * h + z * n
struct GruCell {
  Tensor2 uz, ur, uh;  // input x hidden
  Tensor2 wz, wr, wh;  // hidden x hidden
  Tensor2 guz, gur, guh, gwz, gwr, gwh;

  GruCell() = default;
  GruCell(std::size_t input, std::size_t hidden, std::uint64_t seed);

  std::size_t input_size() const { return static_cast<std::size_t>(uz.rows()); }
  std::size_t hidden_size() const { return static_cast<std::size_t>(uz.cols()); }
  std::size_t parameter_count() const;

  /// Throws ConfigError if the six matrices disagree on (input, hidden).
  void validate() const;
  void zero_grad();
  void collect_params(std::vector<ParamSlot>& out);
};

/// Intermediate values of one step, kept for backpropagation.
struct GruStepCache {
  Tensor2 x, h_prev, z, r, n, rh;
};

/// One step on a batch (rows = samples). Fills `cache` when given.
Tensor2 gru_cell_step(const Tensor2& x, const Tensor2& h_prev, const GruCell& cell,
                      GruStepCache* cache = nullptr);

/// Backpropagates dLoss/dh_t through one step: accumulates into the cell's
/// gradients, returns dLoss/dx and writes dLoss/dh_prev.
Tensor2 gru_cell_backward(const Tensor2& dh, const GruStepCache& cache, GruCell& cell,
                          Tensor2& dh_prev);

class GruEncoder {
 public:
  GruEncoder() = default;
  GruEncoder(std::size_t input, std::size_t hidden, std::size_t layers, std::size_t output,
             std::uint64_t seed, std::size_t sequence_length = kSequenceLength);
  GruEncoder(std::vector<GruCell> cells, DenseLayer head, std::size_t sequence_length);

  std::size_t input_size() const;
  std::size_t hidden_size() const;
  std::size_t output_size() const { return head_.out_dim(); }
  std::size_t sequence_length() const { return seq_len_; }
  std::size_t parameter_count() const;

  /// `window[t]` is the batch of observations at frame t (rows = samples).
  /// Zero initial hidden states; the head reads the top layer's final state.
  Tensor2 forward(const std::vector<Tensor2>& window);
  Tensor2 predict(const std::vector<Tensor2>& window) const;
  /// Single sequence: `frames` holds sequence_length() observation vectors.
  Vector predict_one(const std::vector<Vector>& frames) const;

  /// dLoss/dOutput for the cached batch -> parameter gradients (BPTT).
  void backward(const Tensor2& upstream);

  void zero_grad();
  void collect_params(std::vector<ParamSlot>& out);
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);
  std::vector<double> flat_grads() const;

  const std::vector<GruCell>& cells() const { return cells_; }
  std::vector<GruCell>& cells() { return cells_; }
  const DenseLayer& head() const { return head_; }
  DenseLayer& head() { return head_; }

 private:
  void check_window(const std::vector<Tensor2>& window) const;

  std::vector<GruCell> cells_;
  DenseLayer head_;
  std::size_t seq_len_ = kSequenceLength;
  // caches_[layer][t]
  std::vector<std::vector<GruStepCache>> caches_;
  Tensor2 top_final_;
  bool cached_ = false;
};

/// Loss = mean over samples of the squared error summed over components.
double gru_loss(const Tensor2& predicted, const Tensor2& target);
/// dLoss/dPredicted for gru_loss.
Tensor2 gru_loss_grad(const Tensor2& predicted, const Tensor2& target);

struct GruConfig {
  std::size_t hidden = 26;
  std::size_t layers = 3;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t epochs = 10000;
  std::size_t batch_size = 64;  // 0 = full batch
  LrSchedule schedule = LrSchedule({{1000, 0.1}, {3000, 0.1}});
  /// Std of Gaussian noise added to the normalized training frames (targets
  /// stay clean); 0 disables it.
  double input_noise = 0.0;
  std::uint64_t seed = 1;
  double divergence_factor = 1e3;
};

struct GruTrainResult {
  GruEncoder model;
  TrainingCurve curve;
};

/// `window[t]` holds frame t of every sample (N x input); `targets` is N x d.
GruTrainResult train_gru(const std::vector<Tensor2>& window, const Tensor2& targets,
                         const GruConfig& config);

/// Rows `rows` of every frame tensor.
std::vector<Tensor2> gather_window(const std::vector<Tensor2>& window,
                                   std::span<const std::size_t> rows);

}  // namespace gslosh
