#pragma once

// Grouped sparse autoencoders, the concatenated latent layout and the POD
// baseline.

#include "gslosh/data.hpp"
#include "gslosh/nn.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gslosh {

struct SaeConfig {
  std::vector<std::size_t> hidden;
  std::size_t bottleneck = 20;
  double lr = 1e-4;
  double weight_decay = 1e-6;
  double lambda_reg = 1e-3;
  std::size_t epochs = 2000;
  std::size_t batch_size = 64;  // 0 = full batch
  LrSchedule schedule;
  std::uint64_t seed = 1;
  /// Training aborts when the epoch loss exceeds this multiple of the first.
  double divergence_factor = 1e3;
  /// Linear hidden activations (used for the POD sanity comparison).
  bool linear = false;
  /// Channel consolidation after the main run: the weakest live channel is
  /// silenced and the model fine-tuned for `prune_epochs`; the removal is
  /// kept while the reconstruction error grows by at most
  /// `prune_tolerance` times the mean squared norm of the data.
  std::size_t prune_epochs = 0;
  double prune_tolerance = 1e-3;
};

/// Per-group learning parameters (lr, wd, lambda) and the full-scale
/// architecture with the epoch-1000/3000 decay schedule.
SaeConfig paper_sae_config(Group g);

class SparseAutoencoder {
 public:
  SparseAutoencoder() = default;
  SparseAutoencoder(Group group, Mlp encoder, Mlp decoder, double lambda_reg);

  /// Encoder widths {input, hidden..., bottleneck}; the decoder mirrors them.
  static SparseAutoencoder build(Group group, std::size_t input_dim,
                                 const std::vector<std::size_t>& hidden, std::size_t bottleneck,
                                 std::uint64_t seed, double lambda_reg, bool linear = false);

  Group group() const { return group_; }
  std::size_t input_dim() const { return encoder_.in_dim(); }
  std::size_t bottleneck() const { return encoder_.out_dim(); }
  double lambda_reg() const { return lambda_reg_; }

  Tensor2 encode(const Tensor2& batch) const { return encoder_.predict(batch); }
  Tensor2 decode(const Tensor2& latent) const { return decoder_.predict(latent); }
  Tensor2 reconstruct(const Tensor2& batch) const { return decode(encode(batch)); }

  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }

 private:
  Group group_ = Group::q;
  Mlp encoder_;
  Mlp decoder_;
  double lambda_reg_ = 0.0;
};

struct SaeLoss {
  double total = 0.0;
  double mse = 0.0;  // mean over snapshots of the summed squared error
  double reg = 0.0;  // mean over snapshots of the latent L1 norm
};

SaeLoss sae_loss(const Tensor2& batch, const SparseAutoencoder& model);
/// Loss terms for an explicit reconstruction and latent batch.
SaeLoss sae_loss_terms(const Tensor2& batch, const Tensor2& reconstruction,
                       const Tensor2& latent, double lambda_reg);

struct SaeTrainResult {
  SparseAutoencoder model;
  TrainingCurve curve;
  /// Bottleneck channels silenced by consolidation.
  std::vector<std::size_t> pruned;
};

/// `data` rows are normalized snapshots of one group.
SaeTrainResult train_sae(Group group, const Tensor2& data, const SaeConfig& config);

struct ActiveDims {
  std::vector<std::size_t> channels;  // indices of active bottleneck channels
  Vector stds;                        // per-channel std over the data
  std::size_t count() const { return channels.size(); }
};

/// A channel is active when its std over `data` exceeds rel_eps times the
/// largest channel std (and is non-zero).
ActiveDims measure_active_dims(const SparseAutoencoder& model, const Tensor2& data,
                               double rel_eps = 1e-3);

/// Which bottleneck channels of each group make up the latent vector, in
/// the fixed group order q, v, e, sigma, tau.
struct LatentLayout {
  static constexpr const char* kVersion = "q,v,e,sigma,tau/1";

  std::array<std::vector<std::size_t>, kGroupCount> channels;
  std::string version = kVersion;

  std::size_t dim() const;
  std::size_t offset(Group g) const;
  std::size_t slice_length(Group g) const {
    return channels[static_cast<std::size_t>(g)].size();
  }
  /// Throws ConfigError on a version mismatch.
  void check_version() const;
};

/// The full-state reducer: five autoencoders, state normalization and the
/// standardization applied to the concatenated latent vector.
struct Reducer {
  NormStats norm;
  std::array<SparseAutoencoder, kGroupCount> saes;
  LatentLayout layout;
  ChannelStats latent_stats;
  /// Raw bottleneck value fed to the decoder for pruned channels (their mean).
  std::array<Vector, kGroupCount> bottleneck_fill;

  std::size_t latent_dim() const { return layout.dim(); }
  std::size_t particles() const;

  /// Raw (physical) snapshot -> standardized latent vector.
  Vector encode(const Snapshot& s) const;
  Tensor2 encode_batch(const std::vector<const Snapshot*>& snaps) const;
  /// Standardized latent -> physical snapshot at `time`.
  Snapshot decode(const Vector& x, double time = 0.0) const;
  /// Positions only (avoids decoding the other groups).
  std::vector<double> decode_positions(const Vector& x) const;
  Tensor2 decode_group(const Tensor2& latent, Group g) const;

  void validate() const;
};

Vector encode_full(const Snapshot& s, const Reducer& r);
Snapshot decode_full(const Vector& x, const Reducer& r, double time = 0.0);

// ---------------------------------------------------------------------------

struct PodBasis {
  Vector mean;
  Tensor2 modes;  // D x r, orthonormal columns
  Vector singular_values;  // all computed singular values, non-increasing
  std::size_t rank() const { return static_cast<std::size_t>(modes.cols()); }
};

/// Truncated SVD of the mean-centered snapshot matrix (rows = snapshots).
PodBasis pod_fit(const Tensor2& data, std::size_t r);
Tensor2 pod_project_reconstruct(const PodBasis& basis, const Tensor2& data);
/// Mean over snapshots of the summed squared reconstruction residual.
double pod_error(const PodBasis& basis, const Tensor2& data);

}  // namespace gslosh
