#include "gslosh/reduction.hpp"

#include "gslosh/errors.hpp"
#include "gslosh/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <numeric>
#include <random>

namespace gslosh {

SaeConfig paper_sae_config(Group g) {
  SaeConfig c;
  c.schedule = LrSchedule({{1000, 0.1}, {3000, 0.1}});
  c.epochs = 10000;
  switch (g) {
    case Group::q:
      c.hidden = {120, 120};
      c.bottleneck = 20;
      c.lr = 1e-4, c.weight_decay = 1e-6, c.lambda_reg = 1e-3;
      break;
    case Group::v:
      c.hidden = {200, 200, 200, 200};
      c.bottleneck = 20;
      c.lr = 1e-4, c.weight_decay = 1e-5, c.lambda_reg = 1e-3;
      break;
    case Group::e:
      c.hidden = {40, 40, 40};
      c.bottleneck = 10;
      c.lr = 1e-4, c.weight_decay = 1e-5, c.lambda_reg = 1e-4;
      break;
    case Group::sigma:
      c.hidden = {200, 200, 200};
      c.bottleneck = 20;
      c.lr = 1e-4, c.weight_decay = 1e-5, c.lambda_reg = 5e-3;
      break;
    case Group::tau:
      c.hidden = {200, 200, 200};
      c.bottleneck = 20;
      c.lr = 1e-3, c.weight_decay = 1e-6, c.lambda_reg = 5e-3;
      break;
  }
  return c;
}

SparseAutoencoder::SparseAutoencoder(Group group, Mlp encoder, Mlp decoder, double lambda_reg)
    : group_(group), encoder_(std::move(encoder)), decoder_(std::move(decoder)),
      lambda_reg_(lambda_reg) {
  auto ew = encoder_.widths();
  auto dw = decoder_.widths();
  std::reverse(dw.begin(), dw.end());
  if (ew != dw) throw ConfigError("autoencoder: decoder widths must mirror the encoder");
}

SparseAutoencoder SparseAutoencoder::build(Group group, std::size_t input_dim,
                                           const std::vector<std::size_t>& hidden,
                                           std::size_t bottleneck, std::uint64_t seed,
                                           double lambda_reg, bool linear) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(bottleneck);
  std::vector<std::size_t> mirrored(widths.rbegin(), widths.rend());
  const Activation act = linear ? Activation::linear : Activation::relu;
  return SparseAutoencoder(group, Mlp::build(widths, seed, act),
                           Mlp::build(mirrored, seed ^ 0x9e3779b97f4a7c15ULL, act), lambda_reg);
}

SaeLoss sae_loss_terms(const Tensor2& batch, const Tensor2& reconstruction,
                       const Tensor2& latent, double lambda_reg) {
  SaeLoss l;
  if (batch.rows() == 0) return l;
  const auto n = static_cast<double>(batch.rows());
  l.mse = (batch - reconstruction).squaredNorm() / n;
  l.reg = latent.cwiseAbs().sum() / n;
  l.total = l.mse + lambda_reg * l.reg;
  return l;
}

SaeLoss sae_loss(const Tensor2& batch, const SparseAutoencoder& model) {
  const Tensor2 latent = model.encode(batch);
  return sae_loss_terms(batch, model.decode(latent), latent, model.lambda_reg());
}

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void silence(Mlp& encoder, const std::vector<std::size_t>& channels) {
  auto& last = encoder.layers().back();
  for (std::size_t c : channels) {
    last.weights.row(static_cast<Eigen::Index>(c)).setZero();
    last.biases[static_cast<Eigen::Index>(c)] = 0.0;
  }
}

// Minibatch Adam epochs on the SAE loss; rows are appended to `curve`.
void run_sae_epochs(SparseAutoencoder& model, Group group, const Tensor2& data,
                    const SaeConfig& cfg, std::size_t epochs, double lr, const LrSchedule& schedule,
                    const std::vector<std::size_t>& silenced, std::mt19937_64& rng,
                    TrainingCurve& curve) {
  auto& enc = model.encoder();
  auto& dec = model.decoder();
  std::vector<ParamSlot> slots;
  enc.collect_params(slots);
  dec.collect_params(slots);
  AdamState adam(enc.parameter_count() + dec.parameter_count(), lr, cfg.weight_decay);

  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Tensor2 batch;
  const std::size_t base = curve.rows.size();

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    apply_schedule(adam, schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_mse = 0.0, sum_reg = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t b = std::min(bs, n - start);
      batch.resize(static_cast<Eigen::Index>(b), data.cols());
      for (std::size_t i = 0; i < b; ++i) batch.row(i) = data.row(order[start + i]);
      const Tensor2 latent = enc.forward(batch);
      const Tensor2 recon = dec.forward(latent);
      const auto terms = sae_loss_terms(batch, recon, latent, cfg.lambda_reg);
      sum_mse += terms.mse * static_cast<double>(b);
      sum_reg += terms.reg * static_cast<double>(b);

      const double inv = 1.0 / static_cast<double>(b);
      Tensor2 d_latent = dec.backward(2.0 * inv * (recon - batch));
      d_latent += (cfg.lambda_reg * inv) * latent.unaryExpr(&sign);
      enc.backward(d_latent);
      try {
        adam_step(slots, adam);
      } catch (const TrainingError& e) {
        throw TrainingError("sae[" + std::string(group_name(group)) + "] epoch " +
                            std::to_string(base + epoch + 1) + ": " + e.what());
      }
      if (!silenced.empty()) silence(enc, silenced);
    }
    CurveRow row{base + epoch + 1, sum_mse / static_cast<double>(n),
                 sum_reg / static_cast<double>(n), 0};
    row.total = row.mse + cfg.lambda_reg * row.reg;
    curve.rows.push_back(row);
    const double first = curve.first_total();
    if (!std::isfinite(row.total) || row.total > cfg.divergence_factor * std::max(first, 1e-300)) {
      throw TrainingError("sae[" + std::string(group_name(group)) + "] diverged at epoch " +
                          std::to_string(row.epoch) + ": loss " + std::to_string(row.total) +
                          " vs initial " + std::to_string(first) + " (lr " +
                          std::to_string(adam.lr) + ")");
    }
  }
}

}  // namespace

SaeTrainResult train_sae(Group group, const Tensor2& data, const SaeConfig& cfg) {
  if (data.rows() == 0) throw DataError("train_sae: no training snapshots");
  if (cfg.bottleneck == 0) throw ConfigError("train_sae: bottleneck must be positive");
  SaeTrainResult res;
  res.model = SparseAutoencoder::build(group, static_cast<std::size_t>(data.cols()), cfg.hidden,
                                       cfg.bottleneck, cfg.seed, cfg.lambda_reg, cfg.linear);
  std::mt19937_64 rng(cfg.seed + 1);
  run_sae_epochs(res.model, group, data, cfg, cfg.epochs, cfg.lr, cfg.schedule, {}, rng,
                 res.curve);
  if (cfg.prune_epochs == 0) return res;

  const double reference = sae_loss(data, res.model).mse;
  const double budget =
      reference + cfg.prune_tolerance * data.squaredNorm() / static_cast<double>(data.rows());
  const auto tune_schedule =
      LrSchedule({{std::max<std::size_t>(1, cfg.prune_epochs * 7 / 10), 0.1}});
  while (res.pruned.size() + 1 < cfg.bottleneck) {
    const Tensor2 code = res.model.encode(data);
    const auto& w = res.model.decoder().layers().front().weights;
    std::size_t weakest = cfg.bottleneck;
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cfg.bottleneck; ++c) {
      if (std::find(res.pruned.begin(), res.pruned.end(), c) != res.pruned.end()) continue;
      const auto col = code.col(static_cast<Eigen::Index>(c));
      const double sd = std::sqrt((col.array() - col.mean()).square().mean());
      const double weight = sd * w.col(static_cast<Eigen::Index>(c)).norm();
      if (weight < smallest) {
        smallest = weight;
        weakest = c;
      }
    }
    SparseAutoencoder trial = res.model;
    TrainingCurve trial_curve = res.curve;
    auto trial_pruned = res.pruned;
    trial_pruned.push_back(weakest);
    silence(trial.encoder(), trial_pruned);
    std::mt19937_64 trial_rng = rng;
    run_sae_epochs(trial, group, data, cfg, cfg.prune_epochs, cfg.lr, tune_schedule, trial_pruned,
                   trial_rng, trial_curve);
    if (sae_loss(data, trial).mse > budget) break;
    res.model = std::move(trial);
    res.curve = std::move(trial_curve);
    res.pruned = std::move(trial_pruned);
    rng = trial_rng;
  }
  std::sort(res.pruned.begin(), res.pruned.end());
  return res;
}

ActiveDims measure_active_dims(const SparseAutoencoder& model, const Tensor2& data,
                               double rel_eps) {
  ActiveDims out;
  const Tensor2 latent = model.encode(data);
  const auto n = static_cast<double>(std::max<Eigen::Index>(latent.rows(), 1));
  out.stds = Vector(latent.cols());
  for (Eigen::Index c = 0; c < latent.cols(); ++c) {
    const double mean = latent.col(c).mean();
    out.stds[c] = std::sqrt((latent.col(c).array() - mean).square().sum() / n);
  }
  const double largest = out.stds.size() ? out.stds.maxCoeff() : 0.0;
  for (Eigen::Index c = 0; c < out.stds.size(); ++c) {
    if (out.stds[c] > 0.0 && out.stds[c] > rel_eps * largest) {
      out.channels.push_back(static_cast<std::size_t>(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t LatentLayout::dim() const {
  std::size_t d = 0;
  for (const auto& c : channels) d += c.size();
  return d;
}

std::size_t LatentLayout::offset(Group g) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(g); ++i) off += channels[i].size();
  return off;
}

void LatentLayout::check_version() const {
  if (version != kVersion) {
    throw ConfigError("latent layout version '" + version + "' does not match '" + kVersion +
                      "'");
  }
}

std::size_t Reducer::particles() const { return norm[Group::e].size(); }

void Reducer::validate() const {
  layout.check_version();
  for (Group g : kGroups) {
    const auto gi = static_cast<std::size_t>(g);
    const auto& sae = saes[gi];
    if (sae.group() != g) throw ConfigError("reducer: autoencoder order mismatch");
    if (sae.input_dim() != norm[g].size()) {
      throw ConfigError(std::string("reducer: ") + group_name(g) +
                        " autoencoder input does not match normalization width");
    }
    for (std::size_t c : layout.channels[gi]) {
      if (c >= sae.bottleneck()) throw ConfigError("reducer: latent channel out of range");
    }
    if (static_cast<std::size_t>(bottleneck_fill[gi].size()) != sae.bottleneck()) {
      throw ConfigError("reducer: bottleneck fill width mismatch");
    }
  }
  if (latent_stats.size() != layout.dim()) {
    throw ConfigError("reducer: latent statistics width does not match the layout");
  }
}

Tensor2 Reducer::encode_batch(const std::vector<const Snapshot*>& snaps) const {
  const auto n = static_cast<Eigen::Index>(snaps.size());
  Tensor2 latent(n, static_cast<Eigen::Index>(layout.dim()));
  for (Group g : kGroups) {
    const auto gi = static_cast<std::size_t>(g);
    const auto& chans = layout.channels[gi];
    if (chans.empty()) continue;
    const std::size_t width = norm[g].size();
    Tensor2 block(n, static_cast<Eigen::Index>(width));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& src = snaps[i]->group(g);
      if (src.size() != width) {
        throw DataError(std::string("encode: ") + group_name(g) + " block has " +
                        std::to_string(src.size()) + " values, expected " + std::to_string(width));
      }
      std::copy(src.begin(), src.end(), block.row(i).data());
    }
    const Tensor2 code = saes[gi].encode(norm[g].normalize(block));
    const auto off = static_cast<Eigen::Index>(layout.offset(g));
    for (std::size_t k = 0; k < chans.size(); ++k) {
      latent.col(off + static_cast<Eigen::Index>(k)) = code.col(static_cast<Eigen::Index>(chans[k]));
    }
  }
  return latent_stats.normalize(latent);
}

Vector Reducer::encode(const Snapshot& s) const {
  return encode_batch({&s}).row(0).transpose();
}

Tensor2 Reducer::decode_group(const Tensor2& latent, Group g) const {
  const auto gi = static_cast<std::size_t>(g);
  const Tensor2 raw = latent_stats.denormalize(latent);
  Tensor2 code(raw.rows(), static_cast<Eigen::Index>(saes[gi].bottleneck()));
  code.rowwise() = bottleneck_fill[gi].transpose();
  const auto off = static_cast<Eigen::Index>(layout.offset(g));
  const auto& chans = layout.channels[gi];
  for (std::size_t k = 0; k < chans.size(); ++k) {
    code.col(static_cast<Eigen::Index>(chans[k])) = raw.col(off + static_cast<Eigen::Index>(k));
  }
  Tensor2 out = norm[g].denormalize(saes[gi].decode(code));
  norm[g].restore_constants(out);
  return out;
}

Snapshot Reducer::decode(const Vector& x, double time) const {
  if (static_cast<std::size_t>(x.size()) != layout.dim()) {
    throw ConfigError("decode: latent has " + std::to_string(x.size()) + " entries, layout has " +
                      std::to_string(layout.dim()));
  }
  const Tensor2 row = x.transpose();
  Snapshot s;
  s.time = time;
  for (Group g : kGroups) {
    const Tensor2 block = decode_group(row, g);
    s.group(g).assign(block.data(), block.data() + block.size());
  }
  return s;
}

std::vector<double> Reducer::decode_positions(const Vector& x) const {
  const Tensor2 block = decode_group(Tensor2(x.transpose()), Group::q);
  return {block.data(), block.data() + block.size()};
}

Vector encode_full(const Snapshot& s, const Reducer& r) { return r.encode(s); }
Snapshot decode_full(const Vector& x, const Reducer& r, double time) { return r.decode(x, time); }

// ---------------------------------------------------------------------------
// POD via the eigen-decomposition of the smaller Gram/covariance matrix.

namespace {

void orthonormalize(Tensor2& q, std::size_t start) {
  for (Eigen::Index j = static_cast<Eigen::Index>(start); j < q.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
    }
    q.col(j).normalize();
  }
}

}  // namespace

PodBasis pod_fit(const Tensor2& data, std::size_t r) {
  const auto n = data.rows();
  const auto dim = data.cols();
  if (n == 0 || dim == 0) throw DataError("pod: empty data");
  if (r == 0) throw ConfigError("pod: rank must be positive");
  if (r > static_cast<std::size_t>(dim)) {
    throw ConfigError("pod: rank " + std::to_string(r) + " exceeds dimension " +
                      std::to_string(dim));
  }
  PodBasis b;
  b.mean = data.colwise().mean().transpose();
  Eigen::MatrixXd x = data;
  x.rowwise() -= b.mean.transpose();

  const bool covariance = dim <= n;
  Eigen::MatrixXd gram = covariance ? Eigen::MatrixXd(x.transpose() * x)
                                    : Eigen::MatrixXd(x * x.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw DataError("pod: eigen-decomposition failed");
  const auto m = gram.rows();
  // Eigen returns ascending eigenvalues.
  b.singular_values = Vector(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    b.singular_values[i] = std::sqrt(std::max(0.0, eig.eigenvalues()[m - 1 - i]));
  }
  const double top = b.singular_values.size() ? b.singular_values[0] : 0.0;
  const double tol = std::max(1e-300, top * 1e-10 * static_cast<double>(std::max(n, dim)));

  b.modes = Tensor2::Zero(dim, static_cast<Eigen::Index>(r));
  std::size_t filled = 0;
  for (std::size_t i = 0; i < r && i < static_cast<std::size_t>(m); ++i) {
    const double s = b.singular_values[static_cast<Eigen::Index>(i)];
    if (!(s > tol)) break;
    const Eigen::VectorXd u = eig.eigenvectors().col(m - 1 - static_cast<Eigen::Index>(i));
    b.modes.col(static_cast<Eigen::Index>(i)) = covariance ? u : Eigen::VectorXd(x.transpose() * u / s);
    ++filled;
  }
  orthonormalize(b.modes, 0);
  if (filled < r) {
    log_warning("pod: requested " + std::to_string(r) + " modes but data rank is " +
                std::to_string(filled) + "; padding with orthonormal completion");
    // Complete with coordinate directions, skipping ones already spanned.
    std::size_t col = filled;
    for (Eigen::Index e = 0; e < dim && col < r; ++e) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(dim, e);
      for (std::size_t k = 0; k < col; ++k) {
        cand -= b.modes.col(static_cast<Eigen::Index>(k)).dot(cand) *
                b.modes.col(static_cast<Eigen::Index>(k));
      }
      if (cand.norm() < 1e-6) continue;
      b.modes.col(static_cast<Eigen::Index>(col)) = cand.normalized();
      orthonormalize(b.modes, col);
      ++col;
    }
  }
  return b;
}

Tensor2 pod_project_reconstruct(const PodBasis& basis, const Tensor2& data) {
  if (data.cols() != basis.mean.size()) throw DataError("pod: data width mismatch");
  Tensor2 centered = data;
  centered.rowwise() -= basis.mean.transpose();
  Tensor2 recon = (centered * basis.modes) * basis.modes.transpose();
  recon.rowwise() += basis.mean.transpose();
  return recon;
}

double pod_error(const PodBasis& basis, const Tensor2& data) {
  if (data.rows() == 0) return 0.0;
  return (data - pod_project_reconstruct(basis, data)).squaredNorm() /
         static_cast<double>(data.rows());
}

}  // namespace gslosh
