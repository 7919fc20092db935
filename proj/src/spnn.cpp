#include "gslosh/spnn.hpp"

#include "gslosh/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace gslosh {

std::string to_string(FrictionParam p) {
  return p == FrictionParam::psd ? "psd" : "symmetric";
}

FrictionParam friction_param_from_string(const std::string& name) {
  if (name == "symmetric") return FrictionParam::symmetric;
  if (name == "psd") return FrictionParam::psd;
  throw ConfigError("unknown friction parametrization '" + name + "'");
}

GenericOperators unpack_operators(std::span<const double> raw, std::size_t d,
                                  FrictionParam param) {
  if (raw.size() != spnn_output_size(d)) {
    throw ConfigError("unpack: raw output has " + std::to_string(raw.size()) +
                      " entries, expected " + std::to_string(spnn_output_size(d)) + " for d = " +
                      std::to_string(d));
  }
  const auto n = static_cast<Eigen::Index>(d);
  GenericOperators ops;
  ops.L = Tensor2::Zero(n, n);
  ops.M = Tensor2::Zero(n, n);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      ops.L(i, j) = raw[k];
      ops.L(j, i) = -raw[k];
      ++k;
    }
  }
  Tensor2 upper = Tensor2::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) upper(i, j) = raw[k++];
  }
  if (param == FrictionParam::symmetric) {
    ops.M = upper;
    ops.M.triangularView<Eigen::StrictlyLower>() = upper.transpose().triangularView<Eigen::StrictlyLower>();
  } else {
    ops.M = upper * upper.transpose();
    // Exact symmetry regardless of rounding order.
    ops.M = 0.5 * (ops.M + Tensor2(ops.M.transpose()));
  }
  ops.DE = Eigen::Map<const Vector>(raw.data() + k, n);
  k += d;
  ops.DS = Eigen::Map<const Vector>(raw.data() + k, n);
  return ops;
}

Vector pack_operators(const GenericOperators& ops) {
  const auto n = ops.DE.size();
  const auto d = static_cast<std::size_t>(n);
  Vector raw(static_cast<Eigen::Index>(spnn_output_size(d)));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) raw[k++] = ops.L(i, j);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) raw[k++] = ops.M(i, j);
  }
  raw.segment(k, n) = ops.DE;
  raw.segment(k + n, n) = ops.DS;
  return raw;
}

Vector generic_step(const Vector& x, const GenericOperators& ops, double dt,
                    std::size_t step_index) {
  if (!(dt > 0.0)) throw ConfigError("generic_step: dt must be positive");
  if (x.size() != ops.DE.size()) throw ConfigError("generic_step: state/operator size mismatch");
  Vector next = x + dt * ops.rate();
  if (!next.allFinite()) {
    throw IntegrationError("generic_step: non-finite state at step " + std::to_string(step_index));
  }
  return next;
}

namespace {

// P A P with P = I - u u^T, u = v / |v|; A unchanged when v = 0.
Tensor2 sandwich(const Tensor2& a, const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0)) return a;
  const Vector u = v / n;
  const Vector au = a * u;
  const Vector ua = a.transpose() * u;
  const double uau = u.dot(au);
  Tensor2 out = a - au * u.transpose() - u * ua.transpose() + uau * (u * u.transpose());
  return out;
}

}  // namespace

GenericOperators project_degenerate(const GenericOperators& ops) {
  GenericOperators out = ops;
  out.L = sandwich(ops.L, ops.DS);
  out.L = 0.5 * (out.L - out.L.transpose()).eval();
  out.M = sandwich(ops.M, ops.DE);
  out.M = 0.5 * (out.M + out.M.transpose()).eval();
  return out;
}

double degeneracy_residual(const GenericOperators& ops) {
  return (ops.L * ops.DS).squaredNorm() + (ops.M * ops.DE).squaredNorm();
}

double degeneracy_loss(std::span<const GenericOperators> batch) {
  if (batch.empty()) return 0.0;
  double s = 0.0;
  for (const auto& ops : batch) s += degeneracy_residual(ops);
  return s / static_cast<double>(batch.size());
}

double min_eigenvalue(const Tensor2& m) {
  if (m.size() == 0) return 0.0;
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------

SpnnModel::SpnnModel(Mlp net, std::size_t dim, FrictionParam friction, bool corrected,
                     bool project)
    : net_(std::move(net)), dim_(dim), friction_(friction), corrected_(corrected),
      project_(project) {
  if (net_.in_dim() != dim_ || net_.out_dim() != spnn_output_size(dim_)) {
    throw ConfigError("spnn: network maps " + std::to_string(net_.in_dim()) + " -> " +
                      std::to_string(net_.out_dim()) + ", expected " + std::to_string(dim_) +
                      " -> " + std::to_string(spnn_output_size(dim_)));
  }
}

SpnnModel SpnnModel::build(std::size_t dim, const SpnnConfig& cfg) {
  if (dim == 0) throw ConfigError("spnn: latent dimension must be positive");
  std::vector<std::size_t> widths{dim};
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) widths.push_back(cfg.hidden_width);
  widths.push_back(spnn_output_size(dim));
  return SpnnModel(Mlp::build(widths, cfg.seed), dim, cfg.friction, cfg.corrected, cfg.project);
}

GenericOperators SpnnModel::operators(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_) {
    throw ConfigError("spnn: state has " + std::to_string(x.size()) + " entries, expected " +
                      std::to_string(dim_));
  }
  const Vector raw = net_.predict(x);
  auto ops = unpack_operators({raw.data(), static_cast<std::size_t>(raw.size())}, dim_, friction_);
  return project_ ? project_degenerate(ops) : ops;
}

Vector SpnnModel::step(const Vector& x, double dt, std::size_t step_index) const {
  Vector next = generic_step(x, operators(x), dt, step_index);
  if (corrected_) next = generic_step(x, operators(next), dt, step_index);
  return next;
}

namespace {

// Backpropagates G = dLoss/d(P A P) into dLoss/dA (added to `da`) and
// dLoss/dv (added to `dv`), with P = I - u u^T and u = v / |v|.
void sandwich_backward(const Tensor2& g, const Tensor2& a, const Vector& v, Tensor2& da,
                       Vector& dv) {
  const double n = v.norm();
  if (!(n > 0.0)) {
    da += g;
    return;
  }
  const Vector u = v / n;
  const auto d = v.size();
  const Tensor2 p = Tensor2::Identity(d, d) - u * u.transpose();
  da += p * g * p;
  const Tensor2 h = g * p * a.transpose() + a.transpose() * p * g;
  const Vector du = -(h + h.transpose()) * u;
  dv += p * du / n;
}

}  // namespace

SpnnLoss spnn_loss_from_raw(const Tensor2& raw, const Tensor2& x_n, const Tensor2& x_next,
                            std::size_t d, FrictionParam friction, double dt, double lambda_mse,
                            double degeneracy_weight, Tensor2* d_raw, bool project) {
  const auto batch = raw.rows();
  if (x_n.rows() != batch || x_next.rows() != batch ||
      static_cast<std::size_t>(x_n.cols()) != d || static_cast<std::size_t>(x_next.cols()) != d) {
    throw ConfigError("spnn loss: batch shape mismatch");
  }
  SpnnLoss loss;
  if (batch == 0) return loss;
  const double inv = 1.0 / static_cast<double>(batch);
  const auto n = static_cast<Eigen::Index>(d);
  if (d_raw) d_raw->resize(batch, raw.cols());

  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto ops = unpack_operators({raw.row(b).data(), static_cast<std::size_t>(raw.cols())},
                                      d, friction);
    const auto used = project ? project_degenerate(ops) : ops;
    const Vector f = used.rate();
    const Vector r = x_n.row(b).transpose() + dt * f - x_next.row(b).transpose();
    const Vector a = ops.L * ops.DS;
    const Vector c = ops.M * ops.DE;
    loss.mse += r.squaredNorm();
    loss.deg += a.squaredNorm() + c.squaredNorm();
    if (!d_raw) continue;

    const Vector g = (2.0 * lambda_mse * inv * dt) * r;
    const double w = 2.0 * degeneracy_weight * inv;
    Tensor2 dl = w * a * ops.DS.transpose();
    Tensor2 dm = w * c * ops.DE.transpose();
    Vector dde = used.L.transpose() * g + w * ops.M.transpose() * c;
    Vector dds = used.M.transpose() * g + w * ops.L.transpose() * a;
    const Tensor2 gl = g * ops.DE.transpose();
    const Tensor2 gm = g * ops.DS.transpose();
    if (project) {
      sandwich_backward(0.5 * (gl - gl.transpose()), ops.L, ops.DS, dl, dds);
      sandwich_backward(0.5 * (gm + gm.transpose()), ops.M, ops.DE, dm, dde);
    } else {
      dl += gl;
      dm += gm;
    }

    auto out = d_raw->row(b);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) out[k++] = dl(i, j) - dl(j, i);
    }
    if (friction == FrictionParam::symmetric) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) out[k++] = i == j ? dm(i, i) : dm(i, j) + dm(j, i);
      }
    } else {
      Tensor2 upper = Tensor2::Zero(n, n);
      Eigen::Index kk = k;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) upper(i, j) = raw(b, kk++);
      }
      // M = sym(A A^T): dA = (dM + dM^T) A, halved by the symmetrization.
      const Tensor2 da = (dm + dm.transpose()) * upper;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) out[k++] = da(i, j);
      }
    }
    out.segment(k, n) = dde.transpose();
    out.segment(k + n, n) = dds.transpose();
  }
  loss.mse *= inv;
  loss.deg *= inv;
  loss.total = lambda_mse * loss.mse + degeneracy_weight * loss.deg;
  return loss;
}

SpnnLoss spnn_loss(const Tensor2& x_n, const Tensor2& x_next, const SpnnModel& model, double dt,
                   double lambda_mse, double degeneracy_weight) {
  Tensor2 eval_at = x_n;
  if (model.corrected()) {
    const Tensor2 raw0 = model.net().predict(x_n);
    for (Eigen::Index b = 0; b < x_n.rows(); ++b) {
      auto ops = unpack_operators({raw0.row(b).data(), static_cast<std::size_t>(raw0.cols())},
                                  model.dim(), model.friction());
      if (model.projected()) ops = project_degenerate(ops);
      eval_at.row(b) = x_n.row(b) + dt * ops.rate().transpose();
    }
  }
  return spnn_loss_from_raw(model.net().predict(eval_at), x_n, x_next, model.dim(),
                            model.friction(), dt, lambda_mse, degeneracy_weight, nullptr,
                            model.projected());
}

SpnnTrainResult train_spnn(const Tensor2& x_n, const Tensor2& x_next, const SpnnConfig& cfg) {
  if (x_n.rows() == 0) throw DataError("train_spnn: no training pairs");
  if (x_n.rows() != x_next.rows() || x_n.cols() != x_next.cols()) {
    throw DataError("train_spnn: pair matrices differ in shape");
  }
  if (!(cfg.dt > 0.0)) throw ConfigError("train_spnn: dt must be positive");
  const auto d = static_cast<std::size_t>(x_n.cols());
  SpnnTrainResult res;
  res.curve.reg_label = "deg";
  res.model = SpnnModel::build(d, cfg);
  double ref = 0.0;
  for (Eigen::Index i = 0; i < x_n.rows(); ++i) ref = std::max(ref, x_n.row(i).norm());
  res.model.set_reference_norm(std::max(ref, 1e-12));

  auto& net = res.model.net();
  std::vector<ParamSlot> slots;
  net.collect_params(slots);
  AdamState adam(net.parameter_count(), cfg.lr, cfg.weight_decay);

  const auto n = static_cast<std::size_t>(x_n.rows());
  const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor2 xb, yb, d_raw;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    apply_schedule(adam, cfg.schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_mse = 0.0, sum_deg = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t b = std::min(bs, n - start);
      xb.resize(static_cast<Eigen::Index>(b), x_n.cols());
      yb.resize(static_cast<Eigen::Index>(b), x_n.cols());
      for (std::size_t i = 0; i < b; ++i) {
        xb.row(i) = x_n.row(order[start + i]);
        yb.row(i) = x_next.row(order[start + i]);
      }
      if (cfg.input_noise > 0.0) {
        for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] += cfg.input_noise * noise(rng);
      }
      Tensor2 eval_at = xb;
      if (cfg.corrected) {
        const Tensor2 raw0 = net.predict(xb);
        for (std::size_t i = 0; i < b; ++i) {
          auto ops = unpack_operators(
              {raw0.row(i).data(), static_cast<std::size_t>(raw0.cols())}, d, cfg.friction);
          if (cfg.project) ops = project_degenerate(ops);
          eval_at.row(i) = xb.row(i) + cfg.dt * ops.rate().transpose();
        }
      }
      const Tensor2 raw = net.forward(eval_at);
      const auto l = spnn_loss_from_raw(raw, xb, yb, d, cfg.friction, cfg.dt, cfg.lambda_mse,
                                        cfg.degeneracy_weight, &d_raw, cfg.project);
      sum_mse += l.mse * static_cast<double>(b);
      sum_deg += l.deg * static_cast<double>(b);
      net.backward(d_raw);
      try {
        adam_step(slots, adam);
      } catch (const TrainingError& e) {
        throw TrainingError("spnn epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
    }
    CurveRow row{epoch + 1, sum_mse / static_cast<double>(n), sum_deg / static_cast<double>(n), 0};
    row.total = cfg.lambda_mse * row.mse + cfg.degeneracy_weight * row.reg;
    res.curve.rows.push_back(row);
    const double first = res.curve.first_total();
    if (!std::isfinite(row.total) || row.total > cfg.divergence_factor * std::max(first, 1e-300)) {
      throw TrainingError("spnn diverged at epoch " + std::to_string(epoch + 1) + ": loss " +
                          std::to_string(row.total) + " vs initial " + std::to_string(first));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

RolloutResult rollout(const Vector& x0, const SpnnModel& model, std::size_t n_steps, double dt,
                      const RolloutOptions& options) {
  if (!(dt > 0.0)) throw ConfigError("rollout: dt must be positive");
  RolloutResult res;
  res.dt = dt;
  const double bound = options.blowup_factor * model.reference_norm();
  std::size_t quiet = 0;

  auto record = [&](const Vector& x) {
    res.states.push_back(x);
    auto ops = model.operators(x);
    const Vector f = ops.rate();
    res.e_dot.push_back(ops.DE.dot(f));
    res.s_dot.push_back(ops.DS.dot(f));
    res.deg_residual.push_back(degeneracy_residual(ops));
    res.min_eig_m.push_back(min_eigenvalue(ops.M));
    res.operators.push_back(std::move(ops));
  };

  record(x0);
  Vector x = x0;
  for (std::size_t n = 0; n < n_steps; ++n) {
    Vector next;
    try {
      next = model.step(x, dt, n);
    } catch (const IntegrationError& e) {
      res.completed = false;
      res.error = e.what();
      return res;
    }
    if (next.norm() > bound) {
      res.completed = false;
      res.error = "rollout: state norm " + std::to_string(next.norm()) + " exceeds blow-up bound " +
                  std::to_string(bound) + " at step " + std::to_string(n + 1);
      return res;
    }
    if (options.override_state) {
      if (auto obs = options.override_state(n + 1)) next = std::move(*obs);
    }
    quiet = (next - x).norm() < options.steady_tolerance ? quiet + 1 : 0;
    if (!res.steady_state_step && quiet >= options.steady_window) {
      res.steady_state_step = n + 1;
    }
    x = std::move(next);
    record(x);
  }
  return res;
}

void write_rollout_csv(const std::filesystem::path& file, const RolloutResult& r) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os.precision(12);
  const auto d = r.states.empty() ? 0 : r.states.front().size();
  os << "step,t";
  for (Eigen::Index i = 0; i < d; ++i) os << ",x" << i;
  os << ",Edot,Sdot,deg_residual,min_eig_M\n";
  for (std::size_t n = 0; n < r.states.size(); ++n) {
    os << n << ',' << static_cast<double>(n) * r.dt;
    for (Eigen::Index i = 0; i < d; ++i) os << ',' << r.states[n][i];
    os << ',' << r.e_dot[n] << ',' << r.s_dot[n] << ',' << r.deg_residual[n] << ','
       << r.min_eig_m[n] << '\n';
  }
  if (!os) throw IoError("write failed for " + file.string());
}

}  // namespace gslosh
