#include "gslosh/gru.hpp"

#include "gslosh/errors.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>

namespace gslosh {

namespace {

Tensor2 uniform_init(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor2 w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

Tensor2 sigmoid(const Tensor2& a) {
  return a.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

std::span<double> span_of(Tensor2& t) { return {t.data(), static_cast<std::size_t>(t.size())}; }
std::span<const double> cspan_of(const Tensor2& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

}  // namespace

GruCell::GruCell(std::size_t input, std::size_t hidden, std::uint64_t seed) {
  if (input == 0 || hidden == 0) throw ConfigError("gru cell: zero input or hidden size");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  uz = uniform_init(input, hidden, bound, rng);
  ur = uniform_init(input, hidden, bound, rng);
  uh = uniform_init(input, hidden, bound, rng);
  wz = uniform_init(hidden, hidden, bound, rng);
  wr = uniform_init(hidden, hidden, bound, rng);
  wh = uniform_init(hidden, hidden, bound, rng);
  zero_grad();
}

std::size_t GruCell::parameter_count() const {
  return uz.size() + ur.size() + uh.size() + wz.size() + wr.size() + wh.size();
}

void GruCell::validate() const {
  const auto in = uz.rows();
  const auto hid = uz.cols();
  auto check = [&](const Tensor2& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ConfigError(std::string("gru cell: ") + name + " is " + std::to_string(m.rows()) +
                        "x" + std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                        std::to_string(c));
    }
  };
  check(ur, in, hid, "U_r");
  check(uh, in, hid, "U_h");
  check(wz, hid, hid, "W_z");
  check(wr, hid, hid, "W_r");
  check(wh, hid, hid, "W_h");
}

void GruCell::zero_grad() {
  guz = Tensor2::Zero(uz.rows(), uz.cols());
  gur = Tensor2::Zero(ur.rows(), ur.cols());
  guh = Tensor2::Zero(uh.rows(), uh.cols());
  gwz = Tensor2::Zero(wz.rows(), wz.cols());
  gwr = Tensor2::Zero(wr.rows(), wr.cols());
  gwh = Tensor2::Zero(wh.rows(), wh.cols());
}

void GruCell::collect_params(std::vector<ParamSlot>& out) {
  out.push_back({span_of(uz), cspan_of(guz)});
  out.push_back({span_of(ur), cspan_of(gur)});
  out.push_back({span_of(uh), cspan_of(guh)});
  out.push_back({span_of(wz), cspan_of(gwz)});
  out.push_back({span_of(wr), cspan_of(gwr)});
  out.push_back({span_of(wh), cspan_of(gwh)});
}

Tensor2 gru_cell_step(const Tensor2& x, const Tensor2& h_prev, const GruCell& cell,
                      GruStepCache* cache) {
  if (static_cast<std::size_t>(x.cols()) != cell.input_size() ||
      static_cast<std::size_t>(h_prev.cols()) != cell.hidden_size() || x.rows() != h_prev.rows()) {
    throw ConfigError("gru step: got x " + std::to_string(x.rows()) + "x" +
                      std::to_string(x.cols()) + ", h " + std::to_string(h_prev.rows()) + "x" +
                      std::to_string(h_prev.cols()) + " for cell " +
                      std::to_string(cell.input_size()) + "->" +
                      std::to_string(cell.hidden_size()));
  }
  Tensor2 z = sigmoid(x * cell.uz + h_prev * cell.wz);
  Tensor2 r = sigmoid(x * cell.ur + h_prev * cell.wr);
  Tensor2 rh = r.cwiseProduct(h_prev);
  Tensor2 n = (x * cell.uh + rh * cell.wh).unaryExpr([](double a) { return std::tanh(a); });
  Tensor2 h = (1.0 - z.array()) * h_prev.array() + z.array() * n.array();
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->n = std::move(n);
    cache->rh = std::move(rh);
  }
  return h;
}

Tensor2 gru_cell_backward(const Tensor2& dh, const GruStepCache& c, GruCell& cell,
                          Tensor2& dh_prev) {
  const auto& z = c.z.array();
  const auto& n = c.n.array();
  const auto& hp = c.h_prev.array();

  Tensor2 da_n = (dh.array() * z * (1.0 - n.square())).matrix();
  Tensor2 da_z = (dh.array() * (n - hp) * z * (1.0 - z)).matrix();
  dh_prev = (dh.array() * (1.0 - z)).matrix();

  cell.guh.noalias() += c.x.transpose() * da_n;
  cell.gwh.noalias() += c.rh.transpose() * da_n;
  Tensor2 d_rh = da_n * cell.wh.transpose();
  Tensor2 da_r = (d_rh.array() * hp * c.r.array() * (1.0 - c.r.array())).matrix();
  dh_prev.array() += d_rh.array() * c.r.array();

  cell.guz.noalias() += c.x.transpose() * da_z;
  cell.gwz.noalias() += c.h_prev.transpose() * da_z;
  cell.gur.noalias() += c.x.transpose() * da_r;
  cell.gwr.noalias() += c.h_prev.transpose() * da_r;

  dh_prev.noalias() += da_z * cell.wz.transpose();
  dh_prev.noalias() += da_r * cell.wr.transpose();

  Tensor2 dx = da_n * cell.uh.transpose();
  dx.noalias() += da_z * cell.uz.transpose();
  dx.noalias() += da_r * cell.ur.transpose();
  return dx;
}

GruEncoder::GruEncoder(std::size_t input, std::size_t hidden, std::size_t layers,
                       std::size_t output, std::uint64_t seed, std::size_t sequence_length)
    : seq_len_(sequence_length) {
  if (layers == 0) throw ConfigError("gru encoder: need at least one layer");
  if (sequence_length == 0) throw ConfigError("gru encoder: zero sequence length");
  for (std::size_t k = 0; k < layers; ++k) {
    cells_.emplace_back(k == 0 ? input : hidden, hidden, seed + 104729 * (k + 1));
  }
  head_ = DenseLayer(kaiming_init(output, hidden, seed), Vector::Zero(output), Activation::linear);
}

GruEncoder::GruEncoder(std::vector<GruCell> cells, DenseLayer head, std::size_t sequence_length)
    : cells_(std::move(cells)), head_(std::move(head)), seq_len_(sequence_length) {
  if (cells_.empty()) throw ConfigError("gru encoder: need at least one layer");
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    cells_[k].validate();
    if (k > 0 && cells_[k].input_size() != cells_[k - 1].hidden_size()) {
      throw ConfigError("gru encoder: layer " + std::to_string(k) + " input size mismatch");
    }
    if (cells_[k].guz.size() != cells_[k].uz.size()) cells_[k].zero_grad();
  }
  if (head_.in_dim() != cells_.back().hidden_size()) {
    throw ConfigError("gru encoder: head input " + std::to_string(head_.in_dim()) +
                      " != hidden size " + std::to_string(cells_.back().hidden_size()));
  }
  if (head_.activation != Activation::linear) {
    throw ConfigError("gru encoder: head activation must be linear");
  }
}

std::size_t GruEncoder::input_size() const {
  return cells_.empty() ? 0 : cells_.front().input_size();
}
std::size_t GruEncoder::hidden_size() const {
  return cells_.empty() ? 0 : cells_.back().hidden_size();
}

std::size_t GruEncoder::parameter_count() const {
  std::size_t n = head_.parameter_count();
  for (const auto& c : cells_) n += c.parameter_count();
  return n;
}

void GruEncoder::check_window(const std::vector<Tensor2>& window) const {
  if (window.size() != seq_len_) {
    throw DataError("gru encoder: sequence has " + std::to_string(window.size()) +
                    " frames, expected " + std::to_string(seq_len_));
  }
  for (const auto& frame : window) {
    if (static_cast<std::size_t>(frame.cols()) != input_size() ||
        frame.rows() != window.front().rows()) {
      throw ConfigError("gru encoder: frame shape " + std::to_string(frame.rows()) + "x" +
                        std::to_string(frame.cols()) + " does not match input width " +
                        std::to_string(input_size()));
    }
  }
}

Tensor2 GruEncoder::forward(const std::vector<Tensor2>& window) {
  check_window(window);
  const auto batch = window.front().rows();
  caches_.assign(cells_.size(), std::vector<GruStepCache>(seq_len_));
  std::vector<Tensor2> seq = window;
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    Tensor2 h = Tensor2::Zero(batch, cells_[k].hidden_size());
    for (std::size_t t = 0; t < seq_len_; ++t) {
      h = gru_cell_step(seq[t], h, cells_[k], &caches_[k][t]);
      seq[t] = h;
    }
  }
  top_final_ = seq.back();
  cached_ = true;
  Tensor2 out = top_final_ * head_.weights.transpose();
  out.rowwise() += head_.biases.transpose();
  return out;
}

Tensor2 GruEncoder::predict(const std::vector<Tensor2>& window) const {
  check_window(window);
  const auto batch = window.front().rows();
  std::vector<Tensor2> seq = window;
  for (const auto& cell : cells_) {
    Tensor2 h = Tensor2::Zero(batch, cell.hidden_size());
    for (std::size_t t = 0; t < seq_len_; ++t) {
      h = gru_cell_step(seq[t], h, cell);
      seq[t] = h;
    }
  }
  Tensor2 out = seq.back() * head_.weights.transpose();
  out.rowwise() += head_.biases.transpose();
  return out;
}

Vector GruEncoder::predict_one(const std::vector<Vector>& frames) const {
  std::vector<Tensor2> window;
  window.reserve(frames.size());
  for (const auto& f : frames) window.emplace_back(f.transpose());
  return predict(window).row(0).transpose();
}

void GruEncoder::backward(const Tensor2& upstream) {
  if (!cached_) throw StateError("gru encoder: backward called before forward");
  if (upstream.rows() != top_final_.rows() ||
      static_cast<std::size_t>(upstream.cols()) != output_size()) {
    throw ConfigError("gru encoder: upstream gradient shape mismatch");
  }
  for (auto& c : cells_) c.zero_grad();
  head_.grad_weights.noalias() = upstream.transpose() * top_final_;
  head_.grad_biases = upstream.colwise().sum().transpose();

  // d_seq[t]: gradient flowing into layer k's output at frame t from above.
  std::vector<Tensor2> d_seq(seq_len_);
  const auto batch = upstream.rows();
  for (auto& d : d_seq) d = Tensor2::Zero(batch, cells_.back().hidden_size());
  d_seq.back() = upstream * head_.weights;

  for (std::size_t k = cells_.size(); k-- > 0;) {
    auto& cell = cells_[k];
    Tensor2 dh_carry = Tensor2::Zero(batch, cell.hidden_size());
    std::vector<Tensor2> d_below(seq_len_);
    for (std::size_t t = seq_len_; t-- > 0;) {
      Tensor2 dh = d_seq[t] + dh_carry;
      Tensor2 dh_prev;
      d_below[t] = gru_cell_backward(dh, caches_[k][t], cell, dh_prev);
      dh_carry = std::move(dh_prev);
    }
    d_seq = std::move(d_below);
  }
}

void GruEncoder::zero_grad() {
  for (auto& c : cells_) c.zero_grad();
  head_.grad_weights.setZero();
  head_.grad_biases.setZero();
}

void GruEncoder::collect_params(std::vector<ParamSlot>& out) {
  for (auto& c : cells_) c.collect_params(out);
  out.push_back({span_of(head_.weights), cspan_of(head_.grad_weights)});
  out.push_back({std::span<double>(head_.biases.data(), head_.biases.size()),
                 std::span<const double>(head_.grad_biases.data(), head_.grad_biases.size())});
}

std::vector<double> GruEncoder::flat_params() const {
  std::vector<ParamSlot> slots;
  const_cast<GruEncoder*>(this)->collect_params(slots);
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& s : slots) flat.insert(flat.end(), s.value.begin(), s.value.end());
  return flat;
}

void GruEncoder::set_flat_params(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ConfigError("gru encoder: expected " + std::to_string(parameter_count()) +
                      " parameters, got " + std::to_string(flat.size()));
  }
  std::vector<ParamSlot> slots;
  collect_params(slots);
  std::size_t off = 0;
  for (auto& s : slots) {
    std::copy_n(flat.begin() + off, s.value.size(), s.value.begin());
    off += s.value.size();
  }
}

std::vector<double> GruEncoder::flat_grads() const {
  std::vector<ParamSlot> slots;
  const_cast<GruEncoder*>(this)->collect_params(slots);
  std::vector<double> flat;
  for (const auto& s : slots) flat.insert(flat.end(), s.grad.begin(), s.grad.end());
  return flat;
}

double gru_loss(const Tensor2& predicted, const Tensor2& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ConfigError("gru loss: prediction/target shape mismatch");
  }
  if (predicted.rows() == 0) return 0.0;
  return (predicted - target).squaredNorm() / static_cast<double>(predicted.rows());
}

Tensor2 gru_loss_grad(const Tensor2& predicted, const Tensor2& target) {
  return 2.0 * (predicted - target) / static_cast<double>(predicted.rows());
}

std::vector<Tensor2> gather_window(const std::vector<Tensor2>& window,
                                   std::span<const std::size_t> rows) {
  std::vector<Tensor2> out;
  out.reserve(window.size());
  for (const auto& frame : window) {
    Tensor2 sub(static_cast<Eigen::Index>(rows.size()), frame.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = frame.row(static_cast<Eigen::Index>(rows[i]));
    }
    out.push_back(std::move(sub));
  }
  return out;
}

GruTrainResult train_gru(const std::vector<Tensor2>& window, const Tensor2& targets,
                         const GruConfig& cfg) {
  if (window.empty()) throw DataError("train_gru: empty window");
  const auto n = static_cast<std::size_t>(targets.rows());
  if (n == 0) throw DataError("train_gru: no training sequences");
  for (const auto& frame : window) {
    if (static_cast<std::size_t>(frame.rows()) != n) {
      throw DataError("train_gru: frame/target sample counts differ");
    }
  }
  GruTrainResult res;
  res.curve.reg_label = "reg";
  res.model = GruEncoder(static_cast<std::size_t>(window.front().cols()), cfg.hidden, cfg.layers,
                         static_cast<std::size_t>(targets.cols()), cfg.seed, window.size());
  std::vector<ParamSlot> slots;
  res.model.collect_params(slots);
  AdamState adam(res.model.parameter_count(), cfg.lr, cfg.weight_decay);

  const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    apply_schedule(adam, cfg.schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t b = std::min(bs, n - start);
      const std::span<const std::size_t> rows(order.data() + start, b);
      auto xb = gather_window(window, rows);
      if (cfg.input_noise > 0.0) {
        for (auto& frame : xb) {
          for (Eigen::Index i = 0; i < frame.size(); ++i) {
            frame.data()[i] += cfg.input_noise * noise(rng);
          }
        }
      }
      Tensor2 yb(static_cast<Eigen::Index>(b), targets.cols());
      for (std::size_t i = 0; i < b; ++i) {
        yb.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(rows[i]));
      }
      const Tensor2 pred = res.model.forward(xb);
      sum += gru_loss(pred, yb) * static_cast<double>(b);
      res.model.backward(gru_loss_grad(pred, yb));
      try {
        adam_step(slots, adam);
      } catch (const TrainingError& e) {
        throw TrainingError("gru epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
    }
    const double loss = sum / static_cast<double>(n);
    res.curve.rows.push_back({epoch + 1, loss, 0.0, loss});
    const double first = res.curve.first_total();
    if (!std::isfinite(loss) || loss > cfg.divergence_factor * std::max(first, 1e-300)) {
      throw TrainingError("gru diverged at epoch " + std::to_string(epoch + 1) + ": loss " +
                          std::to_string(loss) + " vs initial " + std::to_string(first));
    }
  }
  return res;
}

}  // namespace gslosh
