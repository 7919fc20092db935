#include "gslosh/nn.hpp"

#include "gslosh/errors.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace gslosh {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

Tensor2 activate(Activation a, const Tensor2& pre) {
  switch (a) {
    case Activation::linear: return pre;
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::sigmoid:
      return pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    case Activation::tanh:
      return pre.unaryExpr([](double x) { return std::tanh(x); });
  }
  return pre;
}

Tensor2 activation_derivative(Activation a, const Tensor2& pre, const Tensor2& out) {
  switch (a) {
    case Activation::linear: return Tensor2::Ones(pre.rows(), pre.cols());
    case Activation::relu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::sigmoid: return out.array() * (1.0 - out.array());
    case Activation::tanh: return 1.0 - out.array().square();
  }
  return Tensor2::Ones(pre.rows(), pre.cols());
}

DenseLayer::DenseLayer(Tensor2 w, Vector b, Activation act)
    : weights(std::move(w)), biases(std::move(b)), activation(act) {
  if (static_cast<Eigen::Index>(biases.size()) != weights.rows()) {
    throw ConfigError("dense layer: bias length " + std::to_string(biases.size()) +
                      " != output dim " + std::to_string(weights.rows()));
  }
  grad_weights = Tensor2::Zero(weights.rows(), weights.cols());
  grad_biases = Vector::Zero(biases.size());
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].in_dim() != layers_[i - 1].out_dim()) {
      throw ConfigError("mlp: layer " + std::to_string(i) + " expects " +
                        std::to_string(layers_[i].in_dim()) + " inputs, previous layer gives " +
                        std::to_string(layers_[i - 1].out_dim()));
    }
  }
}

Mlp Mlp::build(std::span<const std::size_t> widths, std::uint64_t seed, Activation hidden,
               Activation output) {
  if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0) throw ConfigError("mlp: zero layer width");
    const bool last = i + 2 == widths.size();
    layers.emplace_back(kaiming_init(widths[i + 1], widths[i], seed + 7919 * i),
                        Vector::Zero(widths[i + 1]), last ? output : hidden);
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::vector<std::size_t> Mlp::widths() const {
  std::vector<std::size_t> w;
  if (layers_.empty()) return w;
  w.push_back(in_dim());
  for (const auto& l : layers_) w.push_back(l.out_dim());
  return w;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

Tensor2 Mlp::forward(const Tensor2& batch) {
  if (layers_.empty()) throw ConfigError("mlp: empty network");
  if (static_cast<std::size_t>(batch.cols()) != in_dim()) {
    throw ConfigError("mlp: input width " + std::to_string(batch.cols()) + " != " +
                      std::to_string(in_dim()));
  }
  inputs_.resize(layers_.size());
  pre_.resize(layers_.size());
  post_.resize(layers_.size());
  const Tensor2* x = &batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    inputs_[i] = *x;
    pre_[i].noalias() = inputs_[i] * l.weights.transpose();
    pre_[i].rowwise() += l.biases.transpose();
    post_[i] = activate(l.activation, pre_[i]);
    x = &post_[i];
  }
  cached_ = true;
  return post_.back();
}

Vector Mlp::forward(const Vector& input) {
  Tensor2 out = forward(Tensor2(input.transpose()));
  return out.row(0).transpose();
}

Tensor2 Mlp::predict(const Tensor2& batch) const {
  if (layers_.empty()) throw ConfigError("mlp: empty network");
  if (static_cast<std::size_t>(batch.cols()) != in_dim()) {
    throw ConfigError("mlp: input width " + std::to_string(batch.cols()) + " != " +
                      std::to_string(in_dim()));
  }
  Tensor2 x = batch;
  for (const auto& l : layers_) {
    Tensor2 pre = x * l.weights.transpose();
    pre.rowwise() += l.biases.transpose();
    x = activate(l.activation, pre);
  }
  return x;
}

Vector Mlp::predict(const Vector& input) const {
  Tensor2 out = predict(Tensor2(input.transpose()));
  return out.row(0).transpose();
}

Tensor2 Mlp::backward(const Tensor2& upstream) {
  if (!cached_) throw StateError("mlp: backward called before forward");
  if (upstream.rows() != post_.back().rows() || upstream.cols() != post_.back().cols()) {
    throw ConfigError("mlp: upstream gradient shape does not match cached output");
  }
  Tensor2 delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    auto& l = layers_[k];
    if (l.activation != Activation::linear) {
      delta.array() *= activation_derivative(l.activation, pre_[k], post_[k]).array();
    }
    l.grad_weights.noalias() = delta.transpose() * inputs_[k];
    l.grad_biases = delta.colwise().sum().transpose();
    Tensor2 next = delta * l.weights;
    delta = std::move(next);
  }
  return delta;
}

void Mlp::zero_grad() {
  for (auto& l : layers_) {
    l.grad_weights.setZero();
    l.grad_biases.setZero();
  }
}

void Mlp::collect_params(std::vector<ParamSlot>& out) {
  for (auto& l : layers_) {
    out.push_back({std::span<double>(l.weights.data(), l.weights.size()),
                   std::span<const double>(l.grad_weights.data(), l.grad_weights.size())});
    out.push_back({std::span<double>(l.biases.data(), l.biases.size()),
                   std::span<const double>(l.grad_biases.data(), l.grad_biases.size())});
  }
}

std::vector<double> Mlp::flat_params() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weights.data(), l.weights.data() + l.weights.size());
    flat.insert(flat.end(), l.biases.data(), l.biases.data() + l.biases.size());
  }
  return flat;
}

void Mlp::set_flat_params(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ConfigError("mlp: expected " + std::to_string(parameter_count()) + " parameters, got " +
                      std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& l : layers_) {
    std::copy_n(flat.begin() + off, l.weights.size(), l.weights.data());
    off += l.weights.size();
    std::copy_n(flat.begin() + off, l.biases.size(), l.biases.data());
    off += l.biases.size();
  }
}

std::vector<double> Mlp::flat_grads() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.grad_weights.data(), l.grad_weights.data() + l.grad_weights.size());
    flat.insert(flat.end(), l.grad_biases.data(), l.grad_biases.data() + l.grad_biases.size());
  }
  return flat;
}

Tensor2 kaiming_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(cols)));
  Tensor2 w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  return w;
}

AdamState::AdamState(std::size_t n_params, double lr_, double wd)
    : m(n_params, 0.0), v(n_params, 0.0), lr(lr_), weight_decay(wd) {}

namespace {

void adam_update(std::span<double> p, std::span<const double> g, AdamState& s, std::size_t off,
                 double c1, double c2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    double& m = s.m[off + i];
    double& v = s.v[off + i];
    m = s.beta1 * m + (1.0 - s.beta1) * gi;
    v = s.beta2 * v + (1.0 - s.beta2) * gi * gi;
    const double mhat = m / c1;
    const double vhat = v / c2;
    p[i] -= s.lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * p[i]);
  }
}

void check_finite(std::span<const double> g, const AdamState& s) {
  for (double x : g) {
    if (!std::isfinite(x)) {
      throw TrainingError("non-finite gradient at optimizer step " + std::to_string(s.step + 1));
    }
  }
}

}  // namespace

void adam_step(std::span<const ParamSlot> params, AdamState& state) {
  std::size_t total = 0;
  for (const auto& slot : params) {
    if (slot.value.size() != slot.grad.size()) {
      throw ConfigError("adam: parameter/gradient length mismatch");
    }
    check_finite(slot.grad, state);
    total += slot.value.size();
  }
  if (state.m.size() != total || state.v.size() != total) {
    throw ConfigError("adam: moment vectors hold " + std::to_string(state.m.size()) +
                      " entries for " + std::to_string(total) + " parameters");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (const auto& slot : params) {
    adam_update(slot.value, slot.grad, state, off, c1, c2);
    off += slot.value.size();
  }
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  const ParamSlot slot{params, grads};
  adam_step(std::span<const ParamSlot>(&slot, 1), state);
}

LrSchedule::LrSchedule(std::vector<Milestone> milestones) : milestones_(std::move(milestones)) {
  for (std::size_t i = 1; i < milestones_.size(); ++i) {
    if (milestones_[i].epoch <= milestones_[i - 1].epoch) {
      throw ConfigError("lr schedule: milestone thresholds must be strictly increasing");
    }
  }
}

double apply_schedule(AdamState& state, const LrSchedule& schedule, std::size_t epoch) {
  for (const auto& m : schedule.milestones()) {
    if (m.epoch == epoch) state.lr *= m.multiplier;
  }
  return state.lr;
}

double grad_norm_sq(std::span<const ParamSlot> params) {
  double s = 0.0;
  for (const auto& slot : params) {
    for (double g : slot.grad) s += g * g;
  }
  return s;
}

void TrainingCurve::write_csv(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os.precision(10);
  os << "epoch,mse," << reg_label << ",total\n";
  for (const auto& r : rows) os << r.epoch << ',' << r.mse << ',' << r.reg << ',' << r.total << '\n';
  if (!os) throw IoError("write failed for " + file.string());
}

}  // namespace gslosh
