#include "gslosh/data.hpp"

#include "gslosh/errors.hpp"
#include "gslosh/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace gslosh {

const char* group_name(Group g) {
  switch (g) {
    case Group::q: return "q";
    case Group::v: return "v";
    case Group::e: return "e";
    case Group::sigma: return "sigma";
    case Group::tau: return "tau";
  }
  return "?";
}

Group group_from_name(const std::string& name) {
  for (Group g : kGroups) {
    if (name == group_name(g)) return g;
  }
  throw ConfigError("unknown state group '" + name + "'");
}

std::size_t group_stride(Group g) { return g == Group::e ? 1 : 3; }

// ---------------------------------------------------------------------------

void Snapshot::validate() const {
  const std::size_t m = e.size();
  if (q.size() != 3 * m || v.size() != 3 * m || sigma.size() != 3 * m || tau.size() != 3 * m) {
    throw DataError("snapshot blocks sized inconsistently for " + std::to_string(m) +
                    " particles");
  }
  if (!(time >= 0.0)) throw DataError("snapshot time must be non-negative");
}

const std::vector<double>& Snapshot::group(Group g) const {
  switch (g) {
    case Group::q: return q;
    case Group::v: return v;
    case Group::e: return e;
    case Group::sigma: return sigma;
    case Group::tau: return tau;
  }
  return q;
}

std::vector<double>& Snapshot::group(Group g) {
  return const_cast<std::vector<double>&>(std::as_const(*this).group(g));
}

std::vector<double> Snapshot::flat() const {
  std::vector<double> out;
  out.reserve(dimension());
  for (Group g : kGroups) {
    const auto& b = group(g);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

Snapshot Snapshot::from_flat(double time, std::span<const double> flat, std::size_t particles) {
  if (flat.size() != kFieldsPerParticle * particles) {
    throw DataError("flat state has " + std::to_string(flat.size()) + " values, expected " +
                    std::to_string(kFieldsPerParticle * particles));
  }
  Snapshot s;
  s.time = time;
  std::size_t off = 0;
  for (Group g : kGroups) {
    const std::size_t n = group_stride(g) * particles;
    s.group(g).assign(flat.begin() + off, flat.begin() + off + n);
    off += n;
  }
  return s;
}

Snapshot Snapshot::zeros(double time, std::size_t particles) {
  Snapshot s;
  s.time = time;
  for (Group g : kGroups) s.group(g).assign(group_stride(g) * particles, 0.0);
  return s;
}

void Trajectory::validate() const {
  if (snapshots.empty()) return;
  if (!(dt > 0.0)) throw DataError("trajectory dt must be positive");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    snapshots[i].validate();
    if (snapshots[i].particle_count() != particles) {
      throw DataError("snapshot " + std::to_string(i) + " has " +
                      std::to_string(snapshots[i].particle_count()) + " particles, expected " +
                      std::to_string(particles));
    }
    if (i > 0) {
      const double step = snapshots[i].time - snapshots[i - 1].time;
      if (!(step > 0.0) || std::abs(step - dt) > 1e-9 * std::max(1.0, dt)) {
        throw DataError("non-uniform snapshot spacing at index " + std::to_string(i));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Oscillator

OscillatorState oscillator_rate(const OscillatorParams& p, const OscillatorState& z) {
  const double vel = z.p / p.mass;
  return {vel, -p.stiffness * z.q - p.damping * vel,
          p.damping * vel * vel / p.temperature};
}

double oscillator_energy(const OscillatorParams& p, const OscillatorState& z) {
  return 0.5 * z.p * z.p / p.mass + 0.5 * p.stiffness * z.q * z.q + p.temperature * z.s;
}

GenericOperators oscillator_operators(const OscillatorParams& p, const OscillatorState& z) {
  GenericOperators ops;
  ops.L = Tensor2::Zero(3, 3);
  ops.L(0, 1) = 1.0;
  ops.L(1, 0) = -1.0;
  Eigen::Vector3d u(0.0, p.temperature, -z.p / p.mass);
  ops.M = (p.damping / p.temperature) * (u * u.transpose());
  ops.DE = Vector(3);
  ops.DE << p.stiffness * z.q, z.p / p.mass, p.temperature;
  ops.DS = Vector(3);
  ops.DS << 0.0, 0.0, 1.0;
  return ops;
}

OscillatorState oscillator_state(const OscillatorParams& p, const Snapshot& s) {
  if (s.particle_count() != 1) throw DataError("oscillator snapshots hold exactly one particle");
  return {s.q[0], s.v[0] * p.mass, s.e[0] / p.temperature};
}

namespace {

OscillatorState axpy(const OscillatorState& z, double h, const OscillatorState& k) {
  return {z.q + h * k.q, z.p + h * k.p, z.s + h * k.s};
}

Snapshot oscillator_snapshot(const OscillatorParams& p, const OscillatorState& z, double t) {
  Snapshot s = Snapshot::zeros(t, 1);
  s.q[0] = z.q;
  s.v[0] = z.p / p.mass;
  s.e[0] = p.temperature * z.s;
  return s;
}

}  // namespace

Trajectory generate_oscillator(const OscillatorParams& params, std::size_t n_steps, double dt,
                               std::uint64_t seed) {
  if (!(dt > 0.0)) throw ConfigError("oscillator: dt must be positive");
  if (!(params.mass > 0.0) || !(params.stiffness > 0.0) || !(params.damping >= 0.0) ||
      !(params.temperature > 0.0)) {
    throw ConfigError("oscillator: mass, stiffness, temperature must be positive, damping >= 0");
  }
  OscillatorState z{params.q0, params.p0, params.s0};
  if (params.jitter > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, params.jitter);
    z.q += n(rng);
    z.p += n(rng);
  }
  Trajectory traj;
  traj.dt = dt;
  traj.particles = 1;
  traj.meta = {"oscillator", "oscillator", 0.0, seed, 0.0};
  auto& energy = traj.aux["energy"];
  auto& entropy = traj.aux["entropy"];
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    traj.snapshots.push_back(oscillator_snapshot(params, z, t));
    energy.push_back(oscillator_energy(params, z));
    entropy.push_back(z.s);
    const auto k1 = oscillator_rate(params, z);
    const auto k2 = oscillator_rate(params, axpy(z, 0.5 * dt, k1));
    const auto k3 = oscillator_rate(params, axpy(z, 0.5 * dt, k2));
    const auto k4 = oscillator_rate(params, axpy(z, dt, k3));
    z.q += dt / 6.0 * (k1.q + 2 * k2.q + 2 * k3.q + k4.q);
    z.p += dt / 6.0 * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
    z.s += dt / 6.0 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Slosh surrogate

double ResolvedMode::eta(double t) const {
  return amplitude * std::exp(-zeta * omega * t) * std::cos(omega * t + phase);
}

double ResolvedMode::eta_dot(double t) const {
  const double a = zeta * omega;
  return amplitude * std::exp(-a * t) *
         (-a * std::cos(omega * t + phase) - omega * std::sin(omega * t + phase));
}

double ResolvedMode::kinetic(double t) const {
  const double big_omega_sq = omega * omega * (1.0 + zeta * zeta);
  const double ed = eta_dot(t);
  return 0.5 * modal_stiffness * ed * ed / big_omega_sq;
}

double ResolvedMode::potential(double t) const {
  const double e = eta(t);
  return 0.5 * modal_stiffness * e * e;
}

std::vector<ResolvedMode> resolve_slosh_modes(const SloshParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<ResolvedMode> out;
  for (const auto& m : p.modes) {
    if (m.index < 1) throw ConfigError("slosh: mode index must be >= 1");
    ResolvedMode r;
    r.index = m.index;
    r.wavenumber = m.index * std::numbers::pi / p.tank_width;
    r.omega = std::sqrt(p.gravity * r.wavenumber * std::tanh(r.wavenumber * p.fill_height));
    r.zeta = m.damping_ratio;
    const double amp_scale = 1.0 + p.amplitude_jitter * unit(rng);
    r.amplitude = p.initial_velocity * m.response * amp_scale;
    r.phase = -0.5 * std::numbers::pi + p.phase_jitter * unit(rng);
    r.modal_stiffness = 0.5 * p.density * p.gravity * p.tank_depth * p.tank_width;
    out.push_back(r);
  }
  return out;
}

double slosh_elevation(const std::vector<ResolvedMode>& modes, double s, double t) {
  double eta = 0.0;
  for (const auto& m : modes) eta += m.eta(t) * std::cos(m.wavenumber * s);
  return eta;
}

double slosh_max_horizontal_shift(const SloshParams& p, const std::vector<ResolvedMode>& modes) {
  double b = 0.0;
  for (const auto& m : modes) b += std::abs(m.amplitude) / (m.wavenumber * p.fill_height);
  return b;
}

Trajectory generate_slosh_surrogate(const SloshParams& p, std::size_t n_steps, double dt,
                                    std::uint64_t seed) {
  if (!(dt > 0.0)) throw ConfigError("slosh: dt must be positive");
  if (p.nx < 2 || p.ny < 2) throw ConfigError("slosh: particle grid needs nx, ny >= 2");
  if (p.nx * p.ny != p.particles) {
    throw ConfigError("slosh: particle grid " + std::to_string(p.nx) + "x" +
                      std::to_string(p.ny) + " does not match configured M = " +
                      std::to_string(p.particles));
  }
  if (!(p.tank_width > 0.0) || !(p.fill_height > 0.0) || !(p.tank_depth > 0.0)) {
    throw ConfigError("slosh: tank dimensions must be positive");
  }
  const auto modes = resolve_slosh_modes(p, seed);
  const std::size_t m_count = p.particles;
  const double W = p.tank_width;
  const double H = p.fill_height;
  const double mu = p.viscosity;

  // Rest positions, wall coordinate s in [0, W], height z in [0, H].
  std::vector<double> s0(m_count), z0(m_count);
  for (std::size_t j = 0; j < p.ny; ++j) {
    for (std::size_t i = 0; i < p.nx; ++i) {
      const std::size_t idx = j * p.nx + i;
      s0[idx] = W * static_cast<double>(i) / static_cast<double>(p.nx - 1);
      z0[idx] = H * static_cast<double>(j) / static_cast<double>(p.ny - 1);
    }
  }

  // Share of each mode's dissipated energy deposited at each particle,
  // proportional to that mode's local viscous dissipation density.
  std::vector<std::vector<double>> weight(modes.size(), std::vector<double>(m_count));
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const double kap = modes[k].wavenumber;
    double total = 0.0;
    for (std::size_t j = 0; j < m_count; ++j) {
      const double c = std::cos(kap * s0[j]) / H;
      const double sh = kap * std::sin(kap * s0[j]) * z0[j] / H;
      weight[k][j] = 4.0 * c * c + sh * sh + 1e-3 / (H * H);
      total += weight[k][j];
    }
    for (double& w : weight[k]) w /= total;
  }

  Trajectory traj;
  traj.dt = dt;
  traj.particles = m_count;
  traj.meta = {"slosh", p.fluid, p.initial_velocity, seed, 0.0};
  auto& kinetic = traj.aux["kinetic"];
  auto& potential = traj.aux["potential"];
  auto& internal = traj.aux["internal"];

  std::vector<double> e0(modes.size());
  for (std::size_t k = 0; k < modes.size(); ++k) {
    e0[k] = modes[k].kinetic(0.0) + modes[k].potential(0.0);
  }

  std::vector<double> eta(modes.size()), eta_dot(modes.size()), dissipated(modes.size());
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t = static_cast<double>(n) * dt;
    double ke = 0.0, pe = 0.0, ie = 0.0;
    for (std::size_t k = 0; k < modes.size(); ++k) {
      eta[k] = modes[k].eta(t);
      eta_dot[k] = modes[k].eta_dot(t);
      const double kin = modes[k].kinetic(t);
      const double pot = modes[k].potential(t);
      ke += kin;
      pe += pot;
      dissipated[k] = e0[k] - kin - pot;
      ie += dissipated[k];
    }
    Snapshot s = Snapshot::zeros(t, m_count);
    for (std::size_t j = 0; j < m_count; ++j) {
      double dx = 0.0, dz = 0.0, vx = 0.0, vz = 0.0, dvx_dx = 0.0, dvz_dz = 0.0, shear = 0.0;
      double ej = 0.0;
      const double depth = z0[j] / H;
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const double kap = modes[k].wavenumber;
        const double c = std::cos(kap * s0[j]);
        const double sn = std::sin(kap * s0[j]);
        dx += -eta[k] / (kap * H) * sn;
        dz += eta[k] * c * depth;
        vx += -eta_dot[k] / (kap * H) * sn;
        vz += eta_dot[k] * c * depth;
        dvx_dx += -eta_dot[k] * c / H;
        dvz_dz += eta_dot[k] * c / H;
        // dvx/dz = 0; dvz/dx = -kap sin(kap s) depth eta_dot
        shear += -kap * sn * depth * eta_dot[k];
        ej += weight[k][j] * dissipated[k];
      }
      s.q[3 * j + 0] = s0[j] - 0.5 * W + dx;
      s.q[3 * j + 1] = 0.0;
      s.q[3 * j + 2] = z0[j] + dz;
      s.v[3 * j + 0] = vx;
      s.v[3 * j + 2] = vz;
      s.e[j] = ej;
      s.sigma[3 * j + 0] = 2.0 * mu * dvx_dx;
      s.sigma[3 * j + 2] = 2.0 * mu * dvz_dz;
      s.tau[3 * j + 1] = mu * shear;  // xz component; xy and yz vanish
    }
    traj.snapshots.push_back(std::move(s));
    kinetic.push_back(ke);
    potential.push_back(pe);
    internal.push_back(ie);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Free surface

double SurfaceGrid::node(std::size_t i) const {
  return x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(kSurfacePoints - 1);
}

Vector FreeSurfaceObservation::flat() const {
  Vector out(kObservationWidth);
  for (std::size_t i = 0; i < kSurfacePoints; ++i) {
    out[2 * i] = x[i];
    out[2 * i + 1] = h[i];
  }
  return out;
}

FreeSurfaceObservation FreeSurfaceObservation::from_flat(std::span<const double> flat) {
  if (flat.size() != kObservationWidth) {
    throw DataError("free surface vector has " + std::to_string(flat.size()) +
                    " values, expected " + std::to_string(kObservationWidth));
  }
  FreeSurfaceObservation o;
  for (std::size_t i = 0; i < kSurfacePoints; ++i) {
    o.x[i] = flat[2 * i];
    o.h[i] = flat[2 * i + 1];
  }
  return o;
}

namespace {

std::array<int, kSurfacePoints> bin_maxima(std::span<const double> xs, std::span<const double> hs,
                                           const SurfaceGrid& grid) {
  if (xs.size() != hs.size()) throw DataError("free surface: x/h length mismatch");
  if (!(grid.x_max > grid.x_min)) throw ConfigError("free surface: empty grid extent");
  constexpr std::size_t bins = kSurfacePoints;
  std::array<int, bins> best;
  best.fill(-1);
  const double width = grid.x_max - grid.x_min;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double rel = (xs[i] - grid.x_min) / width;
    auto b = static_cast<long>(std::floor(rel * static_cast<double>(bins)));
    b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
    if (best[b] < 0 || hs[i] > hs[best[b]]) best[b] = static_cast<int>(i);
  }
  return best;
}

}  // namespace

FreeSurfaceObservation extract_free_surface(std::span<const double> xs, std::span<const double> hs,
                                            const SurfaceGrid& grid) {
  const auto best = bin_maxima(xs, hs, grid);
  std::vector<double> px, ph;
  for (int idx : best) {
    if (idx < 0) continue;
    px.push_back(xs[idx]);
    ph.push_back(hs[idx]);
  }
  if (px.empty()) throw DataError("free surface: every horizontal bin is empty");

  FreeSurfaceObservation out;
  for (std::size_t i = 0; i < kSurfacePoints; ++i) {
    const double x = grid.node(i);
    out.x[i] = x;
    if (px.size() == 1 || x <= px.front()) {
      out.h[i] = ph.front();
    } else if (x >= px.back()) {
      out.h[i] = ph.back();
    } else {
      const auto it = std::upper_bound(px.begin(), px.end(), x);
      const std::size_t hi = static_cast<std::size_t>(it - px.begin());
      const std::size_t lo = hi - 1;
      const double span = px[hi] - px[lo];
      const double w = span > 0.0 ? (x - px[lo]) / span : 0.0;
      out.h[i] = (1.0 - w) * ph[lo] + w * ph[hi];
    }
  }
  return out;
}

FreeSurfaceObservation extract_free_surface(const Snapshot& s, const SurfaceGrid& grid) {
  const std::size_t m = s.particle_count();
  if (m == 0 || s.q.size() != 3 * m) throw DataError("free surface: snapshot has no particles");
  std::vector<double> xs(m), hs(m);
  for (std::size_t j = 0; j < m; ++j) {
    xs[j] = s.q[3 * j];
    hs[j] = s.q[3 * j + 2];
  }
  return extract_free_surface(xs, hs, grid);
}

FreeSurfaceObservation extract_free_surface(std::span<const double> q,
                                            std::span<const std::size_t> particles,
                                            const SurfaceGrid& grid) {
  const std::size_t m = q.size() / 3;
  std::vector<double> xs, hs;
  const auto take = [&](std::size_t j) {
    if (j >= m) throw DataError("free surface: particle index " + std::to_string(j) + " out of range");
    xs.push_back(q[3 * j]);
    hs.push_back(q[3 * j + 2]);
  };
  if (particles.empty()) {
    for (std::size_t j = 0; j < m; ++j) take(j);
  } else {
    for (std::size_t j : particles) take(j);
  }
  return extract_free_surface(xs, hs, grid);
}

std::vector<std::size_t> surface_particle_set(const std::vector<Trajectory>& trajectories,
                                              const SurfaceGrid& grid) {
  std::vector<char> hit;
  std::vector<double> xs, hs;
  for (const auto& t : trajectories) {
    for (const auto& s : t.snapshots) {
      const std::size_t m = s.particle_count();
      hit.resize(std::max(hit.size(), m), 0);
      xs.resize(m);
      hs.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        xs[j] = s.q[3 * j];
        hs[j] = s.q[3 * j + 2];
      }
      for (int idx : bin_maxima(xs, hs, grid)) {
        if (idx >= 0) hit[static_cast<std::size_t>(idx)] = 1;
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < hit.size(); ++j) {
    if (hit[j]) out.push_back(j);
  }
  return out;
}

std::vector<ObservationSequence> assemble_sequences(
    const std::vector<FreeSurfaceObservation>& observations, double dt, std::size_t length,
    double stride, std::size_t offset, std::size_t trajectory_index) {
  if (length == 0) throw ConfigError("sequences: length must be positive");
  if (!(dt > 0.0) || !(stride > 0.0)) throw ConfigError("sequences: dt and stride must be positive");
  const double ratio = stride / dt;
  const auto step = static_cast<std::size_t>(std::llround(ratio));
  if (step == 0 || std::abs(ratio - static_cast<double>(step)) > 1e-6 * ratio) {
    throw ConfigError("sequences: stride must be an integer multiple of dt");
  }
  std::vector<std::size_t> frames;
  for (std::size_t i = offset; i < observations.size(); i += step) frames.push_back(i);
  std::vector<ObservationSequence> out;
  if (frames.size() < length) return out;
  for (std::size_t start = 0; start + length <= frames.size(); ++start) {
    ObservationSequence seq;
    seq.stride = stride;
    seq.trajectory = trajectory_index;
    seq.target_index = frames[start + length - 1];
    seq.frames.reserve(length);
    for (std::size_t k = 0; k < length; ++k) seq.frames.push_back(observations[frames[start + k]]);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<ObservationSequence> assemble_sequences(const Trajectory& traj, std::size_t length,
                                                    double stride, const SurfaceGrid& grid,
                                                    std::size_t offset,
                                                    std::size_t trajectory_index) {
  std::vector<FreeSurfaceObservation> obs;
  obs.reserve(traj.size());
  for (const auto& s : traj.snapshots) obs.push_back(extract_free_surface(s, grid));
  return assemble_sequences(obs, traj.dt, length, stride, offset, trajectory_index);
}

// ---------------------------------------------------------------------------
// Normalization

std::size_t ChannelStats::passthrough_count() const {
  return static_cast<std::size_t>(std::count(passthrough.begin(), passthrough.end(), 1));
}

ChannelStats ChannelStats::fit(const Tensor2& data, const std::string& label) {
  if (data.rows() == 0) throw DataError("normalization: no samples to fit");
  const auto n = static_cast<double>(data.rows());
  ChannelStats st;
  st.mean = data.colwise().mean().transpose();
  st.std = Vector(data.cols());
  st.passthrough.assign(data.cols(), 0);
  st.constant = Vector::Zero(data.cols());
  std::size_t dropped = 0;
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    const double var = (data.col(c).array() - st.mean[c]).square().sum() / n;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * (1.0 + std::abs(st.mean[c])))) {
      st.constant[c] = st.mean[c];
      st.mean[c] = 0.0;
      st.std[c] = 1.0;
      st.passthrough[c] = 1;
      ++dropped;
    } else {
      st.std[c] = sd;
    }
  }
  if (dropped > 0) {
    log_warning("normalization" + (label.empty() ? std::string() : " [" + label + "]") + ": " +
                std::to_string(dropped) + " zero-variance channel(s) left unnormalized");
  }
  return st;
}

Tensor2 ChannelStats::normalize(const Tensor2& data) const {
  if (static_cast<std::size_t>(data.cols()) != size()) {
    throw DataError("normalize: " + std::to_string(data.cols()) + " channels, stats hold " +
                    std::to_string(size()));
  }
  Tensor2 out = data;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= std.transpose().array();
  return out;
}

Tensor2 ChannelStats::denormalize(const Tensor2& data) const {
  if (static_cast<std::size_t>(data.cols()) != size()) {
    throw DataError("denormalize: " + std::to_string(data.cols()) + " channels, stats hold " +
                    std::to_string(size()));
  }
  Tensor2 out = data;
  out.array().rowwise() *= std.transpose().array();
  out.rowwise() += mean.transpose();
  return out;
}

void ChannelStats::restore_constants(Tensor2& data) const {
  if (static_cast<std::size_t>(constant.size()) != size()) return;
  for (std::size_t c = 0; c < passthrough.size(); ++c) {
    if (passthrough[c]) data.col(static_cast<Eigen::Index>(c)).setConstant(constant[c]);
  }
}

Vector ChannelStats::normalize(const Vector& x) const {
  return normalize(Tensor2(x.transpose())).row(0).transpose();
}

Vector ChannelStats::denormalize(const Vector& x) const {
  return denormalize(Tensor2(x.transpose())).row(0).transpose();
}

DatasetSplit split_dataset(const std::vector<Trajectory>& trajectories, double ratio,
                           std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0, 1)");
  std::vector<SnapshotRef> all;
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    for (std::size_t i = 0; i < trajectories[t].size(); ++i) all.push_back({t, i});
  }
  if (all.size() < 2) throw DataError("split: need at least 2 snapshots");
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(all.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, all.size() - 1);
  DatasetSplit split;
  split.train.assign(all.begin(), all.begin() + static_cast<long>(n_train));
  split.test.assign(all.begin() + static_cast<long>(n_train), all.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Tensor2 gather_group(const std::vector<Trajectory>& trajectories,
                     const std::vector<SnapshotRef>& refs, Group g) {
  if (refs.empty()) return Tensor2(0, 0);
  const std::size_t width = trajectories.at(refs.front().trajectory)
                                .snapshots.at(refs.front().index)
                                .group(g)
                                .size();
  Tensor2 out(refs.size(), width);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const auto& b = trajectories.at(refs[r].trajectory).snapshots.at(refs[r].index).group(g);
    if (b.size() != width) throw DataError("gather: inconsistent group width across snapshots");
    std::copy(b.begin(), b.end(), out.row(r).data());
  }
  return out;
}

NormStats fit_norm_stats(const std::vector<Trajectory>& trajectories,
                         const std::vector<SnapshotRef>& train) {
  NormStats st;
  for (Group g : kGroups) {
    st[g] = ChannelStats::fit(gather_group(trajectories, train, g), group_name(g));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr char kMagic[8] = {'G', 'S', 'L', 'O', 'S', 'H', '1', '\0'};
constexpr const char* kLayout = "q:3,v:3,e:1,sigma:3,tau:3";

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& file) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) {
    throw DataError("trajectory file " + file.string() + ": truncated");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, 8);
  return value;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& trajectory_file) {
  auto p = trajectory_file;
  p.replace_extension(".json");
  return p;
}

void write_trajectory(const std::filesystem::path& file, const Trajectory& traj) {
  traj.validate();
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_le<std::uint64_t>(os, traj.particles);
  put_le<double>(os, traj.dt);
  put_le<double>(os, traj.meta.t0);
  put_le<std::uint64_t>(os, traj.snapshots.size());
  const std::string layout = kLayout;
  put_le<std::uint64_t>(os, layout.size());
  os.write(layout.data(), static_cast<std::streamsize>(layout.size()));
  for (const auto& s : traj.snapshots) {
    for (double x : s.flat()) put_le<double>(os, x);
  }
  if (!os) throw IoError("write failed for " + file.string());

  nlohmann::json j;
  j["format"] = "GSLOSH1";
  j["generator"] = traj.meta.generator;
  j["fluid"] = traj.meta.fluid;
  j["initial_velocity"] = traj.meta.initial_velocity;
  j["seed"] = traj.meta.seed;
  j["dt"] = traj.dt;
  j["t0"] = traj.meta.t0;
  j["particles"] = traj.particles;
  j["snapshots"] = traj.snapshots.size();
  j["layout"] = layout;
  j["aux"] = traj.aux;
  std::ofstream js(sidecar_path(file), std::ios::trunc);
  if (!js) throw IoError("cannot open " + sidecar_path(file).string() + " for writing");
  js << j.dump(2) << '\n';
  if (!js) throw IoError("write failed for " + sidecar_path(file).string());
}

Trajectory read_trajectory(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open " + file.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("trajectory file " + file.string() + ": bad magic (expected GSLOSH1)");
  }
  Trajectory traj;
  traj.particles = get_le<std::uint64_t>(is, file);
  traj.dt = get_le<double>(is, file);
  traj.meta.t0 = get_le<double>(is, file);
  const auto count = get_le<std::uint64_t>(is, file);
  const auto layout_len = get_le<std::uint64_t>(is, file);
  if (layout_len > 4096) throw DataError("trajectory file " + file.string() + ": corrupt layout");
  std::string layout(layout_len, '\0');
  if (!is.read(layout.data(), static_cast<std::streamsize>(layout_len)) || layout != kLayout) {
    throw DataError("trajectory file " + file.string() + ": unsupported field layout '" + layout +
                    "'");
  }
  const std::size_t dim = kFieldsPerParticle * traj.particles;
  std::vector<double> buf(dim);
  traj.snapshots.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (auto& x : buf) x = get_le<double>(is, file);
    traj.snapshots.push_back(Snapshot::from_flat(
        traj.meta.t0 + static_cast<double>(i) * traj.dt, buf, traj.particles));
  }

  const auto side = sidecar_path(file);
  std::ifstream js(side);
  if (js) {
    nlohmann::json j;
    try {
      js >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("sidecar " + side.string() + ": " + e.what());
    }
    traj.meta.generator = j.value("generator", "");
    traj.meta.fluid = j.value("fluid", "");
    traj.meta.initial_velocity = j.value("initial_velocity", 0.0);
    traj.meta.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("aux")) {
      traj.aux = j["aux"].get<std::map<std::string, std::vector<double>>>();
    }
  }
  traj.validate();
  return traj;
}

std::vector<Trajectory> read_trajectory_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".gslosh") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Trajectory> out;
  for (const auto& f : files) out.push_back(read_trajectory(f));
  return out;
}

}  // namespace gslosh
