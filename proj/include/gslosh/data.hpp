#pragma once

// Synthetic ground-truth trajectories, free-surface observations,
// normalization, dataset splitting and observation-sequence assembly.

#include "gslosh/constants.hpp"
#include "gslosh/generic.hpp"
#include "gslosh/nn.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gslosh {

enum class Group : std::size_t { q = 0, v = 1, e = 2, sigma = 3, tau = 4 };

inline constexpr std::array<Group, kGroupCount> kGroups = {Group::q, Group::v, Group::e,
                                                            Group::sigma, Group::tau};

const char* group_name(Group g);
Group group_from_name(const std::string& name);
/// Scalars per particle in the group: 3 for q, v, sigma, tau and 1 for e.
std::size_t group_stride(Group g);

/// Full per-particle state of one time step. Vector blocks are stored
/// particle-major (x0 y0 z0 x1 y1 z1 ...).
struct Snapshot {
  double time = 0.0;
  std::vector<double> q;      // m, cup-local frame
  std::vector<double> v;      // m/s
  std::vector<double> e;      // J
  std::vector<double> sigma;  // Pa, normal stresses
  std::vector<double> tau;    // Pa, shear stresses

  std::size_t particle_count() const { return e.size(); }
  std::size_t dimension() const { return kFieldsPerParticle * particle_count(); }
  /// Throws DataError if the blocks disagree on the particle count.
  void validate() const;

  const std::vector<double>& group(Group g) const;
  std::vector<double>& group(Group g);

  /// Group-major flattening q | v | e | sigma | tau.
  std::vector<double> flat() const;
  static Snapshot from_flat(double time, std::span<const double> flat, std::size_t particles);
  static Snapshot zeros(double time, std::size_t particles);
};

struct TrajectoryMetadata {
  std::string generator;
  std::string fluid;
  double initial_velocity = 0.0;
  std::uint64_t seed = 0;
  double t0 = 0.0;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  double dt = 0.0;
  std::size_t particles = 0;
  TrajectoryMetadata meta;
  /// Scalar series recorded alongside the particle blocks (ground-truth
  /// energy/entropy for the oscillator, energy budget for the surrogate).
  std::map<std::string, std::vector<double>> aux;

  std::size_t size() const { return snapshots.size(); }
  /// Uniform spacing, strictly increasing time, consistent particle count.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Damped oscillator with exact metriplectic structure, z = (q, p, s).

struct OscillatorParams {
  double mass = 1.0;
  double stiffness = 1.0;
  double damping = 0.1;
  double temperature = 1.0;
  double q0 = 1.0;
  double p0 = 0.0;
  double s0 = 0.0;
  /// Std of a seeded perturbation added to (q0, p0); zero keeps the seed inert.
  double jitter = 0.0;
};

struct OscillatorState {
  double q = 0.0, p = 0.0, s = 0.0;
};

OscillatorState oscillator_rate(const OscillatorParams& params, const OscillatorState& z);
double oscillator_energy(const OscillatorParams& params, const OscillatorState& z);
/// Closed-form operators: L the canonical symplectic block, M = (gamma/T0) u u^T
/// with u = (0, T0, -p/m); both degeneracy conditions hold exactly.
GenericOperators oscillator_operators(const OscillatorParams& params, const OscillatorState& z);
/// Reads (q, p, s) back from a single-particle snapshot.
OscillatorState oscillator_state(const OscillatorParams& params, const Snapshot& s);

/// RK4 integration; `n_steps` snapshots spaced by dt starting at t = 0.
Trajectory generate_oscillator(const OscillatorParams& params, std::size_t n_steps, double dt,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Damped standing-wave slosh surrogate.

struct SloshMode {
  int index = 1;             // k: cos(k pi s / W)
  double response = 0.0;     // amplitude per unit initial velocity (s)
  double damping_ratio = 0.0;
};

struct SloshParams {
  double tank_width = 0.08;   // W, m (motion direction)
  double fill_height = 0.056; // H, m
  double tank_depth = 0.08;   // B, m (collapsed in observations)
  std::size_t nx = 11;
  std::size_t ny = 11;
  std::size_t particles = 121;
  double gravity = 9.81;
  double density = 1260.0;
  double viscosity = 1.4;     // Pa s
  double initial_velocity = 0.2;
  double phase_jitter = 0.35; // rad, seeded
  double amplitude_jitter = 0.25; // relative, seeded
  std::string fluid = "glycerine";
  std::vector<SloshMode> modes = {{1, 0.030, 0.15}, {2, 0.006, 0.18}, {3, 0.010, 0.20}};
};

/// Per-trajectory resolved mode: eta_k(t) = a exp(-zeta omega t) cos(omega t + phi).
struct ResolvedMode {
  int index = 1;
  double wavenumber = 0.0;  // k pi / W
  double omega = 0.0;
  double zeta = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
  double modal_stiffness = 0.0;  // rho g B W / 2

  double eta(double t) const;
  double eta_dot(double t) const;
  /// 1/2 c (eta_dot^2 / Omega^2 + eta^2), Omega^2 = omega^2 (1 + zeta^2).
  double kinetic(double t) const;
  double potential(double t) const;
};

std::vector<ResolvedMode> resolve_slosh_modes(const SloshParams& params, std::uint64_t seed);
/// Surface elevation above the fill height at wall coordinate s in [0, W].
double slosh_elevation(const std::vector<ResolvedMode>& modes, double s, double t);
/// Largest horizontal displacement bound sum_k |a_k| / (kappa_k H).
double slosh_max_horizontal_shift(const SloshParams& params,
                                  const std::vector<ResolvedMode>& modes);

Trajectory generate_slosh_surrogate(const SloshParams& params, std::size_t n_steps, double dt,
                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Free-surface observations.

struct SurfaceGrid {
  double x_min = -0.04;
  double x_max = 0.04;

  static SurfaceGrid for_tank(double width) { return {-0.5 * width, 0.5 * width}; }
  double node(std::size_t i) const;
};

struct FreeSurfaceObservation {
  std::array<double, kSurfacePoints> x{};
  std::array<double, kSurfacePoints> h{};

  /// Interleaved (x0, h0, x1, h1, ...), length 42.
  Vector flat() const;
  static FreeSurfaceObservation from_flat(std::span<const double> flat);
};

/// Highest particle per horizontal bin (21 uniform bins), then linear
/// interpolation onto the uniform 21-node grid. Depth is dropped.
FreeSurfaceObservation extract_free_surface(const Snapshot& s, const SurfaceGrid& grid);
/// Same procedure applied to raw (x, h) points.
FreeSurfaceObservation extract_free_surface(std::span<const double> xs, std::span<const double> hs,
                                            const SurfaceGrid& grid);
/// Same procedure restricted to the listed particles of a position block
/// (x y z per particle); an empty list uses every particle.
FreeSurfaceObservation extract_free_surface(std::span<const double> q,
                                            std::span<const std::size_t> particles,
                                            const SurfaceGrid& grid);

/// Particles that are the highest of their bin in at least one snapshot,
/// in increasing order.
std::vector<std::size_t> surface_particle_set(const std::vector<Trajectory>& trajectories,
                                              const SurfaceGrid& grid);

struct ObservationSequence {
  std::vector<FreeSurfaceObservation> frames;
  double stride = 0.0;
  std::size_t trajectory = 0;
  std::size_t target_index = 0;  // snapshot index of the last frame
};

/// Subsamples every round(stride/dt) snapshots starting at `offset`, then
/// slides a window of `length` frames. Too-short trajectories give an empty list.
std::vector<ObservationSequence> assemble_sequences(const Trajectory& traj, std::size_t length,
                                                    double stride, const SurfaceGrid& grid,
                                                    std::size_t offset = 0,
                                                    std::size_t trajectory_index = 0);
/// Same, from precomputed per-snapshot observations.
std::vector<ObservationSequence> assemble_sequences(
    const std::vector<FreeSurfaceObservation>& observations, double dt, std::size_t length,
    double stride, std::size_t offset = 0, std::size_t trajectory_index = 0);

// ---------------------------------------------------------------------------
// Normalization and splitting.

/// Per-channel standardization. Zero-variance channels pass through unchanged.
struct ChannelStats {
  Vector mean;
  Vector std;
  std::vector<char> passthrough;
  /// Value a passthrough channel held while fitting (0 elsewhere).
  Vector constant;

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t passthrough_count() const;
  /// Overwrites passthrough columns of physical-unit rows with their constant.
  void restore_constants(Tensor2& data) const;

  /// Rows of `data` are samples. Emits a warning when channels are dropped.
  static ChannelStats fit(const Tensor2& data, const std::string& label = "");
  Tensor2 normalize(const Tensor2& data) const;
  Tensor2 denormalize(const Tensor2& data) const;
  Vector normalize(const Vector& x) const;
  Vector denormalize(const Vector& x) const;
};

/// Statistics for the five state groups, fitted on the training split only.
struct NormStats {
  std::array<ChannelStats, kGroupCount> groups;
  const ChannelStats& operator[](Group g) const { return groups[static_cast<std::size_t>(g)]; }
  ChannelStats& operator[](Group g) { return groups[static_cast<std::size_t>(g)]; }
};

struct SnapshotRef {
  std::size_t trajectory = 0;
  std::size_t index = 0;
  auto operator<=>(const SnapshotRef&) const = default;
};

struct DatasetSplit {
  std::vector<SnapshotRef> train;
  std::vector<SnapshotRef> test;
};

/// Snapshot-level random split, deterministic per seed; both sides non-empty.
DatasetSplit split_dataset(const std::vector<Trajectory>& trajectories, double ratio,
                           std::uint64_t seed);

/// Stacks one group of the referenced snapshots into an N x D_g matrix.
Tensor2 gather_group(const std::vector<Trajectory>& trajectories,
                     const std::vector<SnapshotRef>& refs, Group g);
NormStats fit_norm_stats(const std::vector<Trajectory>& trajectories,
                         const std::vector<SnapshotRef>& train);

// ---------------------------------------------------------------------------
// Trajectory files: binary "GSLOSH1" blocks plus a JSON sidecar.

std::filesystem::path sidecar_path(const std::filesystem::path& trajectory_file);
void write_trajectory(const std::filesystem::path& file, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& file);
/// All *.gslosh files of a directory, sorted by name.
std::vector<Trajectory> read_trajectory_dir(const std::filesystem::path& dir);

}  // namespace gslosh
