#pragma once

// Configuration presets, the persisted model bundle and the pipeline
// commands generate / train / rollout / evaluate / report.

#include "gslosh/data.hpp"
#include "gslosh/gru.hpp"
#include "gslosh/metrics.hpp"
#include "gslosh/reduction.hpp"
#include "gslosh/spnn.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gslosh {

struct DataSection {
  std::string generator = "slosh";  // "slosh" or "oscillator"
  SloshParams slosh;
  OscillatorParams oscillator;
  double dt = 0.005;
  std::size_t snapshots = 400;  // per trajectory
  std::vector<double> initial_velocities = {0.10, 0.15, 0.20, 0.25};
  std::vector<double> holdout_velocities = {0.175};
  double split_ratio = 0.8;
};

struct SaeSection {
  std::array<SaeConfig, kGroupCount> groups;
  double active_eps = 1e-3;
  std::size_t pod_modes = 10;
};

struct SpnnSection {
  SpnnConfig config;
  std::size_t stride_steps = 3;  // pair spacing in snapshots
};

struct GruSection {
  GruConfig config;
  std::size_t stride_steps = 3;
  std::size_t length = kSequenceLength;
};

struct EvalSection {
  AuditTolerances tolerances;
  std::size_t rollout_steps = 800;
};

struct PipelineConfig {
  std::string preset = "desk-scale";
  std::uint64_t seed = 1;
  DataSection data;
  SaeSection sae;
  SpnnSection spnn;
  GruSection gru;
  EvalSection eval;
  std::filesystem::path data_dir = "gslosh-data";
  std::filesystem::path bundle_path = "gslosh-bundle.bin";
  std::filesystem::path out_dir = "gslosh-out";

  /// Preset names: "paper-scale", "desk-scale", "tiny".
  static PipelineConfig preset_config(const std::string& name);
  /// Preset (from the "preset" key, default desk-scale) with the
  /// document's overrides applied.
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& file);
  std::string to_json() const;

  /// Re-derives the stage seeds from `seed`.
  void set_seed(std::uint64_t s);
  std::size_t particles() const { return data.slosh.particles; }
  void validate() const;
};

/// Persisted weights and statistics. Stages are present once trained.
struct ModelBundle {
  static constexpr const char* kVersion = "gslosh-bundle/1";

  std::optional<Reducer> reducer;
  std::optional<SpnnModel> spnn;
  double spnn_dt = 0.0;
  std::optional<GruEncoder> gru;
  ChannelStats observation_stats;
  SurfaceGrid grid;
  double fill_height = 0.0;
  /// Particles eligible for free-surface extraction (empty: all).
  std::vector<std::size_t> surface_particles;
  /// Free-form training metadata (seeds, epochs, final losses) as JSON.
  std::string metadata = "{}";

  bool has_stage(const std::string& stage) const;
  /// Throws PipelineError "<stage> stage missing".
  void require(const std::string& stage) const;
  std::size_t latent_dim() const { return reducer ? reducer->latent_dim() : 0; }
  std::size_t weight_block_count() const;

  /// Free surface of a decoded position block.
  FreeSurfaceObservation surface_of(std::span<const double> q) const;
  /// Latent vector from an observation window (16 frames, physical units).
  Vector encode_observations(const std::vector<FreeSurfaceObservation>& window) const;
};

/// FNV-1a 64 over the serialized blocks, as 16 hex digits.
std::string bundle_checksum(const ModelBundle& bundle);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& file);
/// Verifies magic, version and checksum.
ModelBundle load_bundle(const std::filesystem::path& file);

/// Holds every trajectory the later stages need.
struct Dataset {
  std::vector<Trajectory> train;    // split 80/20 at snapshot level
  std::vector<Trajectory> holdout;  // never seen in training
  DatasetSplit split;
};

std::vector<Trajectory> generate_trajectories(const PipelineConfig& cfg, bool holdout);
/// Reads `data_dir` (and `data_dir/holdout`) and splits.
Dataset load_dataset(const PipelineConfig& cfg);

/// Writes the training and held-out trajectories. Returns the file count.
std::size_t cmd_generate(const PipelineConfig& cfg);

/// Trains one stage into `bundle` ("sae", "spnn" or "gru"); writes the
/// training curve into out_dir.
void train_stage(const std::string& stage, const PipelineConfig& cfg, const Dataset& data,
                 ModelBundle& bundle);
void cmd_train(const std::string& stage, const PipelineConfig& cfg);

/// Frames of an observation file: one line of 42 comma- or space-separated
/// numbers per frame; '#' starts a comment. Throws DataError with the line
/// number on malformed input.
std::vector<FreeSurfaceObservation> read_observation_file(const std::filesystem::path& file);

struct RolloutRun {
  RolloutResult result;
  std::vector<Snapshot> decoded;
  std::size_t overrides = 0;  // observation windows applied after the first
};

/// Free-running integration from x0; with `frames`, the first window sets
/// the initial state and every later frame completes a window that
/// replaces the state at the matching step.
RolloutRun run_rollout(const ModelBundle& bundle, const Vector& x0,
                       const std::vector<FreeSurfaceObservation>& frames, std::size_t n_steps,
                       bool decode = true);
/// Latent seed is the first held-out snapshot unless `sequence_file` is set.
RolloutRun cmd_rollout(const PipelineConfig& cfg, const std::filesystem::path& sequence_file,
                       std::size_t n_steps);

EvalReport build_report(const PipelineConfig& cfg, const Dataset& data, const ModelBundle& bundle);
/// Returns true when the thermodynamic audit passes.
bool cmd_evaluate(const PipelineConfig& cfg);
/// Text summary of out_dir/report.json; also written to out_dir/report.txt.
std::string cmd_report(const PipelineConfig& cfg);

/// GSLOSH_THREADS, default 1.
std::size_t thread_budget();

}  // namespace gslosh
