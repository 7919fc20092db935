#include "gslosh/pipeline.hpp"

#include "gslosh/errors.hpp"
#include "gslosh/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace gslosh {

using nlohmann::ordered_json;

namespace {

constexpr char kBundleMagic[8] = {'G', 'S', 'L', 'B', 'N', 'D', 'L', '1'};

std::string read_text(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + file.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::size_t scaled_width(std::size_t paper, std::size_t particles, std::size_t bottleneck) {
  const auto prop = static_cast<std::size_t>(
      std::lround(static_cast<double>(paper) * static_cast<double>(particles) / 2134.0));
  return std::max(prop, 2 * bottleneck);
}

ordered_json schedule_json(const LrSchedule& s) {
  auto a = ordered_json::array();
  for (const auto& m : s.milestones()) a.push_back({m.epoch, m.multiplier});
  return a;
}

LrSchedule schedule_from_json(const ordered_json& j) {
  std::vector<Milestone> ms;
  for (const auto& m : j) {
    if (!m.is_array() || m.size() != 2) throw ConfigError("schedule entries must be [epoch, factor]");
    ms.push_back({m[0].get<std::size_t>(), m[1].get<double>()});
  }
  return LrSchedule(std::move(ms));
}

template <class T>
void take(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig PipelineConfig::preset_config(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  for (Group g : kGroups) c.sae.groups[static_cast<std::size_t>(g)] = paper_sae_config(g);

  if (name == "paper-scale") {
    c.data.slosh.nx = 97;
    c.data.slosh.ny = 22;
    c.data.slosh.particles = 2134;
  } else if (name == "desk-scale" || name == "tiny") {
    const bool tiny = name == "tiny";
    if (tiny) {
      c.data.slosh.nx = 5;
      c.data.slosh.ny = 5;
      c.data.slosh.particles = 25;
      c.data.snapshots = 100;
      c.data.initial_velocities = {0.15, 0.25};
      c.data.holdout_velocities = {0.2};
    }
    const std::size_t m = c.data.slosh.particles;
    for (auto& g : c.sae.groups) {
      for (auto& w : g.hidden) w = scaled_width(w, m, g.bottleneck);
      if (tiny) g.hidden.resize(1);
      g.epochs = tiny ? 40 : 2000;
      g.lr *= 10.0;
      g.prune_epochs = tiny ? 5 : 60;
      g.schedule = tiny ? LrSchedule() : LrSchedule({{1400, 0.1}});
    }
    auto& s = c.spnn.config;
    s.epochs = tiny ? 40 : 1500;
    s.schedule = tiny ? LrSchedule() : LrSchedule({{450, 0.1}, {720, 0.1}, {1200, 0.1}});
    s.hidden_layers = tiny ? 3 : 4;
    s.hidden_width = 64;
    s.friction = FrictionParam::psd;
    s.project = true;
    s.input_noise = 0.3;
    auto& r = c.gru.config;
    r.epochs = tiny ? 20 : 2000;
    r.schedule = tiny ? LrSchedule() : LrSchedule({{1000, 0.1}});
    if (tiny) c.eval.rollout_steps = 100;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected paper-scale, desk-scale or tiny)");
  }
  c.spnn.config.dt = static_cast<double>(c.spnn.stride_steps) * c.data.dt;
  c.set_seed(c.seed);
  return c;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  for (std::size_t g = 0; g < kGroupCount; ++g) sae.groups[g].seed = s * 1000003ULL + 101 * (g + 1);
  spnn.config.seed = s * 1000003ULL + 17;
  gru.config.seed = s * 1000003ULL + 29;
}

void PipelineConfig::validate() const {
  if (data.generator != "slosh" && data.generator != "oscillator") {
    throw ConfigError("data.generator must be 'slosh' or 'oscillator'");
  }
  if (data.generator == "slosh" && data.slosh.nx * data.slosh.ny != data.slosh.particles) {
    throw ConfigError("data: nx * ny = " + std::to_string(data.slosh.nx * data.slosh.ny) +
                      " does not match particles = " + std::to_string(data.slosh.particles));
  }
  if (!(data.dt > 0.0)) throw ConfigError("data.dt must be positive");
  if (!(data.split_ratio > 0.0 && data.split_ratio < 1.0)) {
    throw ConfigError("data.split_ratio must lie in (0, 1)");
  }
  if (data.initial_velocities.empty()) throw ConfigError("data: no training trajectories");
  if (spnn.stride_steps == 0 || gru.stride_steps == 0) throw ConfigError("stride_steps must be >= 1");
  const double want = static_cast<double>(spnn.stride_steps) * data.dt;
  if (std::abs(spnn.config.dt - want) > 1e-12 * want) {
    throw ConfigError("spnn.dt (" + std::to_string(spnn.config.dt) +
                      ") must equal stride_steps * data.dt (" + std::to_string(want) + ")");
  }
  if (gru.length != kSequenceLength) {
    throw ConfigError("gru.length must be " + std::to_string(kSequenceLength));
  }
  if (!(spnn.config.input_noise >= 0.0) || !(gru.config.input_noise >= 0.0)) {
    throw ConfigError("input_noise must be non-negative");
  }
  for (const auto& g : sae.groups) {
    if (g.bottleneck == 0) throw ConfigError("sae bottleneck must be positive");
  }
}

std::string PipelineConfig::to_json() const {
  ordered_json j;
  j["preset"] = preset;
  j["seed"] = seed;
  j["paths"] = {{"data_dir", data_dir.string()},
                {"bundle", bundle_path.string()},
                {"out_dir", out_dir.string()}};
  const auto& sl = data.slosh;
  j["data"] = {{"generator", data.generator},
               {"dt", data.dt},
               {"snapshots", data.snapshots},
               {"initial_velocities", data.initial_velocities},
               {"holdout_velocities", data.holdout_velocities},
               {"split_ratio", data.split_ratio},
               {"particles", sl.particles},
               {"nx", sl.nx},
               {"ny", sl.ny},
               {"tank_width", sl.tank_width},
               {"fill_height", sl.fill_height},
               {"tank_depth", sl.tank_depth},
               {"viscosity", sl.viscosity},
               {"density", sl.density},
               {"fluid", sl.fluid}};
  auto groups = ordered_json::object();
  for (Group g : kGroups) {
    const auto& s = sae.groups[static_cast<std::size_t>(g)];
    groups[group_name(g)] = {{"hidden", s.hidden},
                             {"bottleneck", s.bottleneck},
                             {"lr", s.lr},
                             {"weight_decay", s.weight_decay},
                             {"lambda_reg", s.lambda_reg},
                             {"epochs", s.epochs},
                             {"batch_size", s.batch_size},
                             {"schedule", schedule_json(s.schedule)}};
  }
  j["sae"] = {{"active_eps", sae.active_eps}, {"pod_modes", sae.pod_modes}, {"groups", groups}};
  const auto& sp = spnn.config;
  j["spnn"] = {{"hidden_layers", sp.hidden_layers},
               {"hidden_width", sp.hidden_width},
               {"lambda_mse", sp.lambda_mse},
               {"degeneracy_weight", sp.degeneracy_weight},
               {"lr", sp.lr},
               {"weight_decay", sp.weight_decay},
               {"epochs", sp.epochs},
               {"batch_size", sp.batch_size},
               {"schedule", schedule_json(sp.schedule)},
               {"stride_steps", spnn.stride_steps},
               {"friction", to_string(sp.friction)},
               {"corrected", sp.corrected},
               {"project", sp.project},
               {"input_noise", sp.input_noise}};
  const auto& gr = gru.config;
  j["gru"] = {{"hidden", gr.hidden},
              {"layers", gr.layers},
              {"lr", gr.lr},
              {"weight_decay", gr.weight_decay},
              {"epochs", gr.epochs},
              {"batch_size", gr.batch_size},
              {"schedule", schedule_json(gr.schedule)},
              {"input_noise", gr.input_noise},
              {"stride_steps", gru.stride_steps}};
  j["eval"] = {{"tol_energy", eval.tolerances.energy},
               {"tol_entropy", eval.tolerances.entropy},
               {"tol_degeneracy", eval.tolerances.degeneracy},
               {"rollout_steps", eval.rollout_steps}};
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  PipelineConfig c = preset_config(j.value("preset", std::string("desk-scale")));
  try {
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      if (p.contains("data_dir")) c.data_dir = p.at("data_dir").get<std::string>();
      if (p.contains("bundle")) c.bundle_path = p.at("bundle").get<std::string>();
      if (p.contains("out_dir")) c.out_dir = p.at("out_dir").get<std::string>();
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      take(d, "generator", c.data.generator);
      take(d, "dt", c.data.dt);
      take(d, "snapshots", c.data.snapshots);
      take(d, "initial_velocities", c.data.initial_velocities);
      take(d, "holdout_velocities", c.data.holdout_velocities);
      take(d, "split_ratio", c.data.split_ratio);
      take(d, "particles", c.data.slosh.particles);
      take(d, "nx", c.data.slosh.nx);
      take(d, "ny", c.data.slosh.ny);
      take(d, "tank_width", c.data.slosh.tank_width);
      take(d, "fill_height", c.data.slosh.fill_height);
      take(d, "tank_depth", c.data.slosh.tank_depth);
      take(d, "viscosity", c.data.slosh.viscosity);
      take(d, "density", c.data.slosh.density);
      take(d, "fluid", c.data.slosh.fluid);
      c.spnn.config.dt = static_cast<double>(c.spnn.stride_steps) * c.data.dt;
    }
    if (j.contains("sae")) {
      const auto& s = j.at("sae");
      take(s, "active_eps", c.sae.active_eps);
      take(s, "pod_modes", c.sae.pod_modes);
      const bool all = s.contains("epochs");
      for (Group g : kGroups) {
        auto& cfg = c.sae.groups[static_cast<std::size_t>(g)];
        if (all) cfg.epochs = s.at("epochs").get<std::size_t>();
        if (!s.contains("groups") || !s.at("groups").contains(group_name(g))) continue;
        const auto& gj = s.at("groups").at(group_name(g));
        take(gj, "hidden", cfg.hidden);
        take(gj, "bottleneck", cfg.bottleneck);
        take(gj, "lr", cfg.lr);
        take(gj, "weight_decay", cfg.weight_decay);
        take(gj, "lambda_reg", cfg.lambda_reg);
        take(gj, "epochs", cfg.epochs);
        take(gj, "batch_size", cfg.batch_size);
        if (gj.contains("schedule")) cfg.schedule = schedule_from_json(gj.at("schedule"));
      }
    }
    if (j.contains("spnn")) {
      const auto& s = j.at("spnn");
      auto& sp = c.spnn.config;
      take(s, "hidden_layers", sp.hidden_layers);
      take(s, "hidden_width", sp.hidden_width);
      take(s, "lambda_mse", sp.lambda_mse);
      take(s, "degeneracy_weight", sp.degeneracy_weight);
      take(s, "lr", sp.lr);
      take(s, "weight_decay", sp.weight_decay);
      take(s, "epochs", sp.epochs);
      take(s, "batch_size", sp.batch_size);
      take(s, "corrected", sp.corrected);
      take(s, "project", sp.project);
      take(s, "input_noise", sp.input_noise);
      take(s, "stride_steps", c.spnn.stride_steps);
      if (s.contains("friction")) sp.friction = friction_param_from_string(s.at("friction").get<std::string>());
      if (s.contains("schedule")) sp.schedule = schedule_from_json(s.at("schedule"));
      sp.dt = static_cast<double>(c.spnn.stride_steps) * c.data.dt;
    }
    if (j.contains("gru")) {
      const auto& s = j.at("gru");
      auto& gr = c.gru.config;
      take(s, "hidden", gr.hidden);
      take(s, "layers", gr.layers);
      take(s, "lr", gr.lr);
      take(s, "weight_decay", gr.weight_decay);
      take(s, "epochs", gr.epochs);
      take(s, "batch_size", gr.batch_size);
      take(s, "input_noise", gr.input_noise);
      take(s, "stride_steps", c.gru.stride_steps);
      if (s.contains("schedule")) gr.schedule = schedule_from_json(s.at("schedule"));
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      take(e, "tol_energy", c.eval.tolerances.energy);
      take(e, "tol_entropy", c.eval.tolerances.entropy);
      take(e, "tol_degeneracy", c.eval.tolerances.degeneracy);
      take(e, "rollout_steps", c.eval.rollout_steps);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& file) {
  return from_json(read_text(file));
}

// ---------------------------------------------------------------------------
// Bundle

bool ModelBundle::has_stage(const std::string& stage) const {
  if (stage == "sae") return reducer.has_value();
  if (stage == "spnn") return spnn.has_value();
  if (stage == "gru") return gru.has_value();
  throw ConfigError("unknown stage '" + stage + "' (expected sae, spnn or gru)");
}

void ModelBundle::require(const std::string& stage) const {
  if (!has_stage(stage)) throw PipelineError(stage + " stage missing");
}

std::size_t ModelBundle::weight_block_count() const {
  return (reducer ? kGroupCount : 0) + (spnn ? 1 : 0) + (gru ? 1 : 0);
}

FreeSurfaceObservation ModelBundle::surface_of(std::span<const double> q) const {
  return extract_free_surface(q, surface_particles, grid);
}

Vector ModelBundle::encode_observations(const std::vector<FreeSurfaceObservation>& window) const {
  require("gru");
  if (window.size() != gru->sequence_length()) {
    throw DataError("observation window has " + std::to_string(window.size()) + " frames, expected " +
                    std::to_string(gru->sequence_length()));
  }
  std::vector<Vector> frames;
  frames.reserve(window.size());
  for (const auto& f : window) frames.push_back(observation_stats.normalize(f.flat()));
  return gru->predict_one(frames);
}

namespace {

struct Block {
  std::string name;
  std::string kind;  // "weights" or "stats"
  std::vector<double> values;
  ordered_json meta = ordered_json::object();
};

void append(std::vector<double>& out, const Eigen::Ref<const Vector>& v) {
  out.insert(out.end(), v.data(), v.data() + v.size());
}

ordered_json stats_meta(const ChannelStats& s) { return {{"size", s.size()}}; }

void append_stats(std::vector<double>& out, const ChannelStats& s) {
  append(out, s.mean);
  append(out, s.std);
  for (char p : s.passthrough) out.push_back(p ? 1.0 : 0.0);
  if (static_cast<std::size_t>(s.constant.size()) == s.size()) {
    append(out, s.constant);
  } else {
    out.insert(out.end(), s.size(), 0.0);
  }
}

ChannelStats read_stats(std::span<const double>& in, std::size_t n) {
  if (in.size() < 4 * n) throw DataError("bundle: truncated statistics block");
  ChannelStats s;
  s.mean = Eigen::Map<const Vector>(in.data(), static_cast<Eigen::Index>(n));
  s.std = Eigen::Map<const Vector>(in.data() + n, static_cast<Eigen::Index>(n));
  s.passthrough.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.passthrough[i] = in[2 * n + i] != 0.0 ? 1 : 0;
  s.constant = Eigen::Map<const Vector>(in.data() + 3 * n, static_cast<Eigen::Index>(n));
  in = in.subspan(4 * n);
  return s;
}

ordered_json mlp_meta(const Mlp& m) {
  auto acts = ordered_json::array();
  for (const auto& l : m.layers()) acts.push_back(to_string(l.activation));
  return {{"widths", m.widths()}, {"activations", acts}};
}

Mlp mlp_from_meta(const ordered_json& meta, std::span<const double>& in) {
  const auto widths = meta.at("widths").get<std::vector<std::size_t>>();
  const auto acts = meta.at("activations").get<std::vector<std::string>>();
  if (widths.size() < 2 || acts.size() + 1 != widths.size()) {
    throw DataError("bundle: inconsistent network description");
  }
  std::vector<DenseLayer> layers;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto rows = static_cast<Eigen::Index>(widths[i + 1]);
    const auto cols = static_cast<Eigen::Index>(widths[i]);
    const auto count = static_cast<std::size_t>(rows * cols + rows);
    if (used + count > in.size()) throw DataError("bundle: truncated network block");
    Tensor2 w = Eigen::Map<const Tensor2>(in.data() + used, rows, cols);
    Vector b = Eigen::Map<const Vector>(in.data() + used + rows * cols, rows);
    used += count;
    layers.emplace_back(std::move(w), std::move(b), activation_from_string(acts[i]));
  }
  in = in.subspan(used);
  return Mlp(std::move(layers));
}

std::vector<Block> bundle_blocks(const ModelBundle& b) {
  std::vector<Block> blocks;
  if (b.reducer) {
    const auto& r = *b.reducer;
    Block stats{"stats", "stats", {}, {}};
    auto norm_sizes = ordered_json::array();
    for (Group g : kGroups) {
      append_stats(stats.values, r.norm[g]);
      norm_sizes.push_back(r.norm[g].size());
    }
    append_stats(stats.values, r.latent_stats);
    auto fill_sizes = ordered_json::array();
    for (const auto& f : r.bottleneck_fill) {
      append(stats.values, f);
      fill_sizes.push_back(f.size());
    }
    stats.meta = {{"norm", norm_sizes}, {"latent", r.latent_stats.size()}, {"fill", fill_sizes}};
    blocks.push_back(std::move(stats));
    for (Group g : kGroups) {
      const auto gi = static_cast<std::size_t>(g);
      const auto& sae = r.saes[gi];
      Block blk{std::string("sae_") + group_name(g), "weights", {}, {}};
      const auto e = sae.encoder().flat_params();
      const auto d = sae.decoder().flat_params();
      blk.values.insert(blk.values.end(), e.begin(), e.end());
      blk.values.insert(blk.values.end(), d.begin(), d.end());
      blk.meta = {{"group", group_name(g)},
                  {"lambda_reg", sae.lambda_reg()},
                  {"channels", r.layout.channels[gi]},
                  {"encoder", mlp_meta(sae.encoder())},
                  {"decoder", mlp_meta(sae.decoder())}};
      blocks.push_back(std::move(blk));
    }
  }
  if (b.spnn) {
    const auto& m = *b.spnn;
    Block blk{"spnn", "weights", m.net().flat_params(), {}};
    blk.meta = {{"dim", m.dim()},
                {"friction", to_string(m.friction())},
                {"corrected", m.corrected()},
                {"project", m.projected()},
                {"reference_norm", m.reference_norm()},
                {"dt", b.spnn_dt},
                {"net", mlp_meta(m.net())}};
    blocks.push_back(std::move(blk));
  }
  if (b.gru) {
    const auto& g = *b.gru;
    Block blk{"gru", "weights", g.flat_params(), {}};
    blk.meta = {{"input", g.input_size()},
                {"hidden", g.hidden_size()},
                {"layers", g.cells().size()},
                {"output", g.output_size()},
                {"sequence_length", g.sequence_length()},
                {"observation_stats", stats_meta(b.observation_stats)}};
    append_stats(blk.values, b.observation_stats);
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string encode_values(const std::vector<Block>& blocks) {
  std::string bytes;
  for (const auto& b : blocks) {
    for (double v : b.values) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  }
  return bytes;
}

std::string fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string bundle_checksum(const ModelBundle& bundle) {
  return fnv1a(encode_values(bundle_blocks(bundle)));
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& file) {
  const auto blocks = bundle_blocks(bundle);
  const std::string payload = encode_values(blocks);
  ordered_json header;
  header["version"] = ModelBundle::kVersion;
  header["latent_layout"] = LatentLayout::kVersion;
  header["checksum"] = fnv1a(payload);
  header["grid"] = {bundle.grid.x_min, bundle.grid.x_max};
  header["fill_height"] = bundle.fill_height;
  header["surface_particles"] = bundle.surface_particles;
  header["metadata"] = ordered_json::parse(bundle.metadata);
  auto list = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    list.push_back({{"name", b.name},
                    {"kind", b.kind},
                    {"offset", offset},
                    {"count", b.values.size()},
                    {"meta", b.meta}});
    offset += 8 * b.values.size();
  }
  header["blocks"] = list;
  const std::string head = header.dump();

  std::string out(kBundleMagic, sizeof kBundleMagic);
  put_u64(out, head.size());
  out += head;
  out += payload;
  if (file.has_parent_path()) ensure_dir(file.parent_path());
  write_text(file, out);
}

ModelBundle load_bundle(const std::filesystem::path& file) {
  const std::string raw = read_text(file);
  if (raw.size() < 16 || std::memcmp(raw.data(), kBundleMagic, 8) != 0) {
    throw DataError(file.string() + " is not a model bundle (bad magic)");
  }
  const auto head_len = get_u64(reinterpret_cast<const unsigned char*>(raw.data() + 8));
  if (16 + head_len > raw.size()) throw DataError("bundle: truncated header");
  ordered_json header;
  try {
    header = ordered_json::parse(raw.substr(16, head_len));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bundle header: ") + ex.what());
  }
  ModelBundle b;
  try {
    if (header.at("version").get<std::string>() != ModelBundle::kVersion) {
      throw ConfigError("bundle version '" + header.at("version").get<std::string>() +
                        "' is not supported (expected " + ModelBundle::kVersion + ")");
    }
    LatentLayout probe;
    probe.version = header.at("latent_layout").get<std::string>();
    probe.check_version();

    const std::string payload = raw.substr(16 + head_len);
    const auto expect = header.at("checksum").get<std::string>();
    if (fnv1a(payload) != expect) {
      throw DataError("bundle checksum mismatch: header says " + expect + ", payload hashes to " +
                      fnv1a(payload));
    }
    std::vector<double> values(payload.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = std::bit_cast<double>(
          get_u64(reinterpret_cast<const unsigned char*>(payload.data() + 8 * i)));
    }
    const auto grid = header.at("grid").get<std::vector<double>>();
    b.grid = {grid.at(0), grid.at(1)};
    b.fill_height = header.at("fill_height").get<double>();
    b.surface_particles =
        header.value("surface_particles", std::vector<std::size_t>{});
    b.metadata = header.at("metadata").dump();

    std::optional<Reducer> red;
    for (const auto& blk : header.at("blocks")) {
      const auto name = blk.at("name").get<std::string>();
      const auto off = blk.at("offset").get<std::size_t>() / 8;
      const auto count = blk.at("count").get<std::size_t>();
      if (off + count > values.size()) throw DataError("bundle: block " + name + " out of range");
      std::span<const double> in(values.data() + off, count);
      const auto& meta = blk.at("meta");
      if (name == "stats") {
        red.emplace();
        const auto sizes = meta.at("norm").get<std::vector<std::size_t>>();
        for (Group g : kGroups) red->norm[g] = read_stats(in, sizes.at(static_cast<std::size_t>(g)));
        red->latent_stats = read_stats(in, meta.at("latent").get<std::size_t>());
        const auto fill = meta.at("fill").get<std::vector<std::size_t>>();
        for (std::size_t g = 0; g < kGroupCount; ++g) {
          const auto n = fill.at(g);
          red->bottleneck_fill[g] = Eigen::Map<const Vector>(in.data(), static_cast<Eigen::Index>(n));
          in = in.subspan(n);
        }
      } else if (name.rfind("sae_", 0) == 0) {
        if (!red) throw DataError("bundle: autoencoder block before statistics");
        const Group g = group_from_name(meta.at("group").get<std::string>());
        Mlp enc = mlp_from_meta(meta.at("encoder"), in);
        Mlp dec = mlp_from_meta(meta.at("decoder"), in);
        red->saes[static_cast<std::size_t>(g)] =
            SparseAutoencoder(g, std::move(enc), std::move(dec), meta.at("lambda_reg").get<double>());
        red->layout.channels[static_cast<std::size_t>(g)] =
            meta.at("channels").get<std::vector<std::size_t>>();
      } else if (name == "spnn") {
        Mlp net = mlp_from_meta(meta.at("net"), in);
        SpnnModel m(std::move(net), meta.at("dim").get<std::size_t>(),
                    friction_param_from_string(meta.at("friction").get<std::string>()),
                    meta.at("corrected").get<bool>(), meta.value("project", false));
        m.set_reference_norm(meta.at("reference_norm").get<double>());
        b.spnn = std::move(m);
        b.spnn_dt = meta.at("dt").get<double>();
      } else if (name == "gru") {
        GruEncoder enc(meta.at("input").get<std::size_t>(), meta.at("hidden").get<std::size_t>(),
                       meta.at("layers").get<std::size_t>(), meta.at("output").get<std::size_t>(), 0,
                       meta.at("sequence_length").get<std::size_t>());
        const auto n = enc.parameter_count();
        if (in.size() < n) throw DataError("bundle: truncated gru block");
        enc.set_flat_params(in.first(n));
        in = in.subspan(n);
        b.observation_stats = read_stats(in, meta.at("observation_stats").at("size").get<std::size_t>());
        b.gru = std::move(enc);
      } else {
        throw DataError("bundle: unknown block '" + name + "'");
      }
      if (!in.empty()) throw DataError("bundle: block " + name + " has trailing values");
    }
    if (red) {
      red->validate();
      b.reducer = std::move(red);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bundle header: ") + ex.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Data

std::vector<Trajectory> generate_trajectories(const PipelineConfig& cfg, bool holdout) {
  const auto& vels = holdout ? cfg.data.holdout_velocities : cfg.data.initial_velocities;
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < vels.size(); ++i) {
    const std::uint64_t seed = cfg.seed * 7919ULL + (holdout ? 1000 : 0) + i;
    if (cfg.data.generator == "oscillator") {
      OscillatorParams p = cfg.data.oscillator;
      p.q0 *= vels[i] / 0.2;
      out.push_back(generate_oscillator(p, cfg.data.snapshots, cfg.data.dt, seed));
    } else {
      SloshParams p = cfg.data.slosh;
      p.initial_velocity = vels[i];
      out.push_back(generate_slosh_surrogate(p, cfg.data.snapshots, cfg.data.dt, seed));
    }
  }
  return out;
}

std::size_t cmd_generate(const PipelineConfig& cfg) {
  cfg.validate();
  std::size_t files = 0;
  for (bool holdout : {false, true}) {
    const auto dir = holdout ? cfg.data_dir / "holdout" : cfg.data_dir;
    ensure_dir(dir);
    const auto trajs = generate_trajectories(cfg, holdout);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "traj_%03zu.gslosh", i);
      write_trajectory(dir / name, trajs[i]);
      ++files;
    }
  }
  return files;
}

Dataset load_dataset(const PipelineConfig& cfg) {
  Dataset d;
  if (!std::filesystem::is_directory(cfg.data_dir)) {
    throw IoError("data directory " + cfg.data_dir.string() + " does not exist (run generate)");
  }
  d.train = read_trajectory_dir(cfg.data_dir);
  if (d.train.empty()) {
    throw IoError("no trajectories in " + cfg.data_dir.string() + " (run generate)");
  }
  if (std::filesystem::is_directory(cfg.data_dir / "holdout")) {
    d.holdout = read_trajectory_dir(cfg.data_dir / "holdout");
  }
  d.split = split_dataset(d.train, cfg.data.split_ratio, cfg.seed);
  return d;
}

// ---------------------------------------------------------------------------
// Training

std::size_t thread_budget() {
  if (const char* env = std::getenv("GSLOSH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace {

ChannelStats identity_stats(std::size_t n) {
  ChannelStats s;
  s.mean = Vector::Zero(static_cast<Eigen::Index>(n));
  s.std = Vector::Ones(static_cast<Eigen::Index>(n));
  s.passthrough.assign(n, 0);
  s.constant = Vector::Zero(static_cast<Eigen::Index>(n));
  return s;
}

std::set<SnapshotRef> as_set(const std::vector<SnapshotRef>& refs) {
  return {refs.begin(), refs.end()};
}

// Latents of every snapshot, per trajectory.
std::vector<Tensor2> encode_all(const Reducer& r, const std::vector<Trajectory>& trajs) {
  std::vector<Tensor2> out;
  for (const auto& t : trajs) {
    std::vector<const Snapshot*> ptrs;
    for (const auto& s : t.snapshots) ptrs.push_back(&s);
    out.push_back(ptrs.empty() ? Tensor2(0, static_cast<Eigen::Index>(r.latent_dim()))
                               : r.encode_batch(ptrs));
  }
  return out;
}

struct Pairs {
  Tensor2 train_x, train_y, test_x, test_y;
};

Pairs latent_pairs(const std::vector<Tensor2>& latents, const DatasetSplit& split,
                   std::size_t stride) {
  const auto train = as_set(split.train);
  std::vector<Vector> tx, ty, vx, vy;
  for (std::size_t t = 0; t < latents.size(); ++t) {
    const auto n = static_cast<std::size_t>(latents[t].rows());
    for (std::size_t i = 0; i + stride < n; ++i) {
      const bool is_train = train.count({t, i}) > 0;
      (is_train ? tx : vx).push_back(latents[t].row(static_cast<Eigen::Index>(i)).transpose());
      (is_train ? ty : vy).push_back(latents[t].row(static_cast<Eigen::Index>(i + stride)).transpose());
    }
  }
  const auto d = latents.empty() ? 0 : latents.front().cols();
  auto stack = [d](const std::vector<Vector>& rows) {
    Tensor2 m(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
  };
  return {stack(tx), stack(ty), stack(vx), stack(vy)};
}

struct SequenceSet {
  std::vector<Tensor2> train_window, test_window;
  Tensor2 train_y, test_y;
};

std::vector<std::vector<FreeSurfaceObservation>> observe_all(const std::vector<Trajectory>& trajs,
                                                             const SurfaceGrid& grid) {
  std::vector<std::vector<FreeSurfaceObservation>> out;
  for (const auto& t : trajs) {
    std::vector<FreeSurfaceObservation> obs;
    obs.reserve(t.size());
    for (const auto& s : t.snapshots) obs.push_back(extract_free_surface(s, grid));
    out.push_back(std::move(obs));
  }
  return out;
}

SequenceSet build_sequences(const std::vector<std::vector<FreeSurfaceObservation>>& obs,
                            const std::vector<Trajectory>& trajs,
                            const std::vector<Tensor2>& latents, const DatasetSplit& split,
                            const ChannelStats& obs_stats, std::size_t length,
                            std::size_t stride_steps) {
  const auto train = as_set(split.train);
  std::vector<const ObservationSequence*> tr, te;
  std::vector<ObservationSequence> all;
  for (std::size_t t = 0; t < trajs.size(); ++t) {
    const double stride = static_cast<double>(stride_steps) * trajs[t].dt;
    for (std::size_t off = 0; off < stride_steps; ++off) {
      auto seqs = assemble_sequences(obs[t], trajs[t].dt, length, stride, off, t);
      for (auto& s : seqs) all.push_back(std::move(s));
    }
  }
  for (const auto& s : all) (train.count({s.trajectory, s.target_index}) ? tr : te).push_back(&s);

  const auto d = latents.empty() ? 0 : latents.front().cols();
  auto fill = [&](const std::vector<const ObservationSequence*>& seqs, std::vector<Tensor2>& window,
                  Tensor2& y) {
    const auto n = static_cast<Eigen::Index>(seqs.size());
    window.assign(length, Tensor2(n, static_cast<Eigen::Index>(kObservationWidth)));
    y.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = *seqs[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < length; ++k) {
        window[k].row(i) = obs_stats.normalize(s.frames[k].flat()).transpose();
      }
      y.row(i) = latents[s.trajectory].row(static_cast<Eigen::Index>(s.target_index));
    }
  };
  SequenceSet out;
  fill(tr, out.train_window, out.train_y);
  fill(te, out.test_window, out.test_y);
  return out;
}

ordered_json metadata_of(const ModelBundle& b) { return ordered_json::parse(b.metadata); }

void train_sae_stage(const PipelineConfig& cfg, const Dataset& data, ModelBundle& bundle) {
  Reducer r;
  r.norm = fit_norm_stats(data.train, data.split.train);
  std::array<Tensor2, kGroupCount> group_data;
  for (Group g : kGroups) {
    group_data[static_cast<std::size_t>(g)] =
        r.norm[g].normalize(gather_group(data.train, data.split.train, g));
  }

  std::array<SaeTrainResult, kGroupCount> results;
  std::array<std::string, kGroupCount> failures;
  auto work = [&](std::size_t gi) {
    try {
      results[gi] = train_sae(kGroups[gi], group_data[gi], cfg.sae.groups[gi]);
    } catch (const std::exception& e) {
      failures[gi] = e.what();
    }
  };
  const std::size_t threads = std::min(thread_budget(), kGroupCount);
  if (threads <= 1) {
    for (std::size_t gi = 0; gi < kGroupCount; ++gi) work(gi);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t gi = w; gi < kGroupCount; gi += threads) work(gi);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t gi = 0; gi < kGroupCount; ++gi) {
    if (!failures[gi].empty()) {
      throw TrainingError(std::string("sae ") + group_name(kGroups[gi]) + ": " + failures[gi]);
    }
  }

  auto meta = metadata_of(bundle);
  ensure_dir(cfg.out_dir);
  for (Group g : kGroups) {
    const auto gi = static_cast<std::size_t>(g);
    auto& res = results[gi];
    const auto active = measure_active_dims(res.model, group_data[gi], cfg.sae.active_eps);
    r.layout.channels[gi] = active.channels;
    const Tensor2 code = res.model.encode(group_data[gi]);
    r.bottleneck_fill[gi] = code.colwise().mean().transpose();
    r.saes[gi] = std::move(res.model);
    res.curve.write_csv(cfg.out_dir / (std::string("curve_sae_") + group_name(g) + ".csv"));
    meta["sae"][group_name(g)] = {{"seed", cfg.sae.groups[gi].seed},
                                  {"epochs", cfg.sae.groups[gi].epochs},
                                  {"final_loss", res.curve.last_total()},
                                  {"active_dims", active.count()}};
  }
  if (r.layout.dim() == 0) throw TrainingError("sae: every latent channel collapsed");
  r.latent_stats = identity_stats(r.layout.dim());
  std::vector<const Snapshot*> ptrs;
  for (const auto& ref : data.split.train) ptrs.push_back(&data.train[ref.trajectory].snapshots[ref.index]);
  r.latent_stats = ChannelStats::fit(r.encode_batch(ptrs), "latent");
  r.validate();
  meta["sae"]["latent_dim"] = r.layout.dim();

  if (bundle.spnn || bundle.gru) {
    log_warning("retraining the sae stage discards the trained spnn/gru stages");
    bundle.spnn.reset();
    bundle.gru.reset();
    meta.erase("spnn");
    meta.erase("gru");
  }
  bundle.reducer = std::move(r);
  bundle.grid = SurfaceGrid::for_tank(cfg.data.slosh.tank_width);
  bundle.fill_height = cfg.data.slosh.fill_height;
  bundle.surface_particles = surface_particle_set(data.train, bundle.grid);
  bundle.metadata = meta.dump();
}

void train_spnn_stage(const PipelineConfig& cfg, const Dataset& data, ModelBundle& bundle) {
  bundle.require("sae");
  const auto latents = encode_all(*bundle.reducer, data.train);
  const auto pairs = latent_pairs(latents, data.split, cfg.spnn.stride_steps);
  auto res = train_spnn(pairs.train_x, pairs.train_y, cfg.spnn.config);
  ensure_dir(cfg.out_dir);
  res.curve.write_csv(cfg.out_dir / "curve_spnn.csv");
  auto meta = metadata_of(bundle);
  const auto& c = cfg.spnn.config;
  meta["spnn"] = {{"seed", c.seed},
                  {"epochs", c.epochs},
                  {"final_loss", res.curve.last_total()},
                  {"train_pairs", pairs.train_x.rows()},
                  {"test_pairs", pairs.test_x.rows()}};
  if (pairs.test_x.rows() > 0) {
    const auto l = spnn_loss(pairs.test_x, pairs.test_y, res.model, c.dt, c.lambda_mse,
                             c.degeneracy_weight);
    meta["spnn"]["test_mse"] = l.mse;
    meta["spnn"]["test_deg"] = l.deg;
  }
  bundle.spnn = std::move(res.model);
  bundle.spnn_dt = c.dt;
  bundle.metadata = meta.dump();
}

void train_gru_stage(const PipelineConfig& cfg, const Dataset& data, ModelBundle& bundle) {
  bundle.require("sae");
  const auto latents = encode_all(*bundle.reducer, data.train);
  const auto grid = SurfaceGrid::for_tank(cfg.data.slosh.tank_width);
  const auto obs = observe_all(data.train, grid);
  Tensor2 rows(static_cast<Eigen::Index>(data.split.train.size()),
               static_cast<Eigen::Index>(kObservationWidth));
  for (std::size_t i = 0; i < data.split.train.size(); ++i) {
    const auto& ref = data.split.train[i];
    rows.row(static_cast<Eigen::Index>(i)) = obs[ref.trajectory][ref.index].flat().transpose();
  }
  const bool warn = warnings_enabled();
  set_warnings_enabled(false);
  const auto stats = ChannelStats::fit(rows, "free surface");
  set_warnings_enabled(warn);

  const auto seqs = build_sequences(obs, data.train, latents, data.split, stats, cfg.gru.length,
                                    cfg.gru.stride_steps);
  if (seqs.train_y.rows() == 0) {
    throw DataError("gru: trajectories are too short for a " + std::to_string(cfg.gru.length) +
                    "-frame window");
  }
  auto res = train_gru(seqs.train_window, seqs.train_y, cfg.gru.config);
  ensure_dir(cfg.out_dir);
  res.curve.write_csv(cfg.out_dir / "curve_gru.csv");
  auto meta = metadata_of(bundle);
  meta["gru"] = {{"seed", cfg.gru.config.seed},
                 {"epochs", cfg.gru.config.epochs},
                 {"final_loss", res.curve.last_total()},
                 {"train_sequences", seqs.train_y.rows()},
                 {"test_sequences", seqs.test_y.rows()}};
  if (seqs.test_y.rows() > 0) {
    meta["gru"]["test_loss"] = gru_loss(res.model.predict(seqs.test_window), seqs.test_y);
  }
  bundle.gru = std::move(res.model);
  bundle.observation_stats = stats;
  bundle.grid = grid;
  bundle.metadata = meta.dump();
}

}  // namespace

void train_stage(const std::string& stage, const PipelineConfig& cfg, const Dataset& data,
                 ModelBundle& bundle) {
  if (stage == "sae") {
    train_sae_stage(cfg, data, bundle);
  } else if (stage == "spnn") {
    train_spnn_stage(cfg, data, bundle);
  } else if (stage == "gru") {
    train_gru_stage(cfg, data, bundle);
  } else {
    throw ConfigError("unknown stage '" + stage + "' (expected sae, spnn or gru)");
  }
}

void cmd_train(const std::string& stage, const PipelineConfig& cfg) {
  if (stage != "sae" && stage != "spnn" && stage != "gru") {
    throw ConfigError("unknown stage '" + stage + "' (expected sae, spnn or gru)");
  }
  cfg.validate();
  ModelBundle bundle;
  if (std::filesystem::exists(cfg.bundle_path)) {
    bundle = load_bundle(cfg.bundle_path);
  }
  if (stage != "sae") bundle.require("sae");
  const Dataset data = load_dataset(cfg);
  train_stage(stage, cfg, data, bundle);
  save_bundle(bundle, cfg.bundle_path);
}

// ---------------------------------------------------------------------------
// Rollout

std::vector<FreeSurfaceObservation> read_observation_file(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open observation file " + file.string());
  std::vector<FreeSurfaceObservation> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw DataError(file.string() + ":" + std::to_string(lineno) + ": '" + tok +
                        "' is not a finite number");
      }
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() != kObservationWidth) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(kObservationWidth) + " values, found " +
                      std::to_string(vals.size()));
    }
    try {
      frames.push_back(FreeSurfaceObservation::from_flat(vals));
    } catch (const Error& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

RolloutRun run_rollout(const ModelBundle& bundle, const Vector& x0,
                       const std::vector<FreeSurfaceObservation>& frames, std::size_t n_steps,
                       bool decode) {
  bundle.require("sae");
  bundle.require("spnn");
  RolloutRun run;
  Vector start = x0;
  RolloutOptions opts;
  if (!frames.empty()) {
    bundle.require("gru");
    const std::size_t len = bundle.gru->sequence_length();
    if (frames.size() < len) {
      throw DataError("observation file has " + std::to_string(frames.size()) +
                      " frames, a window needs " + std::to_string(len));
    }
    auto window = [&frames, len](std::size_t first) {
      return std::vector<FreeSurfaceObservation>(frames.begin() + static_cast<std::ptrdiff_t>(first),
                                                 frames.begin() + static_cast<std::ptrdiff_t>(first + len));
    };
    start = bundle.encode_observations(window(0));
    opts.override_state = [&, window, len](std::size_t step) -> std::optional<Vector> {
      if (step + len > frames.size()) return std::nullopt;
      ++run.overrides;
      return bundle.encode_observations(window(step));
    };
  }
  run.result = rollout(start, *bundle.spnn, n_steps, bundle.spnn_dt, opts);
  if (decode) {
    for (std::size_t n = 0; n < run.result.states.size(); ++n) {
      run.decoded.push_back(bundle.reducer->decode(run.result.states[n],
                                                   static_cast<double>(n) * bundle.spnn_dt));
    }
  }
  return run;
}

RolloutRun cmd_rollout(const PipelineConfig& cfg, const std::filesystem::path& sequence_file,
                       std::size_t n_steps) {
  const ModelBundle bundle = load_bundle(cfg.bundle_path);
  bundle.require("sae");
  bundle.require("spnn");
  std::vector<FreeSurfaceObservation> frames;
  Vector x0;
  if (!sequence_file.empty()) {
    frames = read_observation_file(sequence_file);
  } else {
    std::vector<Trajectory> seed_traj;
    if (std::filesystem::is_directory(cfg.data_dir / "holdout")) {
      seed_traj = read_trajectory_dir(cfg.data_dir / "holdout");
    }
    if (seed_traj.empty() || seed_traj.front().snapshots.empty()) {
      seed_traj = generate_trajectories(cfg, true);
    }
    if (seed_traj.empty() || seed_traj.front().snapshots.empty()) {
      throw DataError("rollout: no held-out snapshot available as latent seed");
    }
    x0 = bundle.reducer->encode(seed_traj.front().snapshots.front());
  }
  auto run = run_rollout(bundle, x0, frames, n_steps);
  ensure_dir(cfg.out_dir);
  write_rollout_csv(cfg.out_dir / "rollout.csv", run.result);
  Trajectory decoded;
  decoded.snapshots = run.decoded;
  decoded.dt = bundle.spnn_dt;
  decoded.particles = bundle.reducer->particles();
  decoded.meta.generator = "rollout";
  decoded.meta.fluid = cfg.data.slosh.fluid;
  decoded.meta.seed = cfg.seed;
  write_trajectory(cfg.out_dir / "decoded.gslosh", decoded);
  if (!run.result.completed) throw IntegrationError(run.result.error);
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport build_report(const PipelineConfig& cfg, const Dataset& data, const ModelBundle& bundle) {
  bundle.require("sae");
  bundle.require("spnn");
  const Reducer& red = *bundle.reducer;
  const SpnnModel& spnn = *bundle.spnn;
  EvalReport rep;
  rep.bundle_checksum = bundle_checksum(bundle);
  rep.tolerances = cfg.eval.tolerances;

  for (Group g : kGroups) {
    const auto gi = static_cast<std::size_t>(g);
    const Tensor2 train = red.norm[g].normalize(gather_group(data.train, data.split.train, g));
    const Tensor2 test = red.norm[g].normalize(gather_group(data.train, data.split.test, g));
    GroupErrorRow row;
    row.group = g;
    row.rank = red.layout.slice_length(g);
    Tensor2 code = red.saes[gi].encode(test);
    Tensor2 kept(code.rows(), code.cols());
    kept.rowwise() = red.bottleneck_fill[gi].transpose();
    for (std::size_t c : red.layout.channels[gi]) {
      kept.col(static_cast<Eigen::Index>(c)) = code.col(static_cast<Eigen::Index>(c));
    }
    row.sae_mse = test.rows() ? (red.saes[gi].decode(kept) - test).squaredNorm() /
                                    static_cast<double>(test.rows())
                              : 0.0;
    row.pod_modes = std::min<std::size_t>(cfg.sae.pod_modes, static_cast<std::size_t>(train.cols()));
    row.pod_mse = test.rows() ? pod_error(pod_fit(train, row.pod_modes), test) : 0.0;
    rep.groups.push_back(row);
  }

  const auto latents = encode_all(red, data.train);
  const auto k = static_cast<std::size_t>(std::lround(bundle.spnn_dt / cfg.data.dt));
  const auto pairs = latent_pairs(latents, data.split, std::max<std::size_t>(k, 1));
  if (pairs.test_x.rows() > 0) {
    const auto l = spnn_loss(pairs.test_x, pairs.test_y, spnn, bundle.spnn_dt, 1.0, 1.0);
    rep.spnn_test_mse = l.mse;
    rep.spnn_test_deg = l.deg;
  }

  if (bundle.gru) {
    const auto obs = observe_all(data.train, bundle.grid);
    const auto seqs = build_sequences(obs, data.train, latents, data.split,
                                      bundle.observation_stats, bundle.gru->sequence_length(),
                                      std::max<std::size_t>(k, 1));
    if (seqs.test_y.rows() > 0) rep.gru_test_loss = gru_loss(bundle.gru->predict(seqs.test_window), seqs.test_y);
  }

  // One-step-ahead free-surface predictions on held-out trajectories.
  static const std::vector<Trajectory> kNone;
  const auto& held = cfg.data.generator == "slosh" ? data.holdout : kNone;
  const auto held_obs = observe_all(held, bundle.grid);
  for (const auto& traj_obs : held_obs) {
    for (const auto& o : traj_obs) {
      for (double h : o.h) rep.peak_amplitude = std::max(rep.peak_amplitude, std::abs(h - bundle.fill_height));
    }
  }
  const std::size_t len = bundle.gru ? bundle.gru->sequence_length() : 1;
  for (std::size_t t = 0; t < held.size(); ++t) {
    const auto& traj = held[t];
    const std::size_t first = (len - 1) * k;
    for (std::size_t n = first; n + k < traj.size(); ++n) {
      Vector x;
      if (bundle.gru) {
        std::vector<FreeSurfaceObservation> window;
        for (std::size_t j = 0; j < len; ++j) window.push_back(held_obs[t][n - first + j * k]);
        x = bundle.encode_observations(window);
      } else {
        x = red.encode(traj.snapshots[n]);
      }
      const auto ops = spnn.operators(x);
      const Vector f = ops.rate();
      const Vector next = spnn.step(x, bundle.spnn_dt, n);
      const auto pred = bundle.surface_of(red.decode_positions(next)).flat();
      const auto truth = held_obs[t][n + k].flat();
      const std::span<const double> ps(pred.data(), static_cast<std::size_t>(pred.size()));
      const std::span<const double> ts(truth.data(), static_cast<std::size_t>(truth.size()));
      rep.surface.time.push_back(traj.snapshots[n + k].time);
      rep.surface.rmse.push_back(rmse(ps, ts));
      rep.surface.hd.push_back(hausdorff(ps, ts));
      rep.surface.e_dot.push_back(ops.DE.dot(f));
      rep.surface.s_dot.push_back(ops.DS.dot(f));
      rep.surface.deg_residual.push_back(degeneracy_residual(ops));
    }
  }

  // Free-running audit from the first snapshot of each held-out trajectory
  // (or of the training data when there is none).
  std::vector<const Snapshot*> seeds;
  for (const auto& t : held) {
    if (!t.snapshots.empty()) seeds.push_back(&t.snapshots.front());
  }
  if (seeds.empty() && !data.train.empty() && !data.train.front().snapshots.empty()) {
    seeds.push_back(&data.train.front().snapshots.front());
  }
  for (const Snapshot* s : seeds) {
    auto r = rollout(red.encode(*s), spnn, cfg.eval.rollout_steps, bundle.spnn_dt);
    rep.audits.push_back(thermo_audit(r, cfg.eval.tolerances));
    rep.rollouts.push_back(std::move(r));
  }
  return rep;
}

bool cmd_evaluate(const PipelineConfig& cfg) {
  const ModelBundle bundle = load_bundle(cfg.bundle_path);
  const Dataset data = load_dataset(cfg);
  const EvalReport rep = build_report(cfg, data, bundle);
  write_report(rep, cfg.out_dir);
  return rep.audit_passed();
}

std::string cmd_report(const PipelineConfig& cfg) {
  const auto file = cfg.out_dir / "report.json";
  if (!std::filesystem::exists(file)) {
    throw IoError("no report at " + file.string() + " (run evaluate)");
  }
  ordered_json j;
  try {
    j = ordered_json::parse(read_text(file));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("report.json: ") + ex.what());
  }
  std::ostringstream os;
  char line[160];
  os << "schema          " << j.value("schema", "?") << "\n";
  os << "bundle checksum " << j.value("bundle_checksum", "?") << "\n\n";
  os << "group  sae_rank  sae_mse       pod_modes  pod_mse\n";
  for (const auto& g : j.at("groups")) {
    std::snprintf(line, sizeof line, "%-6s %8zu  %-12.5g  %9zu  %-12.5g\n",
                  g.at("group").get<std::string>().c_str(), g.at("sae_rank").get<std::size_t>(),
                  g.at("sae_mse").get<double>(), g.at("pod_modes").get<std::size_t>(),
                  g.at("pod_mse").get<double>());
    os << line;
  }
  const auto& s = j.at("surface");
  std::snprintf(line, sizeof line,
                "\nsurface frames %zu, peak amplitude %.4g m, max rmse %.4g m, max hd %.4g m, "
                "%.1f%% of frames within 5%%\n",
                s.at("frames").get<std::size_t>(), s.at("peak_amplitude").get<double>(),
                s.at("max_rmse").get<double>(), s.at("max_hd").get<double>(),
                100.0 * s.at("fraction_rmse_within_5pct").get<double>());
  os << line;
  for (const auto& a : j.at("audits")) {
    std::snprintf(line, sizeof line,
                  "rollout %zu: %zu states, max|Edot| %.3g, min Sdot %.3g, max deg %.3g, "
                  "min eig(M) %.3g -> %s\n",
                  a.at("rollout").get<std::size_t>(), a.at("steps").get<std::size_t>(),
                  a.at("max_abs_e_dot").get<double>(), a.at("min_s_dot").get<double>(),
                  a.at("max_deg_residual").get<double>(), a.at("min_eig_m").get<double>(),
                  a.at("passed").get<bool>() ? "pass" : "FAIL");
    os << line;
  }
  const std::string text = os.str();
  write_text(cfg.out_dir / "report.txt", text);
  return text;
}

}  // namespace gslosh
