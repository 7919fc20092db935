#include "gslosh/gslosh.h"

#include "gslosh/errors.hpp"
#include "gslosh/log.hpp"
#include "gslosh/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

struct gslosh_config {
  gslosh::PipelineConfig cfg;
};

struct gslosh_bundle {
  gslosh::ModelBundle bundle;
};

namespace {

thread_local std::string last_error;

class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
int guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return GSLOSH_OK;
  } catch (const gslosh::Error& e) {
    last_error = e.what();
    return static_cast<int>(e.kind());
  } catch (const ArgumentError& e) {
    last_error = e.what();
    return GSLOSH_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return GSLOSH_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return GSLOSH_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown exception";
    return GSLOSH_ERR_INTERNAL;
  }
}

template <class T>
T& require(T* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is NULL");
  return *p;
}

void need(const void* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is NULL");
}

void write_text(const std::string& text, char* buf, std::size_t cap, std::size_t* len) {
  if (len) *len = text.size();
  if (!buf && cap == 0) return;
  need(buf, "buf");
  if (cap == 0) throw ArgumentError("buffer capacity is 0");
  const std::size_t n = std::min(text.size(), cap - 1);
  std::memcpy(buf, text.data(), n);
  buf[n] = '\0';
  if (n < text.size()) {
    throw ArgumentError("buffer holds " + std::to_string(cap) + " bytes, " +
                        std::to_string(text.size() + 1) + " needed");
  }
}

gslosh::Vector latent_in(const gslosh::ModelBundle& b, const double* x) {
  need(x, "latent");
  b.require("sae");
  return Eigen::Map<const gslosh::Vector>(x, static_cast<Eigen::Index>(b.latent_dim()));
}

void latent_out(const gslosh::Vector& x, double* out) {
  std::copy(x.data(), x.data() + x.size(), out);
}

}  // namespace

extern "C" {

const char* gslosh_version(void) { return "1.0.0"; }

const char* gslosh_status_name(int status) {
  switch (status) {
    case GSLOSH_OK: return "ok";
    case GSLOSH_ERR_CONFIG: return "config error";
    case GSLOSH_ERR_STATE: return "state error";
    case GSLOSH_ERR_TRAINING: return "training error";
    case GSLOSH_ERR_DATA: return "data error";
    case GSLOSH_ERR_INTEGRATION: return "integration error";
    case GSLOSH_ERR_PROJECTION: return "projection error";
    case GSLOSH_ERR_IO: return "i/o error";
    case GSLOSH_ERR_PIPELINE: return "pipeline error";
    case GSLOSH_ERR_ARGUMENT: return "invalid argument";
    case GSLOSH_ERR_INTERNAL: return "internal error";
    default: return "unknown status";
  }
}

const char* gslosh_last_error(void) { return last_error.c_str(); }

void gslosh_set_warnings(int enabled) { gslosh::set_warnings_enabled(enabled != 0); }

int gslosh_config_preset(const char* name, gslosh_config** out) {
  return guarded([&] {
    need(name, "name");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<gslosh_config>();
    c->cfg = gslosh::PipelineConfig::preset_config(name);
    *out = c.release();
  });
}

int gslosh_config_from_json(const char* json, gslosh_config** out) {
  return guarded([&] {
    need(json, "json");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<gslosh_config>();
    c->cfg = gslosh::PipelineConfig::from_json(json);
    c->cfg.validate();
    *out = c.release();
  });
}

int gslosh_config_load(const char* path, gslosh_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<gslosh_config>();
    c->cfg = gslosh::PipelineConfig::load(path);
    c->cfg.validate();
    *out = c.release();
  });
}

void gslosh_config_free(gslosh_config* config) { delete config; }

int gslosh_config_set_seed(gslosh_config* config, uint64_t seed) {
  return guarded([&] { require(config, "config").cfg.set_seed(seed); });
}

int gslosh_config_set_path(gslosh_config* config, const char* key, const char* path) {
  return guarded([&] {
    auto& c = require(config, "config").cfg;
    need(key, "key");
    need(path, "path");
    const std::string k = key;
    if (k == "data_dir") {
      c.data_dir = path;
    } else if (k == "bundle") {
      c.bundle_path = path;
    } else if (k == "out_dir") {
      c.out_dir = path;
    } else {
      throw ArgumentError("unknown path key '" + k + "' (expected data_dir, bundle or out_dir)");
    }
  });
}

int gslosh_config_to_json(const gslosh_config* config, char* buf, size_t cap, size_t* len) {
  return guarded([&] { write_text(require(config, "config").cfg.to_json(), buf, cap, len); });
}

int gslosh_generate(const gslosh_config* config, size_t* files_written) {
  return guarded([&] {
    const auto& c = require(config, "config").cfg;
    c.validate();
    const std::size_t n = gslosh::cmd_generate(c);
    if (files_written) *files_written = n;
  });
}

int gslosh_train(const gslosh_config* config, const char* stage) {
  return guarded([&] {
    const auto& c = require(config, "config").cfg;
    need(stage, "stage");
    c.validate();
    gslosh::cmd_train(stage, c);
  });
}

int gslosh_rollout(const gslosh_config* config, const char* sequence_file, size_t steps,
                   size_t* steps_done, int* completed) {
  return guarded([&] {
    const auto& c = require(config, "config").cfg;
    c.validate();
    const auto run = gslosh::cmd_rollout(c, sequence_file ? sequence_file : "", steps);
    const std::size_t n = run.result.states.size();
    if (steps_done) *steps_done = n > 0 ? n - 1 : 0;
    if (completed) *completed = run.result.completed ? 1 : 0;
  });
}

int gslosh_evaluate(const gslosh_config* config, int* audit_passed) {
  return guarded([&] {
    const auto& c = require(config, "config").cfg;
    c.validate();
    const bool ok = gslosh::cmd_evaluate(c);
    if (audit_passed) *audit_passed = ok ? 1 : 0;
  });
}

int gslosh_report(const gslosh_config* config, char* buf, size_t cap, size_t* len) {
  return guarded([&] {
    const auto& c = require(config, "config").cfg;
    write_text(gslosh::cmd_report(c), buf, cap, len);
  });
}

int gslosh_bundle_load(const char* path, gslosh_bundle** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto b = std::make_unique<gslosh_bundle>();
    b->bundle = gslosh::load_bundle(path);
    *out = b.release();
  });
}

void gslosh_bundle_free(gslosh_bundle* bundle) { delete bundle; }

int gslosh_bundle_has_stage(const gslosh_bundle* bundle, const char* stage, int* present) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(stage, "stage");
    need(present, "present");
    *present = b.has_stage(stage) ? 1 : 0;
  });
}

int gslosh_bundle_latent_dim(const gslosh_bundle* bundle, size_t* dim) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(dim, "dim");
    b.require("sae");
    *dim = b.latent_dim();
  });
}

int gslosh_bundle_state_dim(const gslosh_bundle* bundle, size_t* dim) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(dim, "dim");
    b.require("sae");
    *dim = gslosh::kFieldsPerParticle * b.reducer->particles();
  });
}

int gslosh_bundle_dt(const gslosh_bundle* bundle, double* dt) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(dt, "dt");
    b.require("spnn");
    *dt = b.spnn_dt;
  });
}

int gslosh_bundle_checksum(const gslosh_bundle* bundle, char* buf, size_t cap, size_t* len) {
  return guarded(
      [&] { write_text(gslosh::bundle_checksum(require(bundle, "bundle").bundle), buf, cap, len); });
}

int gslosh_encode_state(const gslosh_bundle* bundle, const double* state, double* latent) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(state, "state");
    need(latent, "latent");
    b.require("sae");
    const std::size_t m = b.reducer->particles();
    const auto s = gslosh::Snapshot::from_flat(0.0, {state, gslosh::kFieldsPerParticle * m}, m);
    latent_out(b.reducer->encode(s), latent);
  });
}

int gslosh_encode_observations(const gslosh_bundle* bundle, const double* frames,
                               double* latent) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(frames, "frames");
    need(latent, "latent");
    std::vector<gslosh::FreeSurfaceObservation> window;
    for (std::size_t k = 0; k < GSLOSH_SEQUENCE_LENGTH; ++k) {
      window.push_back(gslosh::FreeSurfaceObservation::from_flat(
          {frames + k * GSLOSH_OBSERVATION_WIDTH, GSLOSH_OBSERVATION_WIDTH}));
    }
    latent_out(b.encode_observations(window), latent);
  });
}

int gslosh_step(const gslosh_bundle* bundle, const double* latent, double* next) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(next, "next");
    const gslosh::Vector x = latent_in(b, latent);
    b.require("spnn");
    latent_out(b.spnn->step(x, b.spnn_dt), next);
  });
}

int gslosh_decode_state(const gslosh_bundle* bundle, const double* latent, double* state) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(state, "state");
    const gslosh::Vector x = latent_in(b, latent);
    const auto flat = b.reducer->decode(x).flat();
    std::copy(flat.begin(), flat.end(), state);
  });
}

int gslosh_decode_surface(const gslosh_bundle* bundle, const double* latent, double* surface) {
  return guarded([&] {
    const auto& b = require(bundle, "bundle").bundle;
    need(surface, "surface");
    const gslosh::Vector x = latent_in(b, latent);
    const auto flat = b.surface_of(b.reducer->decode_positions(x)).flat();
    std::copy(flat.data(), flat.data() + flat.size(), surface);
  });
}

}  // extern "C"
