#include "gslosh/gslosh.h"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

namespace {

struct Scratch {
  std::filesystem::path path;
  Scratch() {
    path = std::filesystem::temp_directory_path() / ("gslosh-capi-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("status names and argument errors") {
  CHECK(std::string(gslosh_version()).size() > 0);
  CHECK(std::string(gslosh_status_name(GSLOSH_OK)) == "ok");
  CHECK(std::string(gslosh_status_name(GSLOSH_ERR_IO)) == "i/o error");
  CHECK(std::string(gslosh_status_name(99)) == "unknown status");

  gslosh_config* cfg = nullptr;
  CHECK(gslosh_config_preset(nullptr, &cfg) == GSLOSH_ERR_ARGUMENT);
  CHECK(std::string(gslosh_last_error()).find("NULL") != std::string::npos);
  CHECK(gslosh_config_preset("laptop", &cfg) == GSLOSH_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(gslosh_config_from_json("{", &cfg) == GSLOSH_ERR_CONFIG);
  CHECK(gslosh_config_set_seed(nullptr, 1) == GSLOSH_ERR_ARGUMENT);
  CHECK(gslosh_bundle_load("/nonexistent/bundle.bin", nullptr) == GSLOSH_ERR_ARGUMENT);

  REQUIRE(gslosh_config_preset("tiny", &cfg) == GSLOSH_OK);
  CHECK(std::string(gslosh_last_error()).empty());
  CHECK(gslosh_config_set_path(cfg, "weights", "x") == GSLOSH_ERR_ARGUMENT);

  size_t len = 0;
  REQUIRE(gslosh_config_to_json(cfg, nullptr, 0, &len) == GSLOSH_OK);
  CHECK(len > 10);
  std::vector<char> buf(len + 1);
  CHECK(gslosh_config_to_json(cfg, buf.data(), buf.size(), &len) == GSLOSH_OK);
  CHECK(buf[len] == '\0');
  std::vector<char> small(8);
  CHECK(gslosh_config_to_json(cfg, small.data(), small.size(), &len) == GSLOSH_ERR_ARGUMENT);
  CHECK(small[7] == '\0');

  gslosh_config* copy = nullptr;
  REQUIRE(gslosh_config_from_json(buf.data(), &copy) == GSLOSH_OK);
  gslosh_config_free(copy);
  gslosh_config_free(cfg);
  gslosh_config_free(nullptr);
  gslosh_bundle_free(nullptr);
}

TEST_CASE("tiny pipeline through the C interface") {
  Scratch dir;
  gslosh_set_warnings(0);
  gslosh_config* cfg = nullptr;
  REQUIRE(gslosh_config_preset("tiny", &cfg) == GSLOSH_OK);
  REQUIRE(gslosh_config_set_path(cfg, "data_dir", (dir / "data").c_str()) == GSLOSH_OK);
  REQUIRE(gslosh_config_set_path(cfg, "bundle", (dir / "b.bin").c_str()) == GSLOSH_OK);
  REQUIRE(gslosh_config_set_path(cfg, "out_dir", (dir / "out").c_str()) == GSLOSH_OK);

  CHECK(gslosh_train(cfg, "spnn") == GSLOSH_ERR_PIPELINE);
  CHECK(gslosh_train(cfg, "sae") == GSLOSH_ERR_IO);
  size_t files = 0;
  REQUIRE(gslosh_generate(cfg, &files) == GSLOSH_OK);
  CHECK(files == 3);
  CHECK(gslosh_train(cfg, "spnn") == GSLOSH_ERR_PIPELINE);
  CHECK(gslosh_train(cfg, "everything") == GSLOSH_ERR_CONFIG);
  for (const char* stage : {"sae", "spnn", "gru"}) REQUIRE(gslosh_train(cfg, stage) == GSLOSH_OK);

  size_t done = 0;
  int completed = 0;
  CHECK(gslosh_rollout(cfg, nullptr, 2, &done, &completed) == GSLOSH_OK);
  CHECK(done == 2);
  CHECK(completed == 1);
  int passed = -1;
  CHECK(gslosh_evaluate(cfg, &passed) == GSLOSH_OK);
  CHECK((passed == 0 || passed == 1));
  size_t len = 0;
  REQUIRE(gslosh_report(cfg, nullptr, 0, &len) == GSLOSH_OK);
  CHECK(len > 0);

  gslosh_bundle* b = nullptr;
  REQUIRE(gslosh_bundle_load((dir / "b.bin").c_str(), &b) == GSLOSH_OK);
  int present = 0;
  CHECK(gslosh_bundle_has_stage(b, "gru", &present) == GSLOSH_OK);
  CHECK(present == 1);
  size_t d = 0, state_dim = 0;
  REQUIRE(gslosh_bundle_latent_dim(b, &d) == GSLOSH_OK);
  REQUIRE(gslosh_bundle_state_dim(b, &state_dim) == GSLOSH_OK);
  CHECK(state_dim == 13 * 25);
  CHECK(d > 0);
  double dt = 0.0;
  CHECK(gslosh_bundle_dt(b, &dt) == GSLOSH_OK);
  CHECK(dt == doctest::Approx(0.015));
  char sum[17];
  CHECK(gslosh_bundle_checksum(b, sum, sizeof sum, &len) == GSLOSH_OK);
  CHECK(len == 16);

  std::vector<double> latent(d), next(d), state(state_dim), surface(GSLOSH_OBSERVATION_WIDTH);
  REQUIRE(gslosh_decode_state(b, latent.data(), state.data()) == GSLOSH_OK);
  REQUIRE(gslosh_encode_state(b, state.data(), latent.data()) == GSLOSH_OK);
  REQUIRE(gslosh_step(b, latent.data(), next.data()) == GSLOSH_OK);
  REQUIRE(gslosh_decode_surface(b, next.data(), surface.data()) == GSLOSH_OK);
  for (double v : surface) CHECK(std::isfinite(v));

  std::vector<double> frames(GSLOSH_SEQUENCE_LENGTH * GSLOSH_OBSERVATION_WIDTH);
  for (size_t k = 0; k < GSLOSH_SEQUENCE_LENGTH; ++k) {
    std::copy(surface.begin(), surface.end(), frames.begin() + k * GSLOSH_OBSERVATION_WIDTH);
  }
  CHECK(gslosh_encode_observations(b, frames.data(), latent.data()) == GSLOSH_OK);
  CHECK(gslosh_step(b, nullptr, next.data()) == GSLOSH_ERR_ARGUMENT);
  CHECK(gslosh_bundle_has_stage(b, "gru", nullptr) == GSLOSH_ERR_ARGUMENT);

  gslosh_bundle_free(b);
  gslosh_config_free(cfg);
}
