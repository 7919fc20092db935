// gslosh command-line front end over the C API.

#include "gslosh/gslosh.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kAuditFailed = 11;

struct Options {
  std::string config_path;
  std::string preset;
  std::string bundle;
  std::string data_dir;
  std::string out_dir;
  std::string stage;
  std::string sequence;
  long long seed = -1;
  std::size_t steps = 800;
  bool quiet = false;
};

struct ConfigDeleter {
  void operator()(gslosh_config* c) const { gslosh_config_free(c); }
};
using ConfigPtr = std::unique_ptr<gslosh_config, ConfigDeleter>;

struct Failure {
  int status;
};

void check(int status) {
  if (status != GSLOSH_OK) {
    std::cerr << "gslosh: " << gslosh_status_name(status) << ": " << gslosh_last_error() << "\n";
    throw Failure{status};
  }
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    std::cerr << "gslosh: cannot read config " << path << "\n";
    throw Failure{GSLOSH_ERR_IO};
  }
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ConfigPtr make_config(const Options& o) {
  gslosh_config* raw = nullptr;
  if (!o.config_path.empty()) {
    std::string text = slurp(o.config_path);
    if (!o.preset.empty()) {
      auto doc = nlohmann::ordered_json::parse(text, nullptr, false);
      if (doc.is_discarded() || !doc.is_object()) {
        std::cerr << "gslosh: " << o.config_path << " is not a JSON object\n";
        throw Failure{GSLOSH_ERR_CONFIG};
      }
      doc["preset"] = o.preset;
      text = doc.dump();
    }
    check(gslosh_config_from_json(text.c_str(), &raw));
  } else {
    check(gslosh_config_preset(o.preset.empty() ? "desk-scale" : o.preset.c_str(), &raw));
  }
  ConfigPtr cfg(raw);
  if (o.seed >= 0) check(gslosh_config_set_seed(cfg.get(), static_cast<uint64_t>(o.seed)));
  if (!o.bundle.empty()) check(gslosh_config_set_path(cfg.get(), "bundle", o.bundle.c_str()));
  if (!o.data_dir.empty()) check(gslosh_config_set_path(cfg.get(), "data_dir", o.data_dir.c_str()));
  if (!o.out_dir.empty()) check(gslosh_config_set_path(cfg.get(), "out_dir", o.out_dir.c_str()));
  return cfg;
}

std::string report_text(const gslosh_config* cfg) {
  std::size_t len = 0;
  check(gslosh_report(cfg, nullptr, 0, &len));
  std::vector<char> buf(len + 1);
  check(gslosh_report(cfg, buf.data(), buf.size(), &len));
  return {buf.data(), len};
}

int run_generate(const Options& o) {
  auto cfg = make_config(o);
  std::size_t files = 0;
  check(gslosh_generate(cfg.get(), &files));
  if (!o.quiet) std::cout << "wrote " << files << " trajectory files\n";
  return 0;
}

int run_train(const Options& o) {
  auto cfg = make_config(o);
  std::vector<std::string> stages;
  if (o.stage == "all") {
    stages = {"sae", "spnn", "gru"};
  } else {
    stages = {o.stage};
  }
  for (const auto& s : stages) {
    check(gslosh_train(cfg.get(), s.c_str()));
    if (!o.quiet) std::cout << "trained " << s << "\n";
  }
  return 0;
}

int run_rollout(const Options& o) {
  auto cfg = make_config(o);
  std::size_t done = 0;
  int completed = 0;
  check(gslosh_rollout(cfg.get(), o.sequence.empty() ? nullptr : o.sequence.c_str(), o.steps,
                       &done, &completed));
  if (!o.quiet) {
    std::cout << "integrated " << done << " of " << o.steps << " steps"
              << (completed ? "" : " (stopped early)") << "\n";
  }
  return completed ? 0 : GSLOSH_ERR_INTEGRATION;
}

int run_evaluate(const Options& o) {
  auto cfg = make_config(o);
  int passed = 0;
  check(gslosh_evaluate(cfg.get(), &passed));
  if (!o.quiet) std::cout << report_text(cfg.get());
  if (!passed) {
    std::cerr << "gslosh: thermodynamic audit failed\n";
    return kAuditFailed;
  }
  return 0;
}

int run_report(const Options& o) {
  auto cfg = make_config(o);
  std::cout << report_text(cfg.get());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thermodynamics-informed latent sloshing simulator"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "paper-scale, desk-scale or tiny");
    sub->add_option("--bundle", o.bundle, "model bundle path");
    sub->add_option("--data-dir", o.data_dir, "trajectory directory");
    sub->add_option("--out-dir", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "master seed")->check(CLI::NonNegativeNumber);
    sub->add_flag("-q,--quiet", o.quiet, "suppress warnings and progress");
  };

  auto* gen = app.add_subcommand("generate", "write synthetic training and held-out trajectories");
  common(gen);
  auto* train = app.add_subcommand("train", "train one stage into the bundle");
  common(train);
  train->add_option("--stage", o.stage, "sae, spnn, gru or all")
      ->required()
      ->check(CLI::IsMember({"sae", "spnn", "gru", "all"}));
  auto* roll = app.add_subcommand("rollout", "integrate the latent model and decode each step");
  common(roll);
  roll->add_option("--steps", o.steps, "number of steps");
  roll->add_option("--sequence", o.sequence, "observation file (42 values per line)")
      ->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("evaluate", "write the evaluation report and audit");
  common(eval);
  auto* rep = app.add_subcommand("report", "print the last evaluation report");
  common(rep);

  CLI11_PARSE(app, argc, argv);
  gslosh_set_warnings(o.quiet ? 0 : 1);

  try {
    if (gen->parsed()) return run_generate(o);
    if (train->parsed()) return run_train(o);
    if (roll->parsed()) return run_rollout(o);
    if (eval->parsed()) return run_evaluate(o);
    if (rep->parsed()) return run_report(o);
  } catch (const Failure& f) {
    return f.status;
  }
  return 0;
}
