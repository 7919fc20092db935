#include "gslosh/errors.hpp"
#include "gslosh/metrics.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>

using namespace gslosh;
using gslosh::test::random_vector;
using gslosh::test::TempDir;

TEST_CASE("rmse examples") {
  const double a[] = {0, 0, 1, 1};
  const double b[] = {3, 4, 1, 1};
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(25.0 / 2.0)));
  CHECK(rmse(a, a) == 0.0);
  const double c[] = {0, 0};
  CHECK_THROWS_AS(rmse(a, c), DataError);
  CHECK_THROWS_AS(rmse(std::span<const double>(a, 3), std::span<const double>(b, 3)), DataError);
  CHECK_THROWS_AS(rmse(std::span<const double>{}, std::span<const double>{}), DataError);
}

TEST_CASE("hausdorff examples") {
  const double x[] = {0, 0, 1, 0};
  const double y[] = {0, 0, 1, 0, 5, 0};
  CHECK(hausdorff(x, y) == doctest::Approx(4.0));
  CHECK(hausdorff(y, x) == doctest::Approx(4.0));
  const double p[] = {0, 0};
  const double q[] = {3, 4};
  CHECK(hausdorff(p, q) == doctest::Approx(5.0));
  CHECK_THROWS_AS(hausdorff(std::span<const double>{}, q), DataError);
}

TEST_CASE("hausdorff is a metric and bounded by the pointwise error") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const Vector x = random_vector(rng, 42), y = random_vector(rng, 42), z = random_vector(rng, 42);
    const std::span<const double> sx(x.data(), 42), sy(y.data(), 42), sz(z.data(), 42);
    const double hxy = hausdorff(sx, sy);
    REQUIRE(hausdorff(sx, sx) == 0.0);
    REQUIRE(hxy == doctest::Approx(hausdorff(sy, sx)));
    REQUIRE(hxy <= hausdorff(sx, sz) + hausdorff(sz, sy) + 1e-12);
    double worst = 0.0;
    for (int k = 0; k < 42; k += 2) worst = std::max(worst, std::hypot(x[k] - y[k], x[k + 1] - y[k + 1]));
    REQUIRE(hxy <= worst + 1e-12);
    REQUIRE(rmse(sx, sy) <= worst + 1e-12);
  }
}

TEST_CASE("thermodynamic audit") {
  RolloutResult r;
  GenericOperators ops;
  ops.L = Tensor2{{0.0, 1.0}, {-1.0, 0.0}};
  ops.M = Tensor2{{0.0, 0.0}, {0.0, 1.0}};
  ops.DE = Vector{{1.0, 0.0}};
  ops.DS = Vector{{0.0, 1.0}};
  // Rate (0, -1) + (0, 1) = 0; L DS = (1, 0) breaks degeneracy.
  r.operators.push_back(ops);
  auto a = thermo_audit(r);
  CHECK(a.steps == 1);
  CHECK(a.max_abs_e_dot == 0.0);
  CHECK(a.max_deg_residual == doctest::Approx(1.0));
  CHECK_FALSE(a.degeneracy_ok);
  CHECK_FALSE(a.passed());

  ops.L.setZero();
  ops.M = Tensor2{{0.0, 0.0}, {0.0, -1.0}};
  r.operators = {ops};
  a = thermo_audit(r);
  CHECK(a.min_s_dot == doctest::Approx(-1.0));
  CHECK_FALSE(a.entropy_ok);
  CHECK(a.min_eig_m == doctest::Approx(-1.0));
  CHECK(a.energy_ok);

  ops.M = Tensor2{{0.0, 0.0}, {0.0, 2.0}};
  r.operators = {ops};
  a = thermo_audit(r);
  CHECK(a.passed());
  CHECK(a.min_s_dot == doctest::Approx(2.0));

  EvalReport rep;
  rep.audits = {a};
  rep.rollouts = {r};
  CHECK(rep.audit_passed());
  rep.rollouts[0].completed = false;
  CHECK_FALSE(rep.audit_passed());
}

TEST_CASE("rmse fraction within a share of the peak amplitude") {
  EvalReport rep;
  CHECK(rep.fraction_rmse_within(0.05) == 1.0);
  rep.peak_amplitude = 2.0;
  rep.surface.rmse = {0.05, 0.1, 0.2, 0.11};
  CHECK(rep.fraction_rmse_within(0.05) == doctest::Approx(0.5));
}

TEST_CASE("report files are a pure function of the report") {
  EvalReport rep;
  rep.bundle_checksum = "abc";
  rep.groups.push_back({Group::q, 3, 0.01, 3, 0.02});
  rep.surface.time = {0.0, 0.015};
  rep.surface.rmse = {1e-4, 2e-4};
  rep.surface.hd = {1e-4, 3e-4};
  rep.surface.e_dot = {0.0, 0.0};
  rep.surface.s_dot = {0.0, 0.0};
  rep.surface.deg_residual = {0.0, 0.0};
  rep.peak_amplitude = 0.006;
  RolloutResult r;
  r.states = {Vector::Zero(2)};
  r.dt = 0.015;
  GenericOperators ops{Tensor2::Zero(2, 2), Tensor2::Zero(2, 2), Vector::Zero(2), Vector::Zero(2)};
  r.operators = {ops};
  r.e_dot = {0.0};
  r.s_dot = {0.0};
  r.deg_residual = {0.0};
  r.min_eig_m = {0.0};
  rep.rollouts = {r};
  rep.audits = {thermo_audit(r)};

  TempDir a("report-a"), b("report-b");
  write_report(rep, a.path());
  write_report(rep, b.path());
  for (const char* name : {"report.json", "groups.csv", "series.csv", "rollout_0.csv"}) {
    std::ifstream fa(a / name), fb(b / name);
    REQUIRE(fa.good());
    const std::string sa((std::istreambuf_iterator<char>(fa)), {});
    const std::string sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
  }
  const auto j = nlohmann::json::parse(report_json(rep));
  CHECK(j["schema"] == EvalReport::kSchema);
  CHECK(j["bundle_checksum"] == "abc");
}
