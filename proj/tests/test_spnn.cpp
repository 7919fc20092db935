#include "gslosh/errors.hpp"
#include "gslosh/spnn.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace gslosh;
using gslosh::test::check_gradient;
using gslosh::test::random_tensor;
using gslosh::test::random_vector;

namespace {

GenericOperators random_ops(std::mt19937_64& rng, std::size_t d, FrictionParam p) {
  const Vector raw = random_vector(rng, static_cast<Eigen::Index>(spnn_output_size(d)));
  return unpack_operators({raw.data(), static_cast<std::size_t>(raw.size())}, d, p);
}

SpnnModel small_model(std::size_t d, FrictionParam p, bool project, std::uint64_t seed) {
  SpnnConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 8;
  cfg.friction = p;
  cfg.project = project;
  cfg.seed = seed;
  return SpnnModel::build(d, cfg);
}

}  // namespace

TEST_CASE("raw output size") {
  CHECK(spnn_output_size(13) == 195);
  CHECK(spnn_output_size(2) == 8);
  CHECK(spnn_output_size(1) == 3);
}

TEST_CASE("unpack places each raw entry") {
  const double raw[] = {5.0, 1.0, 2.0, 3.0, 0.5, -0.5, 4.0, 6.0};
  const auto ops = unpack_operators(raw, 2);
  CHECK(ops.L(0, 1) == 5.0);
  CHECK(ops.L(1, 0) == -5.0);
  CHECK(ops.L(0, 0) == 0.0);
  CHECK(ops.M(0, 0) == 1.0);
  CHECK(ops.M(0, 1) == 2.0);
  CHECK(ops.M(1, 0) == 2.0);
  CHECK(ops.M(1, 1) == 3.0);
  CHECK(ops.DE[1] == -0.5);
  CHECK(ops.DS[0] == 4.0);

  const auto psd = unpack_operators(raw, 2, FrictionParam::psd);
  // A = [[1, 2], [0, 3]] -> A A^T = [[5, 6], [6, 9]]
  CHECK(psd.M(0, 0) == doctest::Approx(5.0));
  CHECK(psd.M(0, 1) == doctest::Approx(6.0));
  CHECK(psd.M(1, 1) == doctest::Approx(9.0));

  CHECK_THROWS_AS(unpack_operators(std::span<const double>(raw, 7), 2), ConfigError);
  CHECK(friction_param_from_string(to_string(FrictionParam::psd)) == FrictionParam::psd);
  CHECK_THROWS_AS(friction_param_from_string("cholesky"), ConfigError);
}

TEST_CASE("pack inverts unpack") {
  std::mt19937_64 rng(1);
  for (std::size_t d = 1; d <= 6; ++d) {
    const Vector raw = random_vector(rng, static_cast<Eigen::Index>(spnn_output_size(d)));
    const auto ops = unpack_operators({raw.data(), static_cast<std::size_t>(raw.size())}, d);
    CHECK((pack_operators(ops) - raw).norm() == 0.0);
  }
}

TEST_CASE("unpacked operators are skew and symmetric for random outputs") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(1, 13);
  for (int i = 0; i < 1000; ++i) {
    const auto d = static_cast<std::size_t>(dim(rng));
    const auto p = i % 2 ? FrictionParam::psd : FrictionParam::symmetric;
    const auto ops = random_ops(rng, d, p);
    REQUIRE((ops.L + ops.L.transpose()).norm() == 0.0);
    REQUIRE((ops.M - ops.M.transpose()).norm() == 0.0);
    const Vector v = random_vector(rng, static_cast<Eigen::Index>(d));
    REQUIRE(std::abs(v.dot(ops.L * v)) < 1e-12 * (1.0 + v.squaredNorm()));
    if (p == FrictionParam::psd) REQUIRE(min_eigenvalue(ops.M) > -1e-10);
  }
}

TEST_CASE("explicit step") {
  GenericOperators ops;
  ops.L = Tensor2{{0.0, 1.0}, {-1.0, 0.0}};
  ops.M = Tensor2{{2.0, 0.0}, {0.0, 0.0}};
  ops.DE = Vector{{1.0, 2.0}};
  ops.DS = Vector{{0.5, 1.0}};
  // L DE = (2, -1), M DS = (1, 0)
  const Vector next = generic_step(Vector{{1.0, 1.0}}, ops, 0.1);
  CHECK(next[0] == doctest::Approx(1.3));
  CHECK(next[1] == doctest::Approx(0.9));
  CHECK_THROWS_AS(generic_step(Vector{{1.0, 1.0}}, ops, 0.0), ConfigError);
  CHECK_THROWS_AS(generic_step(Vector{{1.0}}, ops, 0.1), ConfigError);
  ops.DE[0] = std::nan("");
  CHECK_THROWS_AS(generic_step(Vector{{1.0, 1.0}}, ops, 0.1, 7), IntegrationError);
}

TEST_CASE("degeneracy residual") {
  GenericOperators ops;
  ops.L = Tensor2{{0.0, 1.0}, {-1.0, 0.0}};
  ops.M = Tensor2{{1.0, 0.0}, {0.0, 0.0}};
  ops.DE = Vector{{0.0, 3.0}};
  ops.DS = Vector{{0.0, 0.0}};
  CHECK(degeneracy_residual(ops) == 0.0);
  ops.DS = Vector{{2.0, 0.0}};
  ops.DE = Vector{{1.0, 0.0}};
  // L DS = (0, -2), M DE = (1, 0)
  CHECK(degeneracy_residual(ops) == doctest::Approx(5.0));
  const GenericOperators batch[] = {ops, ops};
  CHECK(degeneracy_loss(batch) == doctest::Approx(5.0));
  CHECK(degeneracy_loss({}) == 0.0);
}

TEST_CASE("projection enforces degeneracy and keeps structure") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto d = static_cast<std::size_t>(2 + i % 8);
    const auto p = i % 2 ? FrictionParam::psd : FrictionParam::symmetric;
    const auto ops = random_ops(rng, d, p);
    const auto pr = project_degenerate(ops);
    const double scale = 1.0 + ops.L.norm() * ops.DS.norm() + ops.M.norm() * ops.DE.norm();
    REQUIRE(degeneracy_residual(pr) < 1e-24 * scale * scale + 1e-20);
    REQUIRE((pr.L + pr.L.transpose()).norm() == 0.0);
    REQUIRE((pr.M - pr.M.transpose()).norm() == 0.0);
    if (p == FrictionParam::psd) REQUIRE(min_eigenvalue(pr.M) > -1e-10 * (1.0 + ops.M.norm()));
    // Energy conservation and entropy production of the projected rate.
    const Vector f = pr.rate();
    REQUIRE(std::abs(pr.DE.dot(f)) < 1e-9 * (1.0 + f.norm() * pr.DE.norm()));
    if (p == FrictionParam::psd) REQUIRE(pr.DS.dot(f) > -1e-9 * (1.0 + f.norm() * pr.DS.norm()));
    // Idempotent.
    const auto twice = project_degenerate(pr);
    REQUIRE((twice.L - pr.L).norm() < 1e-10 * (1.0 + pr.L.norm()));
    REQUIRE((twice.M - pr.M).norm() < 1e-10 * (1.0 + pr.M.norm()));
  }
  GenericOperators zero = random_ops(rng, 3, FrictionParam::symmetric);
  zero.DS.setZero();
  CHECK((project_degenerate(zero).L - zero.L).norm() == 0.0);
}

TEST_CASE("loss on two hand-built pairs") {
  // d = 1: L = 0, M = m, DE = e, DS = s. Rate m s, residual M DE = m e.
  Tensor2 raw(2, 3);
  raw << 2.0, 1.0, 3.0,   // m e s
      1.0, 0.0, -1.0;
  Tensor2 xn(2, 1), xnext(2, 1);
  xn << 0.0, 1.0;
  xnext << 0.5, 1.0;
  const double dt = 0.1;
  // r0 = 0 + 0.1 * 6 - 0.5 = 0.1, r1 = 1 - 0.1 - 1 = -0.1
  // deg0 = (2 * 1)^2 = 4, deg1 = 0
  const auto l = spnn_loss_from_raw(raw, xn, xnext, 1, FrictionParam::symmetric, dt, 10.0, 0.5);
  CHECK(l.mse == doctest::Approx(0.01));
  CHECK(l.deg == doctest::Approx(2.0));
  CHECK(l.total == doctest::Approx(10.0 * 0.01 + 0.5 * 2.0));
  CHECK_THROWS_AS(spnn_loss_from_raw(raw, xn.topRows(1), xnext, 1, FrictionParam::symmetric, dt,
                                     1.0, 1.0),
                  ConfigError);
}

TEST_CASE("loss gradient with respect to raw outputs") {
  std::mt19937_64 rng(6);
  for (int config = 0; config < 8; ++config) {
    const std::size_t d = 2 + config % 3;
    const auto p = config % 2 ? FrictionParam::psd : FrictionParam::symmetric;
    const bool project = (config / 2) % 2 == 1;
    Tensor2 raw = random_tensor(rng, 3, static_cast<Eigen::Index>(spnn_output_size(d)));
    const Tensor2 xn = random_tensor(rng, 3, static_cast<Eigen::Index>(d));
    const Tensor2 xnext = xn + 0.1 * random_tensor(rng, 3, static_cast<Eigen::Index>(d));
    Tensor2 grad;
    spnn_loss_from_raw(raw, xn, xnext, d, p, 0.05, 7.0, 0.3, &grad, project);
    const auto c = check_gradient(
        {raw.data(), static_cast<std::size_t>(raw.size())},
        {grad.data(), static_cast<std::size_t>(grad.size())}, [&] {
          return spnn_loss_from_raw(raw, xn, xnext, d, p, 0.05, 7.0, 0.3, nullptr, project).total;
        });
    CAPTURE(config);
    CHECK(c.worst < 1e-5);
  }
}

TEST_CASE("loss gradient with respect to network parameters") {
  std::mt19937_64 rng(7);
  for (bool project : {false, true}) {
    const std::size_t d = 3;
    SpnnModel model = small_model(d, FrictionParam::psd, project, 21);
    const Tensor2 xn = random_tensor(rng, 4, 3);
    const Tensor2 xnext = xn + 0.1 * random_tensor(rng, 4, 3);
    const Tensor2 raw = model.net().forward(xn);
    Tensor2 d_raw;
    spnn_loss_from_raw(raw, xn, xnext, d, FrictionParam::psd, 0.05, 3.0, 0.2, &d_raw, project);
    model.net().backward(d_raw);
    auto params = model.net().flat_params();
    const auto grads = model.net().flat_grads();
    const auto c = check_gradient(params, grads, [&] {
      model.net().set_flat_params(params);
      return spnn_loss(xn, xnext, model, 0.05, 3.0, 0.2).total;
    });
    CAPTURE(project);
    CHECK(c.worst < 1e-5);
  }
}

TEST_CASE("model shape checks") {
  const auto model = small_model(3, FrictionParam::symmetric, false, 1);
  CHECK(model.net().out_dim() == spnn_output_size(3));
  CHECK_THROWS_AS(model.operators(Vector::Zero(4)), ConfigError);
  const auto projected = small_model(3, FrictionParam::psd, true, 1);
  const auto ops = projected.operators(Vector{{0.1, -0.3, 0.2}});
  CHECK(degeneracy_residual(ops) < 1e-20);
}

TEST_CASE("rollout bookkeeping") {
  const auto model = small_model(3, FrictionParam::psd, true, 2);
  const Vector x0{{0.1, 0.2, -0.1}};
  const auto none = rollout(x0, model, 0, 0.01);
  CHECK(none.completed);
  CHECK(none.states.size() == 1);
  CHECK(none.e_dot.size() == 1);

  const auto r = rollout(x0, model, 5, 0.01);
  REQUIRE(r.states.size() == 6);
  Vector x = x0;
  for (std::size_t n = 0; n < 5; ++n) {
    x = generic_step(x, model.operators(x), 0.01, n);
    CHECK((r.states[n + 1] - x).norm() == 0.0);
  }
  for (std::size_t n = 0; n < r.states.size(); ++n) {
    CHECK(std::abs(r.e_dot[n]) < 1e-10);
    CHECK(r.s_dot[n] > -1e-10);
  }

  RolloutOptions opts;
  opts.override_state = [](std::size_t n) -> std::optional<Vector> {
    if (n == 2) return Vector::Zero(3);
    return std::nullopt;
  };
  const auto reset = rollout(x0, model, 3, 0.01, opts);
  CHECK(reset.states[2].norm() == 0.0);

  RolloutOptions tight;
  tight.blowup_factor = 1e-9;
  const auto blown = rollout(x0, model, 3, 0.01, tight);
  CHECK_FALSE(blown.completed);
  CHECK(blown.states.size() == 1);
  CHECK_FALSE(blown.error.empty());
}

TEST_CASE("one explicit step of a conservative flow drifts the energy by O(dt^2)") {
  // E = |x|^2 / 2 under a rigid rotation gains exactly dt^2 / 2 per step.
  auto drift = [](double dt) {
    GenericOperators ops;
    ops.L = Tensor2{{0.0, 1.0}, {-1.0, 0.0}};
    ops.M = Tensor2::Zero(2, 2);
    ops.DS = Vector::Zero(2);
    Vector x{{1.0, 0.0}};
    ops.DE = x;
    x = generic_step(x, ops, dt);
    return 0.5 * x.squaredNorm() - 0.5;
  };
  const double a = drift(0.01), b = drift(0.005);
  CHECK(a == doctest::Approx(0.5e-4));
  CHECK(a / b == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("training reduces the loss on a damped oscillator") {
  const std::size_t n = 200;
  const double dt = 0.05;
  Tensor2 xn(n, 2), xnext(n, 2);
  Vector x{{1.0, 0.0}};
  for (std::size_t i = 0; i < n; ++i) {
    xn.row(static_cast<Eigen::Index>(i)) = x.transpose();
    const Vector f{{x[1], -x[0] - 0.1 * x[1]}};
    x += dt * f;
    xnext.row(static_cast<Eigen::Index>(i)) = x.transpose();
  }
  SpnnConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 16;
  cfg.epochs = 60;
  cfg.dt = dt;
  cfg.lr = 3e-3;
  cfg.schedule = LrSchedule();
  cfg.friction = FrictionParam::psd;
  cfg.project = true;
  const auto res = train_spnn(xn, xnext, cfg);
  CHECK(res.curve.last_total() < 0.2 * res.curve.first_total());
  CHECK(res.model.projected());
}
