#include "gslosh/errors.hpp"
#include "gslosh/nn.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace gslosh;
using gslosh::test::check_gradient;
using gslosh::test::random_tensor;

TEST_CASE("activations and derivatives") {
  Tensor2 pre(1, 3);
  pre << -1.0, 0.0, 2.0;
  const Tensor2 relu = activate(Activation::relu, pre);
  CHECK(relu(0, 0) == 0.0);
  CHECK(relu(0, 2) == 2.0);
  const Tensor2 drelu = activation_derivative(Activation::relu, pre, relu);
  CHECK(drelu(0, 1) == 0.0);
  CHECK(drelu(0, 2) == 1.0);
  const Tensor2 sig = activate(Activation::sigmoid, pre);
  CHECK(sig(0, 1) == doctest::Approx(0.5));
  const Tensor2 th = activate(Activation::tanh, pre);
  const Tensor2 dth = activation_derivative(Activation::tanh, pre, th);
  CHECK(dth(0, 0) == doctest::Approx(1.0 - std::tanh(-1.0) * std::tanh(-1.0)));
  CHECK(activation_from_string(to_string(Activation::sigmoid)) == Activation::sigmoid);
  CHECK_THROWS_AS(activation_from_string("softplus"), ConfigError);
}

TEST_CASE("dense chain gradients match central differences") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> width(1, 6), depth(1, 4), batch(1, 4), act(0, 3);
  const Activation acts[] = {Activation::linear, Activation::relu, Activation::sigmoid,
                             Activation::tanh};
  for (int config = 0; config < 24; ++config) {
    std::vector<std::size_t> widths{static_cast<std::size_t>(width(rng))};
    const int layers = depth(rng);
    for (int i = 0; i < layers; ++i) widths.push_back(static_cast<std::size_t>(width(rng)));
    const Activation hidden = acts[act(rng)];
    Mlp net = Mlp::build(widths, 100 + config, hidden, acts[act(rng)]);
    // Nonzero biases keep relu pre-activations off the kink at 0.
    for (auto& layer : net.layers()) {
      layer.biases = gslosh::test::random_vector(rng, layer.biases.size(), 0.3);
    }
    const Tensor2 x = random_tensor(rng, batch(rng), static_cast<Eigen::Index>(widths.front()));
    const Tensor2 w = random_tensor(rng, x.rows(), static_cast<Eigen::Index>(widths.back()));
    // loss = sum(w .* out) + 0.5 |out|^2
    auto loss_of = [&](const Tensor2& out) { return (w.cwiseProduct(out)).sum() + 0.5 * out.squaredNorm(); };

    const Tensor2 out = net.forward(x);
    const Tensor2 dx = net.backward(w + out);
    auto params = net.flat_params();
    const auto grads = net.flat_grads();
    const auto pc = check_gradient(params, grads, [&] {
      net.set_flat_params(params);
      return loss_of(net.predict(x));
    });
    net.set_flat_params(params);
    CAPTURE(config);
    CHECK(pc.worst < 1e-4);

    Tensor2 xv = x;
    const auto ic = check_gradient({xv.data(), static_cast<std::size_t>(xv.size())},
                                   {dx.data(), static_cast<std::size_t>(dx.size())},
                                   [&] { return loss_of(net.predict(xv)); });
    CHECK(ic.worst < 1e-4);
  }
}

TEST_CASE("mlp forward and predict agree; backward needs a cached pass") {
  const std::size_t widths[] = {3, 5, 2};
  Mlp net = Mlp::build(widths, 4);
  CHECK_THROWS_AS(net.backward(Tensor2::Zero(1, 2)), StateError);
  std::mt19937_64 rng(2);
  const Tensor2 x = random_tensor(rng, 4, 3);
  CHECK((net.forward(x) - net.predict(x)).norm() == 0.0);
  CHECK_THROWS_AS(net.predict(Tensor2(Tensor2::Zero(1, 4))), ConfigError);
  CHECK(net.parameter_count() == 3 * 5 + 5 + 5 * 2 + 2);
  CHECK(net.widths() == std::vector<std::size_t>{3, 5, 2});
}

TEST_CASE("kaiming init is deterministic per seed") {
  const Tensor2 a = kaiming_init(20, 30, 9);
  CHECK((a - kaiming_init(20, 30, 9)).norm() == 0.0);
  CHECK((a - kaiming_init(20, 30, 10)).norm() > 0.0);
  const double var = a.squaredNorm() / static_cast<double>(a.size());
  CHECK(var == doctest::Approx(2.0 / 30.0).epsilon(0.25));
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.5, -3.0};
  AdamState s(2, 0.1, 0.0);
  adam_step(p, g, s);
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-1.9));
  CHECK(s.step == 1);

  AdamState wd(1, 0.1, 0.5);
  std::vector<double> q{2.0};
  const std::vector<double> zero{0.0};
  adam_step(q, zero, wd);
  CHECK(q[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));

  const std::vector<double> bad{std::nan("")};
  CHECK_THROWS_AS(adam_step(q, bad, wd), TrainingError);
}

TEST_CASE("adam minimizes a quadratic") {
  std::vector<double> p{3.0, -4.0};
  AdamState s(2, 0.05, 0.0);
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g{2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)};
    adam_step(p, g, s);
  }
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(p[1] == doctest::Approx(-0.5).epsilon(1e-2));
}

TEST_CASE("learning-rate schedule") {
  CHECK_THROWS_AS(LrSchedule({{10, 0.1}, {10, 0.1}}), ConfigError);
  const LrSchedule sched({{2, 0.1}, {4, 0.5}});
  AdamState s(1, 1.0, 0.0);
  for (std::size_t e = 0; e < 6; ++e) apply_schedule(s, sched, e);
  CHECK(s.lr == doctest::Approx(0.05));
}

TEST_CASE("training curve csv") {
  gslosh::test::TempDir dir("curve");
  TrainingCurve c;
  c.reg_label = "deg";
  c.rows.push_back({1, 0.5, 0.25, 0.75});
  c.write_csv(dir / "c.csv");
  std::ifstream is(dir / "c.csv");
  std::string head, row;
  std::getline(is, head);
  std::getline(is, row);
  CHECK(head == "epoch,mse,deg,total");
  CHECK(row.rfind("1,0.5,0.25,0.75", 0) == 0);
  CHECK(c.first_total() == 0.75);
}
