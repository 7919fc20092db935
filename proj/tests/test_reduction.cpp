#include "gslosh/errors.hpp"
#include "gslosh/reduction.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace gslosh;
using gslosh::test::random_tensor;
using gslosh::test::random_vector;

namespace {

Mlp identity_net(std::size_t n) {
  const auto k = static_cast<Eigen::Index>(n);
  return Mlp({DenseLayer(Tensor2::Identity(k, k), Vector::Zero(k), Activation::linear)});
}

/// One-particle reducer whose autoencoders are exact identities.
Reducer identity_reducer(std::mt19937_64& rng) {
  std::vector<Trajectory> trajs(1);
  trajs[0].dt = 1.0;
  trajs[0].particles = 1;
  for (int i = 0; i < 30; ++i) {
    const Vector flat = random_vector(rng, kFieldsPerParticle);
    trajs[0].snapshots.push_back(
        Snapshot::from_flat(i, {flat.data(), static_cast<std::size_t>(flat.size())}, 1));
  }
  std::vector<SnapshotRef> refs;
  for (std::size_t i = 0; i < 30; ++i) refs.push_back({0, i});
  Reducer r;
  r.norm = fit_norm_stats(trajs, refs);
  for (Group g : kGroups) {
    const auto gi = static_cast<std::size_t>(g);
    const std::size_t n = group_stride(g);
    r.saes[gi] = SparseAutoencoder(g, identity_net(n), identity_net(n), 0.0);
    for (std::size_t c = 0; c < n; ++c) r.layout.channels[gi].push_back(c);
    r.bottleneck_fill[gi] = Vector::Zero(static_cast<Eigen::Index>(n));
  }
  std::vector<const Snapshot*> ptrs;
  for (const auto& s : trajs[0].snapshots) ptrs.push_back(&s);
  const auto d = static_cast<Eigen::Index>(kFieldsPerParticle);
  r.latent_stats = {Vector::Zero(d), Vector::Ones(d), std::vector<char>(kFieldsPerParticle, 0),
                    Vector::Zero(d)};
  r.latent_stats = ChannelStats::fit(r.encode_batch(ptrs));
  return r;
}

}  // namespace

TEST_CASE("pod recovers a low-rank matrix") {
  std::mt19937_64 rng(1);
  const Tensor2 data = random_tensor(rng, 40, 3) * random_tensor(rng, 3, 10) +
                       Tensor2::Ones(40, 1) * random_tensor(rng, 1, 10);
  const auto basis = pod_fit(data, 3);
  CHECK(basis.rank() == 3);
  CHECK((basis.modes.transpose() * basis.modes - Tensor2::Identity(3, 3)).norm() < 1e-10);
  CHECK(pod_error(basis, data) < 1e-18 * data.squaredNorm() + 1e-20);
  for (Eigen::Index i = 1; i < basis.singular_values.size(); ++i) {
    CHECK(basis.singular_values[i] <= basis.singular_values[i - 1]);
  }
  CHECK(basis.singular_values[3] < 1e-6 * basis.singular_values[0]);

  const auto one = pod_fit(data, 1);
  // Truncation error equals the discarded squared singular values per snapshot.
  const double tail = basis.singular_values.tail(basis.singular_values.size() - 1).squaredNorm();
  CHECK(pod_error(one, data) == doctest::Approx(tail / 40.0));
  CHECK((pod_project_reconstruct(basis, data) - data).norm() < 1e-9);
}

TEST_CASE("autoencoder loss terms") {
  Tensor2 batch(2, 2), recon(2, 2), latent(2, 1);
  batch << 1, 2, 3, 4;
  recon << 1, 0, 3, 5;
  latent << -2, 4;
  const auto l = sae_loss_terms(batch, recon, latent, 0.5);
  CHECK(l.mse == doctest::Approx(2.5));
  CHECK(l.reg == doctest::Approx(3.0));
  CHECK(l.total == doctest::Approx(4.0));
  CHECK(sae_loss_terms(Tensor2(0, 2), Tensor2(0, 2), Tensor2(0, 1), 1.0).total == 0.0);
}

TEST_CASE("autoencoder shapes") {
  const auto sae = SparseAutoencoder::build(Group::sigma, 12, {8, 6}, 4, 3, 1e-3);
  CHECK(sae.input_dim() == 12);
  CHECK(sae.bottleneck() == 4);
  CHECK(sae.decoder().widths() == std::vector<std::size_t>{4, 6, 8, 12});
  CHECK(sae.group() == Group::sigma);
}

TEST_CASE("linear autoencoder training approaches the pod error") {
  std::mt19937_64 rng(2);
  const Tensor2 data = random_tensor(rng, 64, 2) * random_tensor(rng, 2, 6) +
                       0.05 * random_tensor(rng, 64, 6);
  SaeConfig cfg;
  cfg.hidden = {6};
  cfg.bottleneck = 2;
  cfg.lr = 1e-2;
  cfg.lambda_reg = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 3000;
  cfg.batch_size = 0;
  cfg.linear = true;
  const auto res = train_sae(Group::q, data, cfg);
  const double pod = pod_error(pod_fit(data, 2), data);
  const double sae = sae_loss(data, res.model).mse;
  CHECK(res.curve.last_total() < res.curve.first_total());
  CHECK(sae < 1.5 * pod + 1e-3);
  CHECK(sae >= pod * (1.0 - 1e-6));
}

TEST_CASE("active dimensions") {
  auto sae = SparseAutoencoder::build(Group::e, 3, {}, 3, 1, 0.0, true);
  Tensor2 w = Tensor2::Zero(3, 3);
  w(0, 0) = 1.0;
  w(2, 1) = 1e-6;
  sae.encoder().layers().back().weights = w;
  std::mt19937_64 rng(3);
  const auto a = measure_active_dims(sae, random_tensor(rng, 50, 3));
  CHECK(a.channels == std::vector<std::size_t>{0});
  CHECK(a.count() == 1);
  CHECK(a.stds[1] == 0.0);
}

TEST_CASE("latent layout") {
  LatentLayout layout;
  layout.channels[0] = {0, 3};
  layout.channels[2] = {1};
  layout.channels[4] = {2, 4, 5};
  CHECK(layout.dim() == 6);
  CHECK(layout.offset(Group::q) == 0);
  CHECK(layout.offset(Group::e) == 2);
  CHECK(layout.offset(Group::tau) == 3);
  CHECK(layout.slice_length(Group::v) == 0);
  layout.check_version();
  layout.version = "q,v,e/0";
  CHECK_THROWS_AS(layout.check_version(), ConfigError);
}

TEST_CASE("identity reducer round-trips snapshots and standardizes the latent") {
  std::mt19937_64 rng(4);
  const Reducer r = identity_reducer(rng);
  r.validate();
  CHECK(r.latent_dim() == kFieldsPerParticle);
  CHECK(r.particles() == 1);
  const Vector flat = random_vector(rng, kFieldsPerParticle);
  const auto s = Snapshot::from_flat(0.0, {flat.data(), kFieldsPerParticle}, 1);
  const Vector z = r.encode(s);
  const Snapshot back = r.decode(z, 2.0);
  CHECK(back.time == 2.0);
  for (std::size_t i = 0; i < kFieldsPerParticle; ++i) {
    CHECK(back.flat()[i] == doctest::Approx(flat[static_cast<Eigen::Index>(i)]));
  }
  const auto q = r.decode_positions(z);
  CHECK(q[2] == doctest::Approx(flat[2]));
  CHECK((encode_full(s, r) - z).norm() == 0.0);
  CHECK_THROWS_AS(r.encode(Snapshot::zeros(0.0, 2)), DataError);
}
