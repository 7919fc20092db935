#include "gslosh/errors.hpp"
#include "gslosh/geometry.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <fstream>

using namespace gslosh;

namespace {

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("pinhole projection example") {
  CameraIntrinsics k{800.0, 600.0, 320.0, 240.0, 0.0};
  CameraExtrinsics e;
  e.t = Eigen::Vector3d(0.0, 0.0, 2.0);
  const auto px = project(Eigen::Vector3d(0.1, -0.2, 0.0), k, e);
  CHECK(px.u == doctest::Approx(320.0 + 800.0 * 0.05));
  CHECK(px.v == doctest::Approx(240.0 - 600.0 * 0.1));
  CHECK(px.depth == doctest::Approx(2.0));
  CHECK_THROWS_AS(project(Eigen::Vector3d(0.0, 0.0, -3.0), k, e), ProjectionError);
  CHECK(camera_center(e).isApprox(Eigen::Vector3d(0.0, 0.0, -2.0)));
  CHECK(k.matrix()(0, 2) == 320.0);
}

TEST_CASE("projection and back-projection are inverse") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    CameraIntrinsics k{500.0 + 100.0 * u(rng), 500.0 + 100.0 * u(rng), 300.0 * u(rng),
                       200.0 * u(rng), 5.0 * u(rng)};
    CameraExtrinsics e;
    e.R = random_rotation(rng);
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    e.t = -e.R * p + Eigen::Vector3d(0.1 * u(rng), 0.1 * u(rng), 2.0 + u(rng));
    e.validate();
    const Eigen::Vector3d w(p.x() + 0.2 * u(rng), p.y() + 0.2 * u(rng), p.z() + 0.2 * u(rng));
    const auto px = project(w, k, e);
    REQUIRE((backproject(px.u, px.v, px.depth, k, e) - w).norm() < 1e-10);
    // The camera centre, the point and its back-projection at another depth are collinear.
    const Eigen::Vector3d c = camera_center(e);
    const Eigen::Vector3d far = backproject(px.u, px.v, 2.0 * px.depth, k, e);
    REQUIRE(((far - c).normalized() - (w - c).normalized()).norm() < 1e-10);
  }
  CameraIntrinsics bad{0.0, 1.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(backproject(0.0, 0.0, 1.0, bad, CameraExtrinsics{}), ConfigError);
  CHECK_THROWS_AS(backproject(0.0, 0.0, 0.0, CameraIntrinsics{}, CameraExtrinsics{}),
                  ProjectionError);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cup frame round-trip") {
  std::mt19937_64 rng(13);
  RigidPose cup;
  cup.R = random_rotation(rng);
  cup.t = Eigen::Vector3d(0.3, -0.1, 0.7);
  std::vector<Eigen::Vector3d> pts{Eigen::Vector3d(0.0, 0.0, 0.0), Eigen::Vector3d(1.0, 2.0, 3.0)};
  const auto local = to_cup_frame(pts, cup);
  CHECK(local[0].isApprox(-cup.R.transpose() * cup.t));
  const auto back = from_cup_frame(local, cup);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK((back[i] - pts[i]).norm() < 1e-12);
  // Distances are preserved.
  CHECK((local[1] - local[0]).norm() == doctest::Approx((pts[1] - pts[0]).norm()));
  RigidPose scaled;
  scaled.R *= 2.0;
  CHECK_THROWS_AS(scaled.validate(), ConfigError);
  RigidPose mirror;
  mirror.R(2, 2) = -1.0;
  CHECK_THROWS_AS(mirror.validate(), ConfigError);
}

TEST_CASE("camera from json") {
  const auto cam = camera_from_json(
      R"({"f_x": 700, "f_y": 710, "c_x": 320, "c_y": 240, "skew": 0.5,
          "R": [1,0,0, 0,1,0, 0,0,1], "t": [0, 0, 1.5]})");
  CHECK(cam.intrinsics.fy == 710.0);
  CHECK(cam.intrinsics.skew == 0.5);
  CHECK(cam.extrinsics.t.z() == 1.5);
  CHECK_THROWS_AS(camera_from_json(R"({"f_x": 700})"), ConfigError);
  CHECK_THROWS_AS(camera_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(camera_from_json(R"({"f_x": 1, "f_y": 1, "c_x": 0, "c_y": 0, "R": [1, 0]})"),
                  ConfigError);

  gslosh::test::TempDir dir("camera");
  {
    std::ofstream os(dir / "cam.json");
    os << R"({"f_x": 1, "f_y": 2, "c_x": 0, "c_y": 0})";
  }
  CHECK(load_camera(dir / "cam.json").intrinsics.fy == 2.0);
  CHECK_THROWS_AS(load_camera(dir / "none.json"), IoError);
}
