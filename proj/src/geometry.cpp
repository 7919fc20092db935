#include "gslosh/geometry.hpp"

#include "gslosh/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace gslosh {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera intrinsics: focal lengths must be positive (f_x = " +
                      std::to_string(fx) + ", f_y = " + std::to_string(fy) + ")");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(skew)) {
    throw ConfigError("camera intrinsics: non-finite principal point or skew");
  }
}

void RigidPose::validate() const {
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = R.determinant();
  if (!(ortho <= 1e-9) || !(std::abs(det - 1.0) <= 1e-9)) {
    throw ConfigError("pose: R is not a proper rotation (|R^T R - I| = " + std::to_string(ortho) +
                      ", det = " + std::to_string(det) + ")");
  }
  if (!t.allFinite()) throw ConfigError("pose: non-finite translation");
}

PixelDepth project(const Eigen::Vector3d& p_world, const CameraIntrinsics& k,
                   const CameraExtrinsics& e) {
  const Eigen::Vector3d pc = e.apply(p_world);
  if (!(pc.z() > 0.0)) {
    throw ProjectionError("project: point lies behind the camera (depth " + std::to_string(pc.z()) +
                          ")");
  }
  const Eigen::Vector3d h = k.matrix() * pc;
  return {h.x() / h.z(), h.y() / h.z(), pc.z()};
}

Eigen::Vector3d backproject(double u, double v, double depth, const CameraIntrinsics& k,
                            const CameraExtrinsics& e) {
  if (k.fx == 0.0 || k.fy == 0.0) throw ConfigError("backproject: singular intrinsics (f = 0)");
  if (!(depth > 0.0)) throw ProjectionError("backproject: depth must be positive");
  const double y = (v - k.cy) / k.fy;
  const double x = (u - k.cx - k.skew * y) / k.fx;
  return e.inverse_apply(Eigen::Vector3d(x * depth, y * depth, depth));
}

Eigen::Vector3d camera_center(const CameraExtrinsics& e) { return -e.R.transpose() * e.t; }

std::vector<Eigen::Vector3d> to_cup_frame(const std::vector<Eigen::Vector3d>& points,
                                          const RigidPose& cup) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(cup.inverse_apply(p));
  return out;
}

std::vector<Eigen::Vector3d> from_cup_frame(const std::vector<Eigen::Vector3d>& points,
                                            const RigidPose& cup) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(cup.apply(p));
  return out;
}

Camera camera_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("camera json: ") + ex.what());
  }
  Camera cam;
  try {
    cam.intrinsics.fx = j.at("f_x").get<double>();
    cam.intrinsics.fy = j.at("f_y").get<double>();
    cam.intrinsics.cx = j.at("c_x").get<double>();
    cam.intrinsics.cy = j.at("c_y").get<double>();
    cam.intrinsics.skew = j.value("skew", 0.0);
    if (j.contains("R")) {
      const auto r = j.at("R").get<std::vector<double>>();
      if (r.size() != 9) throw ConfigError("camera json: R needs 9 values");
      for (int i = 0; i < 9; ++i) cam.extrinsics.R(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
    }
    if (j.contains("t")) {
      const auto t = j.at("t").get<std::vector<double>>();
      if (t.size() != 3) throw ConfigError("camera json: t needs 3 values");
      cam.extrinsics.t = Eigen::Vector3d(t[0], t[1], t[2]);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("camera json: ") + ex.what());
  }
  cam.intrinsics.validate();
  cam.extrinsics.validate();
  return cam;
}

Camera load_camera(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open camera file " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return camera_from_json(ss.str());
}

}  // namespace gslosh
