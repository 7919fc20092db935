#pragma once

// Pinhole camera projection and the cup-bottom coordinate frame.

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace gslosh {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Eigen::Matrix3d matrix() const;
  /// Throws ConfigError unless fx, fy > 0.
  void validate() const;
};

/// Rigid transform: p_camera = R p_world + t.
struct RigidPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  /// Throws ConfigError unless R is a rotation within 1e-9.
  void validate() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
  Eigen::Vector3d inverse_apply(const Eigen::Vector3d& p) const { return R.transpose() * (p - t); }
};

using CameraExtrinsics = RigidPose;

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// s [u v 1]^T = K [R|t] p. Throws ProjectionError for depth <= 0.
PixelDepth project(const Eigen::Vector3d& p_world, const CameraIntrinsics& k,
                   const CameraExtrinsics& e);

/// Inverse of project for a known camera-frame depth.
Eigen::Vector3d backproject(double u, double v, double depth, const CameraIntrinsics& k,
                            const CameraExtrinsics& e);

/// Camera centre in world coordinates.
Eigen::Vector3d camera_center(const CameraExtrinsics& e);

/// World points into the cup frame; `cup` maps cup-local to world
/// coordinates (p_world = R p_cup + t).
std::vector<Eigen::Vector3d> to_cup_frame(const std::vector<Eigen::Vector3d>& points,
                                          const RigidPose& cup);
std::vector<Eigen::Vector3d> from_cup_frame(const std::vector<Eigen::Vector3d>& points,
                                            const RigidPose& cup);

struct Camera {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
};

/// JSON object with f_x, f_y, c_x, c_y, skew, R (9 values, row-major), t.
Camera load_camera(const std::filesystem::path& file);
Camera camera_from_json(const std::string& text);

}  // namespace gslosh
