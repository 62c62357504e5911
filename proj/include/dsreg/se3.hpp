#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <vector>

namespace dsreg {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat36 = Eigen::Matrix<double, 3, 6>;

// Twist coordinates are ordered (translation, rotation): xi = (v, w), with w an
// axis-angle vector in radians. Translations are in world millimetres.
//
// A pose T maps panorama (world) coordinates into the local coordinates of a
// frame. Increments act from the left: T <- exp(delta) * T.
inline constexpr const char* kPoseConvention = "world-to-frame, left-increment, mm";

// Rotation angles below this use the Taylor expansion of the Rodrigues terms.
inline constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& w);
Vec3 so3_log(const Mat3& R);
Mat4 exp_map(const Vec6& xi);
Vec6 log_map(const Mat4& T);

class Pose {
  public:
    Pose();
    explicit Pose(const Vec6& xi);

    // Takes T as given (no re-orthonormalisation); xi is log(T).
    static Pose from_matrix(const Mat4& T);
    // Stores both without recomputation; used when loading a pose file whose
    // consistency was already checked.
    static Pose from_parts(const Vec6& xi, const Mat4& T);

    const Vec6& xi() const { return xi_; }
    const Mat4& matrix() const { return T_; }
    Mat3 rotation() const { return T_.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return T_.topRightCorner<3, 1>(); }

    Pose inverse() const;
    Pose operator*(const Pose& rhs) const;

  private:
    Vec6 xi_;
    Mat4 T_;
};

Vec3 warp(const Pose& pose, const Vec3& p);

// d warp(exp(delta) * T, p) / d delta at delta = 0, i.e. [ I | -skew(T p) ].
Mat36 warp_jacobian(const Pose& pose, const Vec3& p);

Pose apply_increment(const Pose& pose, const Vec6& delta);

// Z-Y-X (yaw, pitch, roll) Euler angles: R = Rz(angles[0]) Ry(angles[1]) Rx(angles[2]).
Mat3 euler_zyx_to_matrix(const Vec3& yaw_pitch_roll);
Vec3 matrix_to_euler_zyx(const Mat3& R);

// The rigid motion x -> R (x - center) + center + translation.
Pose rigid_about(const Vec3& center, const Vec3& yaw_pitch_roll, const Vec3& translation);

struct PoseSet {
    std::vector<Pose> poses;
    std::vector<bool> anchored;

    std::size_t size() const { return poses.size(); }
};

} // namespace dsreg
