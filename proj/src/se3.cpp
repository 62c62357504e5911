#include "dsreg/se3.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace dsreg {

Mat3 skew(const Vec3& v) {
    Mat3 S;
    S << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return S;
}

namespace {

// A = sin t / t, B = (1 - cos t) / t^2, C = (t - sin t) / t^3
struct RodriguesCoeffs {
    double a, b, c;
};

RodriguesCoeffs rodrigues(double theta) {
    if (theta < kSmallAngle) {
        const double t2 = theta * theta;
        return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
    }
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double t2 = theta * theta;
    return {s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)};
}

} // namespace

Mat3 so3_exp(const Vec3& w) {
    const double theta = w.norm();
    const auto k = rodrigues(theta);
    const Mat3 W = skew(w);
    return Mat3::Identity() + k.a * W + k.b * W * W;
}

Vec3 so3_log(const Mat3& R) {
    const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
    const Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    const double theta = std::atan2(0.5 * vee.norm(), cos_theta);
    if (theta < kSmallAngle) {
        return 0.5 * (1.0 + theta * theta / 6.0) * vee;
    }
    if (M_PI - theta < 1e-4) {
        // sin(theta) ~ 0: recover the axis from the symmetric part instead.
        const Mat3 B = (0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
        int col = 0;
        B.diagonal().maxCoeff(&col);
        Vec3 axis = B.col(col) / std::sqrt(std::max(B(col, col), 1e-300));
        axis.normalize();
        if (axis.dot(vee) < 0.0) axis = -axis;
        return theta * axis;
    }
    return theta / (2.0 * std::sin(theta)) * vee;
}

Mat4 exp_map(const Vec6& xi) {
    const Vec3 v = xi.head<3>();
    const Vec3 w = xi.tail<3>();
    const double theta = w.norm();
    const auto k = rodrigues(theta);
    const Mat3 W = skew(w);
    const Mat3 W2 = W * W;
    Mat4 T = Mat4::Identity();
    T.topLeftCorner<3, 3>() = Mat3::Identity() + k.a * W + k.b * W2;
    T.topRightCorner<3, 1>() = (Mat3::Identity() + k.b * W + k.c * W2) * v;
    return T;
}

Vec6 log_map(const Mat4& T) {
    const Mat3 R = T.topLeftCorner<3, 3>();
    const Vec3 t = T.topRightCorner<3, 1>();
    const Vec3 w = so3_log(R);
    const double theta = w.norm();
    const Mat3 W = skew(w);
    Mat3 V_inv;
    if (theta < kSmallAngle) {
        V_inv = Mat3::Identity() - 0.5 * W + W * W / 12.0;
    } else {
        const double half = 0.5 * theta;
        const double coeff = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
        V_inv = Mat3::Identity() - 0.5 * W + coeff * W * W;
    }
    Vec6 xi;
    xi.head<3>() = V_inv * t;
    xi.tail<3>() = w;
    return xi;
}

Pose::Pose() : xi_(Vec6::Zero()), T_(Mat4::Identity()) {}

Pose::Pose(const Vec6& xi) : xi_(xi), T_(exp_map(xi)) {}

Pose Pose::from_matrix(const Mat4& T) { return from_parts(log_map(T), T); }

Pose Pose::from_parts(const Vec6& xi, const Mat4& T) {
    Pose p;
    p.xi_ = xi;
    p.T_ = T;
    return p;
}

Pose Pose::inverse() const {
    Mat4 inv = Mat4::Identity();
    const Mat3 Rt = rotation().transpose();
    inv.topLeftCorner<3, 3>() = Rt;
    inv.topRightCorner<3, 1>() = -Rt * translation();
    return from_matrix(inv);
}

Pose Pose::operator*(const Pose& rhs) const { return from_matrix(T_ * rhs.T_); }

Vec3 warp(const Pose& pose, const Vec3& p) {
    const Mat4& T = pose.matrix();
    return T.topLeftCorner<3, 3>() * p + T.topRightCorner<3, 1>();
}

Mat36 warp_jacobian(const Pose& pose, const Vec3& p) {
    Mat36 J;
    J.leftCols<3>().setIdentity();
    J.rightCols<3>() = -skew(warp(pose, p));
    return J;
}

Pose apply_increment(const Pose& pose, const Vec6& delta) {
    if (delta.isZero(0.0)) return pose;
    return Pose::from_matrix(exp_map(delta) * pose.matrix());
}

Mat3 euler_zyx_to_matrix(const Vec3& ypr) {
    return (Eigen::AngleAxisd(ypr[0], Vec3::UnitZ()) *
            Eigen::AngleAxisd(ypr[1], Vec3::UnitY()) *
            Eigen::AngleAxisd(ypr[2], Vec3::UnitX()))
        .toRotationMatrix();
}

Vec3 matrix_to_euler_zyx(const Mat3& R) {
    const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
    const double yaw = std::atan2(R(1, 0), R(0, 0));
    const double roll = std::atan2(R(2, 1), R(2, 2));
    return {yaw, pitch, roll};
}

Pose rigid_about(const Vec3& center, const Vec3& ypr, const Vec3& translation) {
    const Mat3 R = euler_zyx_to_matrix(ypr);
    Mat4 T = Mat4::Identity();
    T.topLeftCorner<3, 3>() = R;
    T.topRightCorner<3, 1>() = center - R * center + translation;
    return Pose::from_matrix(T);
}

} // namespace dsreg
