#pragma once

#include <array>

#include "adaptsfm/tensor.hpp"

namespace adaptsfm::geometry {

using Vec3 = std::array<double, 3>;

/// Axis-angle rotation: direction is the axis, magnitude the angle (radians).
struct AxisAngle {
    Vec3 phi{0.0, 0.0, 0.0};

    double angle() const;
};

/// 3x3 rotation matrix. check_valid() enforces orthonormality and det +1.
struct RotationMatrix {
    Tensor R = Tensor::eye(3);

    static RotationMatrix identity() { return RotationMatrix{}; }
    /// Throws InvalidRotationError when R'R != I or det != +1 beyond tol.
    void check_valid(double tol = 1e-9) const;
    Vec3 apply(const Vec3& p) const;
};

/// Rigid transform: x -> R x + t.
struct PoseSE3 {
    RotationMatrix rotation;
    Vec3 translation{0.0, 0.0, 0.0};

    static PoseSE3 identity() { return PoseSE3{}; }
    Vec3 apply(const Vec3& p) const;
    /// Row-major 4x4 homogeneous matrix.
    Tensor homogeneous() const;
};

/// Nine unconstrained reals read as a row-major 3x3 matrix.
struct Raw9D {
    Tensor values = Tensor({3, 3});
};

/// R = I + sin(th)*K + (1-cos(th))*K^2, th = |phi|. th < 1e-8 falls back to
/// the second-order Taylor expansion, so the zero rotation is exact.
RotationMatrix rodrigues(const AxisAngle& phi);

/// Inverse of rodrigues; canonical output with angle in [0, pi]. Dedicated
/// branches near 0 (skew part) and near pi (dominant diagonal of (R+I)/2).
AxisAngle log_rotation(const RotationMatrix& rot);

/// Nearest rotation in Frobenius norm with det +1: U diag(1,1,det(UV')) V'.
RotationMatrix svd_orthogonalize(const Raw9D& raw);

struct ScaledHeadOutput {
    AxisAngle axis_angle;
    Vec3 translation;
};

/// Fixed output gain applied to raw pose-head values, identical at train and
/// inference time.
inline constexpr double kHeadOutputScale = 0.001;
ScaledHeadOutput scale_head_outputs(const Vec3& phi_raw, const Vec3& t_raw);

PoseSE3 compose(const PoseSE3& t1, const PoseSE3& t2); // (R1 R2, R1 t2 + t1)
PoseSE3 invert(const PoseSE3& t);

/// Unit quaternion (x, y, z, w) for trajectory file I/O only.
std::array<double, 4> rotation_to_quaternion(const RotationMatrix& rot);
RotationMatrix quaternion_to_rotation(const std::array<double, 4>& q);

} // namespace adaptsfm::geometry
