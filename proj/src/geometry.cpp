#include "adaptsfm/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>

#include "adaptsfm/errors.hpp"

namespace adaptsfm::geometry {

namespace {
constexpr double kSmallAngle = 1e-8;
constexpr double kNearPi = 1e-4;

Tensor cross_matrix(const Vec3& v) {
    Tensor k({3, 3});
    k.at(0, 1) = -v[2];
    k.at(0, 2) = v[1];
    k.at(1, 0) = v[2];
    k.at(1, 2) = -v[0];
    k.at(2, 0) = -v[1];
    k.at(2, 1) = v[0];
    return k;
}

Eigen::Matrix3d to_eigen(const Tensor& t) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = t.at(i, j);
    return m;
}

Tensor from_eigen(const Eigen::Matrix3d& m) {
    Tensor t({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t.at(i, j) = m(i, j);
    return t;
}
} // namespace

double AxisAngle::angle() const {
    return std::sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]);
}

void RotationMatrix::check_valid(double tol) const {
    Tensor gram = matmul(transpose(R), R);
    double dev = max_abs_diff(gram, Tensor::eye(3));
    if (dev > tol) throw InvalidRotationError("matrix is not orthonormal (deviation " + std::to_string(dev) + ")");
    double det = to_eigen(R).determinant();
    if (std::abs(det - 1.0) > tol) throw InvalidRotationError("matrix determinant is not +1");
}

Vec3 RotationMatrix::apply(const Vec3& p) const {
    Vec3 out{};
    for (int i = 0; i < 3; ++i) out[i] = R.at(i, 0) * p[0] + R.at(i, 1) * p[1] + R.at(i, 2) * p[2];
    return out;
}

Vec3 PoseSE3::apply(const Vec3& p) const {
    Vec3 out = rotation.apply(p);
    for (int i = 0; i < 3; ++i) out[i] += translation[i];
    return out;
}

Tensor PoseSE3::homogeneous() const {
    Tensor h = Tensor::eye(4);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) h.at(i, j) = rotation.R.at(i, j);
        h.at(i, 3) = translation[i];
    }
    return h;
}

RotationMatrix rodrigues(const AxisAngle& phi) {
    const double theta = phi.angle();
    const double s = theta * theta;
    double a, b; // R = I + a*K + b*K^2 with unnormalized K
    if (theta < kSmallAngle) {
        a = 1.0 - s / 6.0;
        b = 0.5 - s / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / s;
    }
    Tensor k = cross_matrix(phi.phi);
    Tensor k2 = matmul(k, k);
    Tensor r = Tensor::eye(3);
    for (int i = 0; i < 9; ++i) r[i] += a * k[i] + b * k2[i];
    return RotationMatrix{r};
}

AxisAngle log_rotation(const RotationMatrix& rot) {
    rot.check_valid();
    const Tensor& r = rot.R;
    double trace = r.at(0, 0) + r.at(1, 1) + r.at(2, 2);
    double c = std::clamp((trace - 1.0) * 0.5, -1.0, 1.0);
    double theta = std::acos(c);

    Vec3 skew{r.at(2, 1) - r.at(1, 2), r.at(0, 2) - r.at(2, 0), r.at(1, 0) - r.at(0, 1)};

    AxisAngle out;
    if (theta < kSmallAngle) {
        // First-order: phi = skew/2.
        for (int i = 0; i < 3; ++i) out.phi[i] = 0.5 * skew[i];
        return out;
    }
    if (theta > M_PI - kNearPi) {
        // Axis from the dominant diagonal of (R+I)/2; sign from the skew part.
        Tensor b({3, 3});
        for (int i = 0; i < 9; ++i) b[i] = 0.5 * (r[i] + Tensor::eye(3)[i]);
        int j = 0;
        for (int i = 1; i < 3; ++i)
            if (b.at(i, i) > b.at(j, j)) j = i;
        Vec3 axis{b.at(0, j), b.at(1, j), b.at(2, j)};
        double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        for (int i = 0; i < 3; ++i) axis[i] /= norm;
        double orient = axis[0] * skew[0] + axis[1] * skew[1] + axis[2] * skew[2];
        if (orient < 0.0)
            for (int i = 0; i < 3; ++i) axis[i] = -axis[i];
        for (int i = 0; i < 3; ++i) out.phi[i] = theta * axis[i];
        return out;
    }
    double scale = theta / (2.0 * std::sin(theta));
    for (int i = 0; i < 3; ++i) out.phi[i] = scale * skew[i];
    return out;
}

RotationMatrix svd_orthogonalize(const Raw9D& raw) {
    if (!raw.values.all_finite()) throw InvalidInputError("svd_orthogonalize: non-finite input");
    Eigen::Matrix3d m = to_eigen(raw.values);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    if (sigma(2) < 1e-12 * std::max(sigma(0), 1e-300))
        throw DegenerateOrthogonalizationError("svd_orthogonalize: rank-deficient input");
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    double d = (u * v.transpose()).determinant();
    Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
    fix(2, 2) = d;
    return RotationMatrix{from_eigen(u * fix * v.transpose())};
}

ScaledHeadOutput scale_head_outputs(const Vec3& phi_raw, const Vec3& t_raw) {
    ScaledHeadOutput out;
    for (int i = 0; i < 3; ++i) {
        out.axis_angle.phi[i] = kHeadOutputScale * phi_raw[i];
        out.translation[i] = kHeadOutputScale * t_raw[i];
    }
    return out;
}

PoseSE3 compose(const PoseSE3& t1, const PoseSE3& t2) {
    PoseSE3 out;
    out.rotation.R = matmul(t1.rotation.R, t2.rotation.R);
    Vec3 rt2 = t1.rotation.apply(t2.translation);
    for (int i = 0; i < 3; ++i) out.translation[i] = rt2[i] + t1.translation[i];
    return out;
}

PoseSE3 invert(const PoseSE3& t) {
    PoseSE3 out;
    out.rotation.R = transpose(t.rotation.R);
    Vec3 rt = out.rotation.apply(t.translation);
    for (int i = 0; i < 3; ++i) out.translation[i] = -rt[i];
    return out;
}

std::array<double, 4> rotation_to_quaternion(const RotationMatrix& rot) {
    const Tensor& r = rot.R;
    double trace = r.at(0, 0) + r.at(1, 1) + r.at(2, 2);
    std::array<double, 4> q{}; // (x, y, z, w)
    if (trace > 0.0) {
        double s = std::sqrt(trace + 1.0) * 2.0;
        q[3] = 0.25 * s;
        q[0] = (r.at(2, 1) - r.at(1, 2)) / s;
        q[1] = (r.at(0, 2) - r.at(2, 0)) / s;
        q[2] = (r.at(1, 0) - r.at(0, 1)) / s;
    } else if (r.at(0, 0) > r.at(1, 1) && r.at(0, 0) > r.at(2, 2)) {
        double s = std::sqrt(1.0 + r.at(0, 0) - r.at(1, 1) - r.at(2, 2)) * 2.0;
        q[3] = (r.at(2, 1) - r.at(1, 2)) / s;
        q[0] = 0.25 * s;
        q[1] = (r.at(0, 1) + r.at(1, 0)) / s;
        q[2] = (r.at(0, 2) + r.at(2, 0)) / s;
    } else if (r.at(1, 1) > r.at(2, 2)) {
        double s = std::sqrt(1.0 + r.at(1, 1) - r.at(0, 0) - r.at(2, 2)) * 2.0;
        q[3] = (r.at(0, 2) - r.at(2, 0)) / s;
        q[0] = (r.at(0, 1) + r.at(1, 0)) / s;
        q[1] = 0.25 * s;
        q[2] = (r.at(1, 2) + r.at(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r.at(2, 2) - r.at(0, 0) - r.at(1, 1)) * 2.0;
        q[3] = (r.at(1, 0) - r.at(0, 1)) / s;
        q[0] = (r.at(0, 2) + r.at(2, 0)) / s;
        q[1] = (r.at(1, 2) + r.at(2, 1)) / s;
        q[2] = 0.25 * s;
    }
    return q;
}

RotationMatrix quaternion_to_rotation(const std::array<double, 4>& q) {
    double x = q[0], y = q[1], z = q[2], w = q[3];
    double n = std::sqrt(x * x + y * y + z * z + w * w);
    if (n < 1e-12) throw InvalidInputError("quaternion_to_rotation: zero quaternion");
    x /= n;
    y /= n;
    z /= n;
    w /= n;
    Tensor r({3, 3});
    r.at(0, 0) = 1 - 2 * (y * y + z * z);
    r.at(0, 1) = 2 * (x * y - z * w);
    r.at(0, 2) = 2 * (x * z + y * w);
    r.at(1, 0) = 2 * (x * y + z * w);
    r.at(1, 1) = 1 - 2 * (x * x + z * z);
    r.at(1, 2) = 2 * (y * z - x * w);
    r.at(2, 0) = 2 * (x * z - y * w);
    r.at(2, 1) = 2 * (y * z + x * w);
    r.at(2, 2) = 1 - 2 * (x * x + y * y);
    return RotationMatrix{r};
}

} // namespace adaptsfm::geometry
