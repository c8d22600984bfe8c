#include "mopri/rotconv.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>

namespace mopri::rot {

namespace {

Mat3 skew(const Vec3& v) {
    Mat3 k;
    k << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return k;
}

}  // namespace

Mat3 aa_to_matrix(const Vec3& v) {
    if (!v.allFinite()) throw std::invalid_argument("aa_to_matrix: non-finite input");
    const double t2 = v.squaredNorm();
    double a, b;  // sin(t)/t, (1-cos(t))/t^2
    if (t2 < 1e-16) {
        a = 1.0 - t2 / 6.0;
        b = 0.5 - t2 / 24.0;
    } else {
        const double t = std::sqrt(t2);
        a = std::sin(t) / t;
        b = (1.0 - std::cos(t)) / t2;
    }
    const Mat3 k = skew(v);
    return Mat3::Identity() + a * k + b * (k * k);
}

Vec6 matrix_to_6d(const Mat3& R) {
    Vec6 d;
    d << R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1);
    return d;
}

Mat3 sixd_to_matrix(const Vec6& d) {
    const Vec3 a1 = d.head<3>();
    const Vec3 a2 = d.tail<3>();
    const double n1 = a1.norm();
    if (!(n1 > 1e-12)) throw DegenerateRotation("sixd_to_matrix: first triple has near-zero norm");
    const Vec3 c1 = a1 / n1;
    const Vec3 r2 = a2 - a2.dot(c1) * c1;
    const double n2 = r2.norm();
    if (!(n2 > 1e-12)) throw DegenerateRotation("sixd_to_matrix: second triple parallel to first");
    const Vec3 c2 = r2 / n2;
    const Vec3 c3 = c1.cross(c2);
    Mat3 R;
    R.col(0) = c1;
    R.col(1) = c2;
    R.col(2) = c3;
    return R;
}

Vec3 matrix_to_aa(const Mat3& R) {
    const double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    // vee of the antisymmetric part: sin(angle) * axis
    const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));

    if (angle < 1e-7) {
        // R ~ I + skew(v): w = 2 v to first order
        return 0.5 * w;
    }
    if (angle > M_PI - 1e-5) {
        // sin(angle) ~ 0; recover the axis from the symmetric part.
        // R = 2 a a^T - I at angle exactly pi.
        int k = 0;
        Mat3 s = 0.5 * (R + Mat3::Identity());
        s.diagonal().maxCoeff(&k);
        Vec3 axis;
        axis[k] = std::sqrt(std::max(0.0, s(k, k)));
        for (int i = 0; i < 3; ++i)
            if (i != k) axis[i] = s(i, k) / axis[k];
        axis.normalize();
        // sign convention: first nonzero component positive
        for (int i = 0; i < 3; ++i) {
            if (std::abs(axis[i]) > 1e-9) {
                if (axis[i] < 0) axis = -axis;
                break;
            }
        }
        return angle * axis;
    }
    return (angle / (2.0 * std::sin(angle))) * w;
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
    const double t = ((a.transpose() * b).trace() - 1.0) / 2.0;
    return std::acos(std::clamp(t, -1.0, 1.0));
}

bool is_rotation(const Mat3& R, double tol) {
    if (!R.allFinite()) return false;
    if (((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(R.determinant() - 1.0) <= tol;
}

Mat3 slerp(const Mat3& a, const Mat3& b, double u) {
    const Vec3 rel = matrix_to_aa(a.transpose() * b);
    return a * aa_to_matrix(u * rel);
}

Mat3 random_rotation(Rng& rng) {
    Vec3 axis;
    do {
        axis = Vec3(rng.gauss(), rng.gauss(), rng.gauss());
    } while (axis.norm() < 1e-9);
    axis.normalize();
    const double angle = rng.uniform(0.0, M_PI);
    return aa_to_matrix(angle * axis);
}

}  // namespace mopri::rot
