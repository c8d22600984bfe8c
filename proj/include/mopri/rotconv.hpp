#pragma once

#include <Eigen/Core>
#include <stdexcept>

#include "mopri/common.hpp"

namespace mopri::rot {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// Input to the 6D decoder is degenerate (zero or parallel column triples).
struct DegenerateRotation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rodrigues formula. Zero vector maps to identity; non-finite input throws.
Mat3 aa_to_matrix(const Vec3& v);

// First two columns of R, stacked (c1 then c2).
Vec6 matrix_to_6d(const Mat3& R);

// Gram-Schmidt decoding: c1 = normalize(d[0:3]),
// c2 = normalize(d[3:6] - <d[3:6],c1> c1), c3 = c1 x c2.
Mat3 sixd_to_matrix(const Vec6& d);

// Log map; angle in [0, pi]. At angle pi the axis sign is fixed by making
// its first nonzero component positive.
Vec3 matrix_to_aa(const Mat3& R);

// arccos(clamp((trace(R1^T R2) - 1) / 2, -1, 1)), radians.
double geodesic_angle(const Mat3& a, const Mat3& b);

// R^T R = I and det(R) = 1, both within tol.
bool is_rotation(const Mat3& R, double tol = 1e-6);

// Uniformly random rotation (axis uniform on sphere, angle uniform [0, pi)).
Mat3 random_rotation(Rng& rng);

// Shortest-path spherical interpolation. u = 0 -> a, u = 1 -> b.
Mat3 slerp(const Mat3& a, const Mat3& b, double u);

}  // namespace mopri::rot
