#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "mopri/common.hpp"

namespace mopri::body {

// Parametric skinned body: shape blending, forward kinematics, linear
// blend skinning. Immutable after construction.
struct BodyModel {
    Mat template_vertices;        // N x 3, meters
    Eigen::MatrixXi faces;        // F x 3 vertex indices
    std::vector<Mat> shape_basis; // B entries of N x 3 (meters per unit coeff)
    Mat joint_regressor;          // J x N, rows sum to 1
    Mat skin_weights;             // N x J, rows sum to 1, nonnegative
    std::vector<int> parents;     // parent[0] == -1
    std::vector<std::string> joint_names;
    // Virtual-sensor attachment vertices, keys:
    // left_arm right_arm left_leg right_leg head root
    std::map<std::string, int> markers;

    int n_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int n_joints() const { return static_cast<int>(joint_regressor.rows()); }
    int n_shape() const { return static_cast<int>(shape_basis.size()); }

    // B x 3N, row b = shape_basis[b] flattened row-major; matches a
    // row-major N x 3 reflow.
    Mat basis_flat() const;

    void validate() const;  // throws std::invalid_argument on bad invariants

    int joint_index(const std::string& name) const;  // -1 if absent
};

struct PoseState {
    Mat theta;  // J x 3 axis-angle rows; row 0 is root orientation
    Vec3 x = Vec3::Zero();
    Vec beta;
};

struct MotionSequence {
    Mat theta;  // T x 3J axis-angle, row t = all joints of frame t
    Mat x;      // T x 3 root translation
    Vec beta;   // shared shape coefficients
    double fps = 10.0;
    std::string source_id;

    int frames() const { return static_cast<int>(theta.rows()); }
    int joints() const { return static_cast<int>(theta.cols()) / 3; }
    PoseState frame(int t) const;
    void set_frame(int t, const PoseState& p);
};

struct JointTransforms {
    std::vector<Mat3> rot;  // global rotations, one per joint
    Mat pos;                // J x 3 global joint positions
};

Mat shape_blend(const BodyModel& m, const Vec& beta);                 // N x 3
Mat rest_joints(const BodyModel& m, const Vec& beta);                 // J x 3
JointTransforms forward_kinematics(const BodyModel& m, const PoseState& p);
Mat skin(const BodyModel& m, const PoseState& p);                     // N x 3

// Deterministic capsule-limb humanoid with B = 10 shape directions;
// needs no external assets.
BodyModel make_toy_model(int n_joints = 16, int n_vertices = 600);

BodyModel load_model(const std::string& path);
void save_model(const BodyModel& m, const std::string& path);

}  // namespace mopri::body
