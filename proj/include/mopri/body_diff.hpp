#pragma once

// Differentiable body-model subgraphs used by the training losses.

#include <vector>

#include "mopri/body.hpp"
#include "mopri/tensor.hpp"

namespace mopri::bodyg {

struct FkResult {
    std::vector<ad::Var> rg;  // J entries, (3T) x 3 stacked global rotations
    ad::Var joints;           // (J*T) x 3 global joint positions, joint-major
    ad::Var verts;            // (T*N) x 3 posed vertices, frame-major
    ad::Var rest;             // J x 3 shaped rest joints
    bool has_verts = false;
};

// rl: per-joint stacked local rotations, J entries of (3T) x 3.
// x: T x 3 root translation, beta: 1 x B.
FkResult fk_lbs(ad::Tape& tape, const body::BodyModel& m, const std::vector<ad::Var>& rl,
                ad::Var x, ad::Var beta, bool want_verts);

// theta6d: T x 6J -> per-joint rotation blocks via Gram-Schmidt.
std::vector<ad::Var> sixd_blocks(ad::Tape& tape, ad::Var theta6d, int joints);

// Ground-truth layouts matching fk_lbs outputs (computed numerically).
Mat gt_joints_jmajor(const body::BodyModel& m, const body::MotionSequence& seq);  // (J*T) x 3
Mat gt_verts_fmajor(const body::BodyModel& m, const body::MotionSequence& seq);   // (T*N) x 3

}  // namespace mopri::bodyg
