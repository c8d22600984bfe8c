#include "mopri/body_diff.hpp"

namespace mopri::bodyg {

using ad::Var;

FkResult fk_lbs(ad::Tape& tape, const body::BodyModel& m, const std::vector<ad::Var>& rl,
                Var x, Var beta, bool want_verts) {
    const int j = m.n_joints();
    if (static_cast<int>(rl.size()) != j)
        throw std::invalid_argument("fk_lbs: expected one rotation block per joint");

    Var shaped = tape.constant(m.template_vertices);
    if (m.n_shape() > 0) {
        Var off = ad::reshape_rows(ad::matmul(beta, tape.constant(m.basis_flat())),
                                   m.n_vertices(), 3);
        shaped = ad::add(shaped, off);
    }
    Var j0 = ad::matmul(tape.constant(m.joint_regressor), shaped);

    FkResult out;
    out.rest = j0;
    out.rg.resize(j);
    std::vector<Var> tg(j);
    out.rg[0] = rl[0];
    tg[0] = ad::add_rowvec(x, ad::slice_rows(j0, 0, 1));
    for (int k = 1; k < j; ++k) {
        const int pa = m.parents[k];
        out.rg[k] = ad::compose_blocks3(out.rg[pa], rl[k]);
        Var off = ad::sub(ad::slice_rows(j0, k, 1), ad::slice_rows(j0, pa, 1));
        tg[k] = ad::add(ad::rotate_rows(out.rg[pa], off), tg[pa]);
    }
    out.joints = ad::concat_rows(tg);
    if (want_verts) {
        Var rg_all = ad::concat_rows(out.rg);
        out.verts = ad::lbs(rg_all, out.joints, shaped, j0, m.skin_weights);
        out.has_verts = true;
    }
    return out;
}

std::vector<Var> sixd_blocks(ad::Tape& tape, Var theta6d, int joints) {
    if (theta6d.cols() != 6 * joints)
        throw std::invalid_argument("sixd_blocks: width != 6 * joints");
    std::vector<Var> blocks;
    blocks.reserve(joints);
    for (int k = 0; k < joints; ++k) {
        Var d1 = ad::slice_cols(theta6d, 6 * k, 3);
        Var d2 = ad::slice_cols(theta6d, 6 * k + 3, 3);
        Var c1 = ad::rows_scale(d1, ad::rsqrt(ad::rows_dot(d1, d1)));
        Var r2 = ad::sub(d2, ad::rows_scale(c1, ad::rows_dot(d2, c1)));
        Var c2 = ad::rows_scale(r2, ad::rsqrt(ad::rows_dot(r2, r2)));
        Var c3 = ad::cross_rows(c1, c2);
        blocks.push_back(ad::cols3_to_blocks(c1, c2, c3));
    }
    return blocks;
}

Mat gt_joints_jmajor(const body::BodyModel& m, const body::MotionSequence& seq) {
    const int t = seq.frames(), j = m.n_joints();
    Mat out(j * t, 3);
    for (int f = 0; f < t; ++f) {
        const body::JointTransforms g = body::forward_kinematics(m, seq.frame(f));
        for (int k = 0; k < j; ++k) out.row(k * t + f) = g.pos.row(k);
    }
    return out;
}

Mat gt_verts_fmajor(const body::BodyModel& m, const body::MotionSequence& seq) {
    const int t = seq.frames(), n = m.n_vertices();
    Mat out(t * n, 3);
    for (int f = 0; f < t; ++f) out.middleRows(f * n, n) = body::skin(m, seq.frame(f));
    return out;
}

}  // namespace mopri::bodyg
