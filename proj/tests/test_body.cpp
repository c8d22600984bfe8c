#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "mopri/body.hpp"
#include "mopri/body_diff.hpp"
#include "mopri/dataio.hpp"
#include "mopri/motrep.hpp"
#include "mopri/rotconv.hpp"
#include "test_util.hpp"

using namespace mopri;
using testutil::chain_model;
using testutil::zero_pose;

TEST_CASE("toy model determinism and invariants") {
    const body::BodyModel a = body::make_toy_model();
    const body::BodyModel b = body::make_toy_model();
    CHECK(a.template_vertices == b.template_vertices);
    CHECK(a.skin_weights == b.skin_weights);
    CHECK(a.joint_regressor == b.joint_regressor);
    CHECK(a.n_joints() == 16);
    CHECK(a.n_shape() == 10);
    CHECK(a.n_vertices() >= 500);
    CHECK_NOTHROW(a.validate());
    CHECK(a.markers.size() == 6);

    const Mat v = body::skin(a, zero_pose(a));
    CHECK(v.allFinite());
    CHECK((v.colwise().maxCoeff() - v.colwise().minCoeff()).maxCoeff() < 2.0);
}

TEST_CASE("shape_blend") {
    const body::BodyModel m = body::make_toy_model();
    const Vec zero = Vec::Zero(10);
    CHECK(body::shape_blend(m, zero) == m.template_vertices);

    Vec beta = Vec::Zero(10);
    beta[1] = 1.0;
    const Mat d1 = body::shape_blend(m, beta) - m.template_vertices;
    const Mat d2 = body::shape_blend(m, 2 * beta) - m.template_vertices;
    CHECK((d2 - 2 * d1).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(body::shape_blend(m, Vec::Zero(3)), std::invalid_argument);

    // single-vertex basis direction moves exactly that vertex
    body::BodyModel tiny = chain_model(2);
    tiny.shape_basis.assign(1, Mat::Zero(2, 3));
    tiny.shape_basis[0](1, 1) = 0.1;
    Vec b1 = Vec::Zero(1);
    b1[0] = 1.0;
    const Mat moved = body::shape_blend(tiny, b1);
    CHECK(moved(1, 1) == doctest::Approx(tiny.template_vertices(1, 1) + 0.1));
    CHECK(moved(0, 1) == tiny.template_vertices(0, 1));
}

TEST_CASE("forward kinematics") {
    const body::BodyModel m2 = chain_model(2);
    body::PoseState p = zero_pose(m2);

    SUBCASE("identity pose hits rest joints") {
        const auto g = body::forward_kinematics(m2, p);
        CHECK((g.pos - body::rest_joints(m2, p.beta)).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("root rotation moves the child") {
        p.theta.row(0) = Vec3(0, 0, M_PI / 2).transpose();  // z by 90 deg: +y -> -x
        const auto g = body::forward_kinematics(m2, p);
        const Vec3 expect = Vec3(0, 0, 0) + Vec3(-1, 0, 0);
        CHECK((Vec3(g.pos.row(1)) - expect).norm() < 1e-12);
    }

    SUBCASE("translation equivariance") {
        Rng rng(3);
        for (int k = 0; k < 2; ++k) p.theta.row(k) = Vec3(rng.gauss(), rng.gauss(), rng.gauss());
        const auto g0 = body::forward_kinematics(m2, p);
        p.x = Vec3(0.3, -0.2, 1.0);
        const auto g1 = body::forward_kinematics(m2, p);
        CHECK((g1.pos - (g0.pos.rowwise() + p.x.transpose())).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("FK matches a hand-rolled serial-chain oracle") {
    const body::BodyModel m = chain_model(3);
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        body::PoseState p = zero_pose(m);
        for (int k = 0; k < 3; ++k)
            p.theta.row(k) = rot::matrix_to_aa(rot::random_rotation(rng)).transpose();
        p.x = Vec3(rng.gauss(), rng.gauss(), rng.gauss());

        // sequential composition by hand
        const Mat j0 = body::rest_joints(m, p.beta);
        Mat3 r = rot::aa_to_matrix(p.theta.row(0));
        Vec3 pos = Vec3(j0.row(0)) + p.x;
        std::vector<Vec3> expect = {pos};
        std::vector<Mat3> rots = {r};
        for (int k = 1; k < 3; ++k) {
            pos = pos + rots[k - 1] * Vec3(j0.row(k) - j0.row(k - 1));
            rots.push_back(rots[k - 1] * rot::aa_to_matrix(p.theta.row(k)));
            expect.push_back(pos);
        }

        const auto g = body::forward_kinematics(m, p);
        for (int k = 0; k < 3; ++k) {
            CHECK((Vec3(g.pos.row(k)) - expect[k]).norm() < 1e-9);
            CHECK((g.rot[k] - rots[k]).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("skinning") {
    const body::BodyModel m = body::make_toy_model();

    SUBCASE("rest pose returns the blended shape") {
        body::PoseState p = zero_pose(m);
        p.beta[0] = 0.5;
        CHECK((body::skin(m, p) - body::shape_blend(m, p.beta)).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("one-hot weights act rigidly") {
        body::BodyModel rigid = m;
        Rng rng(5);
        for (int i = 0; i < rigid.n_vertices(); ++i) {
            rigid.skin_weights.row(i).setZero();
            rigid.skin_weights(i, static_cast<int>(rng.below(rigid.n_joints()))) = 1.0;
        }
        body::PoseState p = zero_pose(rigid);
        for (int k = 0; k < rigid.n_joints(); ++k)
            p.theta.row(k) = rot::matrix_to_aa(rot::random_rotation(rng)).transpose();
        p.x = Vec3(0.1, 0.2, 0.3);
        const Mat out = body::skin(rigid, p);
        const auto g = body::forward_kinematics(rigid, p);
        const Mat v0 = body::shape_blend(rigid, p.beta);
        const Mat j0 = body::rest_joints(rigid, p.beta);
        for (int i = 0; i < rigid.n_vertices(); ++i) {
            int k = 0;
            for (int q = 0; q < rigid.n_joints(); ++q)
                if (rigid.skin_weights(i, q) == 1.0) k = q;
            const Vec3 expect =
                g.rot[k] * Vec3(v0.row(i) - j0.row(k)) + Vec3(g.pos.row(k));
            CHECK((Vec3(out.row(i)) - expect).norm() < 1e-9);
        }
    }

    SUBCASE("translation equivariance") {
        Rng rng(8);
        body::PoseState p = zero_pose(m);
        for (int k = 0; k < m.n_joints(); ++k)
            p.theta.row(k) = 0.3 * Vec3(rng.gauss(), rng.gauss(), rng.gauss());
        const Mat base = body::skin(m, p);
        p.x = Vec3(1, 2, 3);
        CHECK((body::skin(m, p) - (base.rowwise() + p.x.transpose())).cwiseAbs().maxCoeff() <
              1e-12);
    }
}

TEST_CASE("global root rotation rotates everything about the root") {
    const body::BodyModel m = body::make_toy_model();
    Rng rng(21);
    body::PoseState p = zero_pose(m);
    for (int k = 1; k < m.n_joints(); ++k)
        p.theta.row(k) = 0.4 * Vec3(rng.gauss(), rng.gauss(), rng.gauss());
    const auto g0 = body::forward_kinematics(m, p);
    const Mat v0 = body::skin(m, p);
    const Vec3 root = g0.pos.row(0);

    const Mat3 r0 = rot::random_rotation(rng);
    body::PoseState q = p;
    q.theta.row(0) = rot::matrix_to_aa(r0).transpose();
    const auto g1 = body::forward_kinematics(m, q);
    const Mat v1 = body::skin(m, q);
    for (int k = 0; k < m.n_joints(); ++k) {
        const Vec3 expect = r0 * (Vec3(g0.pos.row(k)) - root) + root;
        CHECK((Vec3(g1.pos.row(k)) - expect).norm() < 1e-6);
    }
    for (int i = 0; i < m.n_vertices(); i += 37) {
        const Vec3 expect = r0 * (Vec3(v0.row(i)) - root) + root;
        CHECK((Vec3(v1.row(i)) - expect).norm() < 1e-6);
    }
}

TEST_CASE("graph FK/LBS equals the numeric path and is differentiable") {
    const body::BodyModel m = body::make_toy_model(16, 200);
    Rng rng(33);
    const int tf = 3;
    body::MotionSequence seq;
    seq.theta = Mat(tf, 3 * m.n_joints());
    for (Eigen::Index i = 0; i < seq.theta.size(); ++i) seq.theta.data()[i] = 0.3 * rng.gauss();
    seq.x = Mat(tf, 3);
    for (Eigen::Index i = 0; i < seq.x.size(); ++i) seq.x.data()[i] = rng.gauss();
    seq.beta = 0.3 * Vec::Ones(10);
    const Mat theta6d = motrep::theta_to_6d(seq);

    SUBCASE("values agree with the per-frame numeric path") {
        ad::Tape t;
        auto blocks = bodyg::sixd_blocks(t, t.constant(theta6d), m.n_joints());
        auto fk = bodyg::fk_lbs(t, m, blocks, t.constant(seq.x),
                                t.constant(Mat(seq.beta.transpose())), true);
        CHECK((fk.joints.val() - bodyg::gt_joints_jmajor(m, seq)).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((fk.verts.val() - bodyg::gt_verts_fmajor(m, seq)).cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("finite differences over theta6d, x, beta") {
        auto loss_from = [&](ad::Tape& t, ad::Var th, ad::Var xv, ad::Var bv) {
            auto blocks = bodyg::sixd_blocks(t, th, m.n_joints());
            auto fk = bodyg::fk_lbs(t, m, blocks, xv, bv, true);
            return ad::add(ad::mean_all(ad::cmul(fk.joints, fk.joints)),
                           ad::mean_all(ad::cmul(fk.verts, fk.verts)));
        };
        CHECK(testutil::grad_max_rel_err(theta6d, [&](ad::Tape& t, ad::Var v) {
            return loss_from(t, v, t.constant(seq.x), t.constant(Mat(seq.beta.transpose())));
        }, 40, rng) < 1e-4);
        CHECK(testutil::grad_max_rel_err(seq.x, [&](ad::Tape& t, ad::Var v) {
            return loss_from(t, t.constant(theta6d), v, t.constant(Mat(seq.beta.transpose())));
        }, 0, rng) < 1e-4);
        Mat beta_row = seq.beta.transpose();
        CHECK(testutil::grad_max_rel_err(beta_row, [&](ad::Tape& t, ad::Var v) {
            return loss_from(t, t.constant(theta6d), t.constant(seq.x), v);
        }, 0, rng) < 1e-4);
    }
}

TEST_CASE("model save/load round trip and error paths") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    const std::string path = "toy_model_test.bin";
    body::save_model(m, path);
    const body::BodyModel r = body::load_model(path);
    CHECK(r.template_vertices == m.template_vertices);
    CHECK(r.skin_weights == m.skin_weights);
    CHECK(r.parents == m.parents);
    CHECK(r.markers == m.markers);
    // zero pose reproduces the stored template
    CHECK((body::skin(r, zero_pose(r)) - m.template_vertices).cwiseAbs().maxCoeff() < 1e-6);

    // truncated file fails with a load error
    std::string all = io::read_text(path);
    io::write_text(path, all.substr(0, all.size() / 2));
    CHECK_THROWS_AS(body::load_model(path), io::LoadError);
    io::write_text(path, "junk");
    CHECK_THROWS_AS(body::load_model(path), io::LoadError);
    std::remove(path.c_str());
}
