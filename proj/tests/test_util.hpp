#pragma once

// Shared helpers for the test binaries: finite-difference gradient
// checking against the tape, and small data constructors.

#include <functional>

#include "mopri/body.hpp"
#include "mopri/tensor.hpp"

namespace mopri::testutil {

using GraphFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

// Max relative error between tape gradients and central differences for
// `samples` randomly chosen entries of x (all entries when samples <= 0).
inline double grad_max_rel_err(const Mat& x0, const GraphFn& f, int samples, Rng& rng,
                               double h = 1e-5) {
    ad::Param p("x", x0);
    ad::Tape tape;
    ad::Var leaf = tape.param(p);
    ad::Var root = f(tape, leaf);
    tape.backward(root);
    const Mat analytic = p.grad;

    auto eval = [&](const Mat& x) {
        ad::Tape t2;
        return ad::scalar(f(t2, t2.constant(x)));
    };

    std::vector<Eigen::Index> idx;
    if (samples <= 0 || samples >= x0.size()) {
        for (Eigen::Index i = 0; i < x0.size(); ++i) idx.push_back(i);
    } else {
        for (int s = 0; s < samples; ++s) idx.push_back(rng.below(x0.size()));
    }
    double worst = 0;
    for (Eigen::Index i : idx) {
        Mat xp = x0, xm = x0;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        const double fd = (eval(xp) - eval(xm)) / (2 * h);
        const double a = analytic.data()[i];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
        worst = std::max(worst, std::abs(a - fd) / denom);
    }
    return worst;
}

// Finite-difference check of tape gradients for every parameter group:
// build_graph constructs the scalar loss with parameters as tape leaves.
// Samples `per_group` entries of each group (all when <= 0) and returns
// the worst relative error.
inline double param_groups_max_rel_err(const std::vector<ad::Param*>& groups,
                                       const std::function<ad::Var(ad::Tape&)>& build_graph,
                                       int per_group, Rng& rng, double h = 1e-5) {
    for (ad::Param* p : groups) p->zero_grad();
    {
        ad::Tape tape;
        tape.backward(build_graph(tape));
    }
    auto eval = [&]() {
        ad::Tape t2;
        return ad::scalar(build_graph(t2));
    };
    double worst = 0;
    for (ad::Param* p : groups) {
        std::vector<Eigen::Index> idx;
        if (per_group <= 0 || per_group >= p->value.size()) {
            for (Eigen::Index i = 0; i < p->value.size(); ++i) idx.push_back(i);
        } else {
            for (int s = 0; s < per_group; ++s) idx.push_back(rng.below(p->value.size()));
        }
        for (Eigen::Index i : idx) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + h;
            const double fp = eval();
            p->value.data()[i] = saved - h;
            const double fm = eval();
            p->value.data()[i] = saved;
            const double fd = (fp - fm) / (2 * h);
            const double a = p->grad.data()[i];
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
            worst = std::max(worst, std::abs(a - fd) / denom);
        }
    }
    return worst;
}

// Minimal hand-built chain model: J joints along +y, one vertex per
// joint, single-joint skinning, no shape basis.
inline body::BodyModel chain_model(int joints, double bone = 1.0) {
    body::BodyModel m;
    m.template_vertices.resize(joints, 3);
    m.joint_regressor = Mat::Zero(joints, joints);
    m.skin_weights = Mat::Zero(joints, joints);
    for (int k = 0; k < joints; ++k) {
        m.template_vertices.row(k) = Vec3(0, bone * k, 0).transpose();
        m.joint_regressor(k, k) = 1.0;
        m.skin_weights(k, k) = 1.0;
        m.parents.push_back(k - 1);
        m.joint_names.push_back("j" + std::to_string(k));
    }
    m.faces.resize(0, 3);
    m.validate();
    return m;
}

inline body::PoseState zero_pose(const body::BodyModel& m) {
    body::PoseState p;
    p.theta = Mat::Zero(m.n_joints(), 3);
    p.x = Vec3::Zero();
    p.beta = Vec::Zero(m.n_shape());
    return p;
}

}  // namespace mopri::testutil
