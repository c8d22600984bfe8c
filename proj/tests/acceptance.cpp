// End-to-end acceptance suite. Each numbered criterion prints one
// PASS/FAIL line; the process exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "mopri/body_diff.hpp"
#include "mopri/dataio.hpp"
#include "mopri/evalm.hpp"
#include "mopri/pipeline.hpp"
#include "mopri/rotconv.hpp"
#include "mopri/toydata.hpp"
#include "test_util.hpp"

using namespace mopri;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& what, bool ok, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", id, what.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void run_criterion(int id, const std::string& what, const std::function<bool(std::string&)>& body) {
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
        ok = false;
    }
    report(id, what, ok, detail);
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// shared artifacts across criteria
struct Shared {
    body::BodyModel model;
    std::vector<body::MotionSequence> train;
    prior::PriorConfig prior_cfg;
    std::unique_ptr<prior::PriorNet> net;
    double recon_joint_cm = 0, recon_pose_deg = 0;
    sensim::SensimConfig sensim_cfg;
    std::map<std::string, std::vector<sensim::SensorClip>> clips;
    std::map<std::string, double> adapter_joint_cm;
};

Shared S;

}  // namespace

// ---- criterion 1: rotation representation round trips ----
static void criterion_1() {
    run_criterion(1, "rotation round trips and scale invariance", [](std::string& detail) {
        const auto t0 = Clock::now();
        Rng rng(2024);
        double worst6 = 0, worst_aa = 0, worst_scale = 0;
        for (int i = 0; i < 1000; ++i) {
            const Mat3 r = rot::random_rotation(rng);
            worst6 = std::max(worst6,
                              (rot::sixd_to_matrix(rot::matrix_to_6d(r)) - r).cwiseAbs().maxCoeff());
            worst_aa = std::max(
                worst_aa, rot::geodesic_angle(rot::aa_to_matrix(rot::matrix_to_aa(r)), r));
            rot::Vec6 d = rot::matrix_to_6d(r);
            const double s = rng.uniform(0.1, 10.0);
            worst_scale = std::max(worst_scale,
                                   (rot::sixd_to_matrix(s * d) - rot::sixd_to_matrix(d))
                                       .cwiseAbs()
                                       .maxCoeff());
        }
        const double dt = seconds_since(t0);
        detail = fmt("6d %.2e, aa %.2e, scale %.2e, %.2fs", worst6, worst_aa, worst_scale, dt);
        return worst6 < 1e-6 && worst_aa < 1e-6 && worst_scale < 1e-9 && dt < 5.0;
    });
}

// ---- criterion 2: kinematics oracles ----
static void criterion_2() {
    run_criterion(2, "forward-kinematics and rigid-skinning oracles", [](std::string& detail) {
        const body::BodyModel chain = testutil::chain_model(3);
        Rng rng(7);
        double worst_fk = 0;
        for (int trial = 0; trial < 50; ++trial) {
            body::PoseState p = testutil::zero_pose(chain);
            for (int k = 0; k < 3; ++k)
                p.theta.row(k) = rot::matrix_to_aa(rot::random_rotation(rng)).transpose();
            p.x = Vec3(rng.gauss(), rng.gauss(), rng.gauss());
            const Mat j0 = body::rest_joints(chain, p.beta);
            Mat3 r = rot::aa_to_matrix(p.theta.row(0));
            Vec3 pos = Vec3(j0.row(0)) + p.x;
            std::vector<Vec3> expect = {pos};
            std::vector<Mat3> rots = {r};
            for (int k = 1; k < 3; ++k) {
                pos = pos + rots[k - 1] * Vec3(j0.row(k) - j0.row(k - 1));
                rots.push_back(rots[k - 1] * rot::aa_to_matrix(p.theta.row(k)));
                expect.push_back(pos);
            }
            const auto g = body::forward_kinematics(chain, p);
            for (int k = 0; k < 3; ++k)
                worst_fk = std::max(worst_fk, (Vec3(g.pos.row(k)) - expect[k]).norm());
        }

        // one-hot skinning равна rigid application
        body::BodyModel rigid = body::make_toy_model(16, 200);
        for (int i = 0; i < rigid.n_vertices(); ++i) {
            rigid.skin_weights.row(i).setZero();
            rigid.skin_weights(i, static_cast<int>(rng.below(rigid.n_joints()))) = 1.0;
        }
        body::PoseState p = testutil::zero_pose(rigid);
        for (int k = 0; k < rigid.n_joints(); ++k)
            p.theta.row(k) = rot::matrix_to_aa(rot::random_rotation(rng)).transpose();
        p.x = Vec3(0.2, -0.1, 0.4);
        const Mat out = body::skin(rigid, p);
        const auto g = body::forward_kinematics(rigid, p);
        const Mat v0 = body::shape_blend(rigid, p.beta);
        const Mat j0 = body::rest_joints(rigid, p.beta);
        double worst_skin = 0;
        for (int i = 0; i < rigid.n_vertices(); ++i) {
            int k = 0;
            for (int q = 0; q < rigid.n_joints(); ++q)
                if (rigid.skin_weights(i, q) == 1.0) k = q;
            const Vec3 expect = g.rot[k] * Vec3(v0.row(i) - j0.row(k)) + Vec3(g.pos.row(k));
            worst_skin = std::max(worst_skin, (Vec3(out.row(i)) - expect).norm());
        }
        detail = fmt("fk %.2e m, skin %.2e m", worst_fk, worst_skin);
        return worst_fk < 1e-9 && worst_skin < 1e-9;
    });
}

// ---- criterion 3: gradient checks on miniature nets ----
static void criterion_3() {
    run_criterion(3, "objective gradients match finite differences", [](std::string& detail) {
        const auto t0 = Clock::now();
        const body::BodyModel mini = body::make_toy_model(4, 60);

        prior::PriorConfig pc;
        pc.joints = mini.n_joints();
        pc.d_z = 8;
        pc.n_layers = 1;
        pc.n_heads = 2;
        pc.d_ff = 16;
        pc.head_hidden = 12;
        pc.expander_hidden = 8;
        pc.expander_out = 12;
        prior::PriorNet net(pc, 31);
        const auto seq = toydata::make_motion(mini, 5, 4);
        const prior::GtCache gt = prior::make_gt_cache(mini, seq, pc.repr);
        prior::LossWeights w;
        w.kl_prior = 0.1;
        prior::StepSample s;
        s.mask = {0, 1, 0, 0};
        s.eps.resize(4, pc.d_z);
        Rng erng(5);
        for (Eigen::Index i = 0; i < s.eps.size(); ++i) s.eps.data()[i] = erng.gauss();
        Rng rng(77);
        const double prior_err = testutil::param_groups_max_rel_err(
            net.params(), [&](ad::Tape& t) { return prior::prior_loss_g(t, net, mini, gt, w, s); },
            4, rng);

        // adapter objective on a miniature stack
        reuse::ReuseConfig rc;
        rc.modality = "depth_pc";
        rc.d_feat = 12;
        rc.pc_hidden = 12;
        rc.mapper_layers = 1;
        rc.mapper_heads = 2;
        rc.mapper_ff = 16;
        rc.head_hidden = 12;
        rc.shape_hidden = 12;
        rc.t_frames = 4;
        reuse::ReuseNet rnet(rc, pc.d_z, mini.n_shape(), 13);
        sensim::SensimConfig scfg;
        scfg.t_frames = 4;
        scfg.width = 96;
        scfg.height = 72;
        scfg.fx = scfg.fy = 80;
        scfg.depth_points = 16;
        const auto clip = sensim::generate_clip(seq, mini, "depth_pc", scfg, 5);
        const Mat inputs = reuse::stacked_inputs(clip, rc);
        const Mat mp = motrep::build_motion_params(const_cast<body::MotionSequence&>(seq),
                                                   net.expander, pc.repr);
        const prior::GaussianSeq target =
            prior::prior_dist(net, prior::encode(net, mp, prior::no_mask(4)));
        reuse::ReuseTrainConfig rtc;
        rtc.w_kl_reuse = 0.05;
        rtc.w_beta = 0.5;
        Mat eps(4, pc.d_z);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = erng.gauss();
        const double reuse_err = testutil::param_groups_max_rel_err(
            rnet.params(),
            [&](ad::Tape& t) {
                return reuse::reuse_loss_g(t, rnet, net, mini, gt, inputs, 16, target, rtc, eps);
            },
            4, rng);

        const double dt = seconds_since(t0);
        detail = fmt("prior %.2e, adapter %.2e, %.1fs", prior_err, reuse_err, dt);
        return prior_err < 1e-4 && reuse_err < 1e-4 && dt < 120.0;
    });
}

// ---- criterion 4: KL closed form and shape-loss weights ----
static void criterion_4() {
    run_criterion(4, "closed-form KL vs Monte-Carlo; shape-loss weights", [](std::string& detail) {
        Rng rng(99);
        double worst = 0;
        for (int pair = 0; pair < 20; ++pair) {
            prior::GaussianSeq q, p;
            q.mean = Mat::Constant(1, 1, rng.uniform(-1.5, 1.5));
            q.logvar = Mat::Constant(1, 1, rng.uniform(-1.5, 1.0));
            p.mean = Mat::Constant(1, 1, rng.uniform(-1.5, 1.5));
            p.logvar = Mat::Constant(1, 1, rng.uniform(-1.5, 1.0));
            const double closed = prior::kl_divergence(q, p);
            double acc = 0;
            const int n = 1000000;
            const double sq = std::exp(0.5 * q.logvar(0, 0));
            for (int i = 0; i < n; ++i) {
                const double z = q.mean(0, 0) + sq * rng.gauss();
                const double lq = -0.5 * ((z - q.mean(0, 0)) * (z - q.mean(0, 0)) /
                                              std::exp(q.logvar(0, 0)) +
                                          q.logvar(0, 0));
                const double lp = -0.5 * ((z - p.mean(0, 0)) * (z - p.mean(0, 0)) /
                                              std::exp(p.logvar(0, 0)) +
                                          p.logvar(0, 0));
                acc += lq - lp;
            }
            worst = std::max(worst, std::abs(acc / n - closed));
        }

        Vec beta = Vec::Zero(10), hat = Vec::Zero(10);
        hat[0] = 1.0;
        const double first = reuse::beta_loss(beta, hat);
        hat[0] = 0.0;
        hat[9] = 1.0;
        const double last = reuse::beta_loss(beta, hat);
        detail = fmt("KL dev %.4f, weights %.3f/%.3f", worst, first, last);
        return worst < 1e-2 && first == 1.0 && last == doctest_approx_0_1(last);
    });
}

// placeholder comparator, replaced below
static bool doctest_approx_0_1(double v) { return std::abs(v - 0.1) < 1e-12; }

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    return failures == 0 ? 0 : 1;
}
