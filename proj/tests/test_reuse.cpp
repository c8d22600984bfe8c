#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "mopri/dataio.hpp"
#include "mopri/evalm.hpp"
#include "mopri/reuse.hpp"
#include "mopri/toydata.hpp"
#include "test_util.hpp"

using namespace mopri;
using reuse::ReuseConfig;
using reuse::ReuseNet;

namespace {

prior::PriorConfig mini_prior_cfg(int joints) {
    prior::PriorConfig c;
    c.joints = joints;
    c.d_z = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.head_hidden = 16;
    c.expander_hidden = 8;
    c.expander_out = 12;
    return c;
}

ReuseConfig mini_reuse_cfg(const std::string& modality, int t_frames) {
    ReuseConfig c;
    c.modality = modality;
    c.d_feat = 16;
    c.pc_hidden = 16;
    c.mapper_layers = 1;
    c.mapper_heads = 2;
    c.mapper_ff = 32;
    c.head_hidden = 16;
    c.shape_hidden = 16;
    c.t_frames = t_frames;
    return c;
}

sensim::SensimConfig small_sensim(int t_frames) {
    sensim::SensimConfig c;
    c.t_frames = t_frames;
    c.width = 160;
    c.height = 120;
    c.fx = c.fy = 131.25;
    c.depth_points = 128;
    c.lidar_points = 32;
    return c;
}

}  // namespace

TEST_CASE("point-cloud encoder is a symmetric set function") {
    ReuseNet net(mini_reuse_cfg("depth_pc", 2), 16, 10, 3);
    Rng rng(5);
    Mat frame(20, 3);
    for (Eigen::Index i = 0; i < frame.size(); ++i) frame.data()[i] = rng.gauss();
    std::vector<Mat> frames = {frame, 0.5 * frame};
    const Mat f1 = reuse::encode_pointcloud(net, frames);
    CHECK(f1.rows() == 2);
    CHECK(f1.cols() == 16);

    // permutation invariance, bit-exact
    Mat shuffled = frame;
    shuffled.row(0).swap(shuffled.row(7));
    shuffled.row(3).swap(shuffled.row(19));
    const Mat f2 = reuse::encode_pointcloud(net, {shuffled, 0.5 * frame});
    CHECK(f1 == f2);

    // duplicating every point changes nothing
    Mat doubled(40, 3), doubled2(40, 3);
    doubled << frame, frame;
    doubled2 << 0.5 * frame, 0.5 * frame;
    const Mat f3 = reuse::encode_pointcloud(net, {doubled, doubled2});
    CHECK((f1 - f3).cwiseAbs().maxCoeff() == 0.0);

    // distinct clouds produce distinct features
    CHECK((f1.row(0) - f1.row(1)).cwiseAbs().maxCoeff() > 1e-9);

    CHECK_THROWS_AS(reuse::encode_pointcloud(net, {Mat(0, 3)}), std::invalid_argument);
}

TEST_CASE("inertial encoder consumes 72-wide frames") {
    const body::BodyModel m = body::make_toy_model();
    body::MotionSequence seq;
    seq.theta = Mat::Zero(4, 3 * m.n_joints());
    seq.x = Mat::Zero(4, 3);
    seq.beta = Vec::Zero(10);
    const auto frames = sensim::simulate_imu(seq, m);
    const Mat rows = reuse::imu_rows(frames);
    CHECK(rows.cols() == 72);
    CHECK(rows.rows() == 4);

    ReuseNet net(mini_reuse_cfg("imu", 4), 16, 10, 7);
    const Mat f = reuse::encode_imu(net, frames);
    CHECK(f.rows() == 4);
    CHECK(f.cols() == 16);
    // static input, constant features
    CHECK((f.row(0) - f.row(3)).cwiseAbs().maxCoeff() < 1e-12);
    const Mat f2 = reuse::encode_imu(net, frames);
    CHECK(f == f2);
}

TEST_CASE("latent mapper and shape estimator") {
    ReuseNet net(mini_reuse_cfg("depth_pc", 3), 16, 10, 9);
    Rng rng(4);
    Mat feats(3, 16);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.gauss();

    const prior::GaussianSeq g = reuse::map_latent(net, feats);
    CHECK(g.mean.rows() == 3);
    CHECK(g.mean.cols() == 16);
    CHECK(g.logvar.maxCoeff() <= 15.0);
    CHECK(g.logvar.minCoeff() >= -15.0);

    const Vec beta = reuse::estimate_shape(net, feats);
    CHECK(beta.size() == 10);
    const Vec beta2 = reuse::estimate_shape(net, feats);
    CHECK(beta == beta2);

    Mat wrong(5, 16);
    wrong.setZero();
    ad::Tape t;
    CHECK_THROWS_AS(net.estimate_shape_g(t, t.constant(wrong), true),
                    std::invalid_argument);
}

TEST_CASE("shape loss weights the leading coefficients") {
    Vec beta = Vec::Zero(10), hat = Vec::Zero(10);
    CHECK(reuse::beta_loss(beta, hat) == 0.0);
    hat[0] = 1.0;
    CHECK(reuse::beta_loss(beta, hat) == doctest::Approx(1.0).epsilon(1e-12));
    hat[0] = 0.0;
    hat[9] = 1.0;
    CHECK(reuse::beta_loss(beta, hat) == doctest::Approx(0.1).epsilon(1e-12));

    // graph form agrees
    ad::Tape t;
    Mat hat_row = hat.transpose();
    CHECK(ad::scalar(reuse::beta_loss_g(t, t.constant(hat_row), beta)) ==
          doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("reuse KL direction") {
    prior::GaussianSeq a, b;
    a.mean = Mat::Constant(2, 3, 0.5);
    a.logvar = Mat::Constant(2, 3, -0.3);
    b.mean = Mat::Zero(2, 3);
    b.logvar = Mat::Constant(2, 3, 0.8);
    CHECK(reuse::reuse_kl(a, a) == 0.0);
    CHECK(reuse::reuse_kl(a, b) != reuse::reuse_kl(b, a));
    CHECK(reuse::reuse_kl(a, b) == prior::kl_divergence(a, b));
}

TEST_CASE("miniature adapter gradients match finite differences") {
    const body::BodyModel m = body::make_toy_model(4, 60);
    prior::PriorNet frozen(mini_prior_cfg(m.n_joints()), 11);
    ReuseConfig rc = mini_reuse_cfg("depth_pc", 3);
    ReuseNet net(rc, 16, 10, 13);

    auto seq = toydata::make_motion(m, 3, 3);
    auto clip = sensim::generate_clip(seq, m, "depth_pc", [&] {
        auto s = small_sensim(3);
        s.depth_points = 24;
        return s;
    }(), 5);

    const prior::GtCache gt = prior::make_gt_cache(m, seq, frozen.cfg.repr);
    const Mat inputs = reuse::stacked_inputs(clip, rc);
    const Mat mp = motrep::build_motion_params(seq, frozen.expander, frozen.cfg.repr);
    const prior::GaussianSeq target =
        prior::prior_dist(frozen, prior::encode(frozen, mp, prior::no_mask(3)));

    reuse::ReuseTrainConfig tc;
    tc.w_kl_reuse = 0.05;
    tc.w_beta = 0.5;
    Mat eps(3, 16);
    Rng erng(2);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = erng.gauss();

    Rng rng(19);
    const double err = testutil::param_groups_max_rel_err(
        net.params(),
        [&](ad::Tape& t) {
            return reuse::reuse_loss_g(t, net, frozen, m, gt, inputs, 24, target, tc, eps);
        },
        4, rng);
    CHECK(err < 1e-4);
}

TEST_CASE("adapter training respects the freeze contract") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    prior::PriorNet frozen(mini_prior_cfg(m.n_joints()), 21);
    const uint64_t frozen_sum = frozen.checksum();

    auto cfg = small_sensim(6);
    std::vector<sensim::SensorClip> clips;
    for (int i = 0; i < 2; ++i)
        clips.push_back(sensim::generate_clip(toydata::make_motion(m, 40 + i, 6), m,
                                              "depth_pc", cfg, 100 + i));

    ReuseNet net(mini_reuse_cfg("depth_pc", 6), 16, 10, 23);
    reuse::ReuseTrainConfig tc;
    tc.epochs = 8;
    tc.batch = 2;
    tc.lr = 1e-3;
    tc.seed = 3;
    tc.log_every = 1;
    reuse::ReuseTrainer trainer(net, frozen, m, tc);
    trainer.run(clips);

    CHECK(frozen.checksum() == frozen_sum);
    for (ad::Param* p : frozen.params()) CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(trainer.log.records.front().total > trainer.log.records.back().total);

    SUBCASE("disabling the distribution-matching term still trains") {
        ReuseNet net2(mini_reuse_cfg("depth_pc", 6), 16, 10, 29);
        reuse::ReuseTrainConfig tc2 = tc;
        tc2.epochs = 2;
        tc2.w_kl_reuse = 0.0;
        reuse::ReuseTrainer t2(net2, frozen, m, tc2);
        t2.run(clips);
        CHECK(std::isfinite(t2.log.records.back().total));
    }

    SUBCASE("latent width mismatch is a config error") {
        ReuseNet bad(mini_reuse_cfg("depth_pc", 6), 8, 10, 31);
        CHECK_THROWS_AS(reuse::ReuseTrainer(bad, frozen, m, tc), ConfigError);
    }
}

TEST_CASE("motion estimation end to end") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    prior::PriorNet frozen(mini_prior_cfg(m.n_joints()), 21);
    auto cfg = small_sensim(6);
    auto clip = sensim::generate_clip(toydata::make_motion(m, 50, 6), m, "depth_pc", cfg, 9);
    ReuseNet net(mini_reuse_cfg("depth_pc", 6), 16, 10, 23);

    const auto a = reuse::estimate_motion(net, frozen, clip);
    const auto b = reuse::estimate_motion(net, frozen, clip);
    CHECK(a.theta == b.theta);  // deterministic under mean sampling
    CHECK(a.frames() == 6);

    // shuffling the points of every frame changes nothing, bit-exact
    auto shuffled = clip;
    Rng rng(3);
    for (auto& pts : shuffled.points)
        for (Eigen::Index i = pts.rows(); i > 1; --i) {
            const Eigen::Index j = rng.below(i);
            pts.row(i - 1).swap(pts.row(j));
        }
    const auto c = reuse::estimate_motion(net, frozen, shuffled);
    CHECK(a.theta == c.theta);
    CHECK(a.x == c.x);

    // externally supplied shape coefficients take precedence
    Vec beta = Vec::Constant(10, 0.25);
    const auto d = reuse::estimate_motion(net, frozen, clip, Vec3::Zero(), &beta);
    CHECK(d.beta == beta);
}

TEST_CASE("reuse checkpoints pin their prior") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    prior::PriorNet frozen(mini_prior_cfg(m.n_joints()), 21);
    ReuseNet net(mini_reuse_cfg("imu", 4), 16, 10, 23);
    nn::Adam adam(net.params());

    reuse::save_reuse_checkpoint("reuse_ckpt_test.bin", net, adam, frozen.checksum(),
                                 prior::json::object(), 7, 0, Rng(7).state());
    auto loaded = reuse::load_reuse_checkpoint("reuse_ckpt_test.bin",
                                                     frozen.checksum());
    CHECK(loaded.net.checksum() == net.checksum());
    CHECK(loaded.net.cfg.modality == "imu");

    CHECK_THROWS_AS(reuse::load_reuse_checkpoint("reuse_ckpt_test.bin", 12345),
                    io::LoadError);
    std::remove("reuse_ckpt_test.bin");
}
