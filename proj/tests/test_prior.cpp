#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "mopri/prior.hpp"
#include "mopri/rotconv.hpp"
#include "mopri/toydata.hpp"
#include "test_util.hpp"

using namespace mopri;
using prior::GaussianSeq;
using prior::PriorConfig;
using prior::PriorNet;

namespace {

PriorConfig mini_config(int joints, int d_z = 16) {
    PriorConfig c;
    c.joints = joints;
    c.d_z = d_z;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.head_hidden = 16;
    c.expander_hidden = 8;
    c.expander_out = 12;
    return c;
}

}  // namespace

TEST_CASE("encoder masking contract and temporal sensitivity") {
    const body::BodyModel m = body::make_toy_model();
    PriorNet net(mini_config(m.n_joints()), 7);
    body::MotionSequence seq = toydata::make_motion(m, 3, 8);
    const Mat mp = motrep::build_motion_params(seq, net.expander, net.cfg.repr);

    SUBCASE("masked frames are invisible to every feature, exactly") {
        std::vector<char> mask(8, 0);
        mask[3] = 1;
        const Mat z1 = prior::encode(net, mp, mask);
        Mat mp2 = mp;
        mp2.row(3).setConstant(99.0);
        const Mat z2 = prior::encode(net, mp2, mask);
        CHECK(z1 == z2);  // bit-exact

        // without the mask the same perturbation must propagate
        const Mat z3 = prior::encode(net, mp, prior::no_mask(8));
        const Mat z4 = prior::encode(net, mp2, prior::no_mask(8));
        CHECK((z3 - z4).cwiseAbs().maxCoeff() > 1e-9);
    }

    SUBCASE("all-masked input is rejected") {
        CHECK_THROWS_AS(prior::encode(net, mp, std::vector<char>(8, 1)),
                        std::invalid_argument);
    }

    SUBCASE("identical frames get distinct features from their positions") {
        Mat constant_m = mp;
        for (int f = 1; f < 8; ++f) constant_m.row(f) = constant_m.row(0);
        const Mat z = prior::encode(net, constant_m, prior::no_mask(8));
        CHECK((z.row(0) - z.row(5)).cwiseAbs().maxCoeff() > 1e-9);
    }
}

TEST_CASE("posterior and prior heads") {
    const body::BodyModel m = body::make_toy_model();
    PriorNet net(mini_config(m.n_joints()), 9);
    body::MotionSequence seq = toydata::make_motion(m, 11, 6);
    const Mat mp = motrep::build_motion_params(seq, net.expander, net.cfg.repr);
    const Mat zp = prior::encode(net, mp, prior::no_mask(6));

    SUBCASE("shapes and clamping") {
        GaussianSeq q = prior::posterior(net, mp, zp);
        GaussianSeq p = prior::prior_dist(net, zp);
        CHECK(q.mean.rows() == 6);
        CHECK(q.mean.cols() == net.cfg.d_z);
        CHECK(p.logvar.maxCoeff() <= 15.0);
        CHECK(p.logvar.minCoeff() >= -15.0);
        // distinct features produce distinct outputs
        CHECK((q.mean.row(0) - q.mean.row(3)).cwiseAbs().maxCoeff() > 1e-12);
    }

    SUBCASE("zero-initialized output layer gives a unit Gaussian") {
        net.posterior_head.l2.zero_init();
        net.prior_head.l2.zero_init();
        GaussianSeq q = prior::posterior(net, mp, zp);
        GaussianSeq p = prior::prior_dist(net, zp);
        CHECK(q.mean.cwiseAbs().maxCoeff() == 0.0);
        CHECK(q.logvar.cwiseAbs().maxCoeff() == 0.0);
        CHECK(p.mean.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("reparameterized sampling") {
    GaussianSeq g;
    g.mean = Mat::Constant(2, 3, 1.5);
    g.logvar = Mat::Constant(2, 3, -15.0);

    Rng r1(5), r2(5);
    const Mat s1 = prior::sample(g, r1);
    const Mat s2 = prior::sample(g, r2);
    CHECK(s1 == s2);  // same seed, bit-exact
    CHECK((s1 - g.mean).cwiseAbs().maxCoeff() < std::exp(-7.5) * 8);

    // Monte-Carlo mean converges at the usual rate
    g.mean = Mat::Constant(1, 2, 0.7);
    g.logvar = Mat::Zero(1, 2);
    Rng r3(11);
    const int n = 100000;
    Vec acc = Vec::Zero(2);
    for (int i = 0; i < n; ++i) {
        const Mat s = prior::sample(g, r3);
        acc[0] += s(0, 0);
        acc[1] += s(0, 1);
    }
    acc /= n;
    CHECK(std::abs(acc[0] - 0.7) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(acc[1] - 0.7) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("decode shapes, determinism, nonzero gradient") {
    const body::BodyModel m = body::make_toy_model();
    PriorNet net(mini_config(m.n_joints()), 13);
    Mat z(5, net.cfg.d_z);
    Rng rng(3);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.gauss();

    auto [th, tr] = prior::decode(net, z);
    CHECK(th.rows() == 5);
    CHECK(th.cols() == 6 * m.n_joints());
    CHECK(tr.cols() == 3);
    auto [th2, tr2] = prior::decode(net, z);
    CHECK(th == th2);
    CHECK(tr == tr2);

    ad::Param pz("z", z);
    ad::Tape t;
    auto [thv, trv] = net.decode_g(t, t.param(pz), true);
    t.backward(ad::add(ad::sum(thv), ad::sum(trv)));
    CHECK(pz.grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("reconstruction loss terms") {
    const body::BodyModel m = body::make_toy_model(16, 150);
    body::MotionSequence seq = toydata::make_motion(m, 21, 5);
    prior::LossWeights w;

    SUBCASE("perfect prediction zeroes every term") {
        const Mat theta6d = motrep::theta_to_6d(seq);
        const Mat dx = motrep::compute_delta_x(seq.x);
        const auto terms = prior::recon_loss(m, theta6d, dx, seq,
                                             motrep::TranslationRepr::delta_144, w);
        CHECK(terms.theta < 1e-12);
        CHECK(terms.dtheta < 1e-12);
        CHECK(terms.x < 1e-12);
        CHECK(terms.dx < 1e-12);
        CHECK(terms.joints < 1e-12);
        CHECK(terms.verts < 1e-12);
        CHECK(terms.total < 1e-10);
    }

    SUBCASE("single-frame 1 cm translation error contributes (0.01^2)/T to L_x") {
        const Mat theta6d = motrep::theta_to_6d(seq);
        Mat x_pred = seq.x;
        x_pred(2, 0) += 0.01;
        const auto terms =
            prior::recon_loss(m, theta6d, x_pred, seq, motrep::TranslationRepr::abs_3, w);
        CHECK(terms.x == doctest::Approx(0.01 * 0.01 / seq.frames()).epsilon(1e-9));
    }

    SUBCASE("doubling the joint weight doubles its contribution") {
        Rng rng(4);
        Mat theta6d = motrep::theta_to_6d(seq);
        theta6d.array() += 0.05;
        const Mat dx = motrep::compute_delta_x(seq.x);
        prior::LossWeights w2 = w;
        w2.joints = 2.0;
        const auto a =
            prior::recon_loss(m, theta6d, dx, seq, motrep::TranslationRepr::delta_144, w);
        const auto b =
            prior::recon_loss(m, theta6d, dx, seq, motrep::TranslationRepr::delta_144, w2);
        CHECK(b.total - a.total == doctest::Approx(a.joints).epsilon(1e-9));
    }
}

TEST_CASE("KL divergence closed form") {
    GaussianSeq q, p;
    q.mean = Mat::Zero(1, 1);
    q.logvar = Mat::Zero(1, 1);
    CHECK(prior::kl_divergence(q, q) == 0.0);

    q.mean = Mat::Constant(1, 1, 1.0);
    p.mean = Mat::Zero(1, 1);
    p.logvar = Mat::Zero(1, 1);
    CHECK(prior::kl_divergence(q, p) == doctest::Approx(0.5).epsilon(1e-12));

    q.mean = Mat::Zero(1, 1);
    q.logvar = Mat::Constant(1, 1, std::log(4.0));
    CHECK(prior::kl_divergence(q, p) ==
          doctest::Approx((4.0 - 1.0 - std::log(4.0)) / 2.0).epsilon(1e-12));

    // Monte-Carlo cross-check: E_q[log q - log p]
    Rng rng(17);
    q.mean = Mat::Constant(1, 2, 0.3);
    q.logvar = Mat::Constant(1, 2, -0.4);
    p.mean = Mat::Constant(1, 2, -0.2);
    p.logvar = Mat::Constant(1, 2, 0.5);
    const double closed = prior::kl_divergence(q, p);
    double acc = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const Mat z = prior::sample(q, rng);
        for (int d = 0; d < 2; ++d) {
            const double lq = -0.5 * ((z(0, d) - q.mean(0, d)) * (z(0, d) - q.mean(0, d)) /
                                          std::exp(q.logvar(0, d)) +
                                      q.logvar(0, d));
            const double lp = -0.5 * ((z(0, d) - p.mean(0, d)) * (z(0, d) - p.mean(0, d)) /
                                          std::exp(p.logvar(0, d)) +
                                      p.logvar(0, d));
            acc += lq - lp;
        }
    }
    CHECK(std::abs(acc / n - closed) < 2e-2);
}

TEST_CASE("full objective gradients match finite differences on a miniature net") {
    const body::BodyModel m = body::make_toy_model(4, 60);
    PriorConfig cfg = mini_config(m.n_joints(), 8);
    PriorNet net(cfg, 31);
    body::MotionSequence seq = toydata::make_motion(m, 5, 4);
    const prior::GtCache gt = prior::make_gt_cache(m, seq, cfg.repr);
    prior::LossWeights w;
    w.kl_prior = 0.1;

    prior::StepSample s;
    s.mask = {0, 1, 0, 0};
    s.eps.resize(4, cfg.d_z);
    Rng erng(5);
    for (Eigen::Index i = 0; i < s.eps.size(); ++i) s.eps.data()[i] = erng.gauss();

    Rng rng(77);
    const double err = testutil::param_groups_max_rel_err(
        net.params(),
        [&](ad::Tape& t) { return prior::prior_loss_g(t, net, m, gt, w, s); }, 4, rng);
    CHECK(err < 1e-4);
}

TEST_CASE("short training run reduces the objective and is deterministic") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    PriorConfig cfg = mini_config(m.n_joints());
    prior::TrainConfig tc;
    tc.epochs = 30;
    tc.batch = 2;
    tc.lr = 2e-3;
    tc.seed = 5;
    tc.log_every = 1;
    const auto data = toydata::make_corpus(m, 100, 2, 8);

    PriorNet a(cfg, 42);
    prior::PriorTrainer ta(a, m, tc);
    ta.run(data);
    CHECK(ta.log.records.front().total > ta.log.records.back().total);
    for (const auto& r : ta.log.records) CHECK(std::isfinite(r.total));

    PriorNet b(cfg, 42);
    prior::PriorTrainer tb(b, m, tc);
    tb.run(data);
    CHECK(a.checksum() == b.checksum());

    SUBCASE("empty dataset is rejected") {
        PriorNet c(cfg, 1);
        prior::PriorTrainer tcr(c, m, tc);
        CHECK_THROWS_AS(tcr.run({}), std::invalid_argument);
    }
}

TEST_CASE("checkpoint save, load, and bit-exact resume") {
    const body::BodyModel m = body::make_toy_model(16, 120);
    PriorConfig cfg = mini_config(m.n_joints());
    prior::TrainConfig tc;
    tc.epochs = 6;
    tc.batch = 2;
    tc.lr = 1e-3;
    tc.seed = 9;
    const auto data = toydata::make_corpus(m, 55, 2, 6);
    const std::string path = "prior_ckpt_test.bin";

    PriorNet a(cfg, 8);
    prior::PriorTrainer ta(a, m, tc);
    ta.run_epochs(data, 3);
    prior::save_checkpoint(path, a, ta.adam, prior::train_config_to_json(tc), tc.seed,
                           ta.epoch, ta.rng.state());
    ta.run_epochs(data, 3);
    const uint64_t final_sum = a.checksum();

    prior::LoadedPrior lp = prior::load_checkpoint(path);
    prior::PriorTrainer tb(lp.net, m, tc);
    tb.adam.m = lp.adam_m;
    tb.adam.v = lp.adam_v;
    tb.adam.steps = lp.adam_steps;
    tb.rng.restore(lp.rng_state);
    tb.epoch = lp.epoch;
    tb.run_epochs(data, 3);
    CHECK(lp.net.checksum() == final_sum);
    std::remove(path.c_str());
}

TEST_CASE("inbetweening") {
    const body::BodyModel m = body::make_toy_model();
    PriorNet net(mini_config(m.n_joints()), 3);
    body::MotionSequence seq = toydata::make_motion(m, 77, 8);

    SUBCASE("degenerate mask equals plain reconstruction bit-exactly") {
        std::map<int, body::PoseState> keys;
        for (int f = 0; f < 8; ++f) keys[f] = seq.frame(f);
        const auto res = prior::inbetween(net, keys, 8, seq.fps);
        const auto rec = prior::reconstruct(net, seq);
        CHECK(res.decoded.theta == rec.theta);
        CHECK(res.decoded.x == rec.x);
        // pass-through restores the given frames exactly
        CHECK(res.blended.theta.row(3) == seq.theta.row(3));
    }

    SUBCASE("output length is T regardless of keyframe count") {
        std::map<int, body::PoseState> keys;
        keys[0] = seq.frame(0);
        keys[7] = seq.frame(7);
        const auto res = prior::inbetween(net, keys, 12, seq.fps);
        CHECK(res.blended.frames() == 12);
        CHECK(res.decoded.frames() == 12);
        for (int f : {1, 2, 3, 4, 5, 6}) CHECK(res.mask[f] == 1);
    }

    SUBCASE("too few keyframes or missing first frame") {
        std::map<int, body::PoseState> keys;
        CHECK_THROWS_AS(prior::inbetween(net, keys, 8, 10.0), std::invalid_argument);
        keys[0] = seq.frame(0);
        CHECK_THROWS_AS(prior::inbetween(net, keys, 8, 10.0), std::invalid_argument);
        keys.erase(0);
        keys[3] = seq.frame(3);
        keys[7] = seq.frame(7);
        CHECK_THROWS_AS(prior::inbetween(net, keys, 8, 10.0), std::invalid_argument);
    }
}

TEST_CASE("slerp baseline") {
    const body::BodyModel m = body::make_toy_model();
    const int j = m.n_joints();

    std::map<int, body::PoseState> keys;
    body::PoseState a;
    a.theta = Mat::Zero(j, 3);
    a.x = Vec3::Zero();
    a.beta = Vec::Zero(10);
    body::PoseState b = a;
    b.theta(0, 2) = M_PI / 2;  // root z by 90 degrees
    b.x = Vec3(1, 0, 0);
    keys[0] = a;
    keys[2] = b;

    const auto seq = prior::slerp_baseline(keys, 3, 10.0);
    const Mat3 mid = rot::aa_to_matrix(seq.theta.block<1, 3>(1, 0).transpose());
    const Mat3 expect = rot::aa_to_matrix(Vec3(0, 0, M_PI / 4));
    CHECK(rot::geodesic_angle(mid, expect) < 1e-9);
    CHECK(seq.x(1, 0) == doctest::Approx(0.5));
    // keyframes reproduced exactly
    CHECK(seq.theta.row(0) == a.theta.reshaped<Eigen::RowMajor>(1, 3 * j));
    CHECK((seq.x.row(2) - b.x.transpose()).cwiseAbs().maxCoeff() == 0.0);

    // constant keyframes give a constant sequence
    keys[2] = a;
    const auto c = prior::slerp_baseline(keys, 3, 10.0);
    CHECK((c.theta.row(1) - c.theta.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}
