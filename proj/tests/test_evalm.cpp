#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mopri/evalm.hpp"
#include "mopri/rotconv.hpp"
#include "mopri/toydata.hpp"
#include "test_util.hpp"

using namespace mopri;

namespace {

body::MotionSequence still_pose(const body::BodyModel& m, int frames) {
    body::MotionSequence s;
    s.theta = Mat::Zero(frames, 3 * m.n_joints());
    s.x = Mat::Zero(frames, 3);
    s.beta = Vec::Zero(m.n_shape());
    return s;
}

}  // namespace

TEST_CASE("pose error") {
    const body::BodyModel m = body::make_toy_model();
    auto gt = still_pose(m, 4);
    CHECK(evalm::pose_error_deg(gt, gt) == 0.0);

    auto pred = gt;
    for (int f = 0; f < 4; ++f)
        for (int k = 0; k < m.n_joints(); ++k)
            pred.theta(f, 3 * k + 2) = 10.0 * M_PI / 180.0;
    CHECK(evalm::pose_error_deg(gt, pred) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(evalm::pose_error_deg(pred, gt) == doctest::Approx(10.0).epsilon(1e-9));

    auto shorter = still_pose(m, 3);
    CHECK_THROWS_AS(evalm::pose_error_deg(gt, shorter), std::invalid_argument);
}

TEST_CASE("joint and mesh errors scale with rigid offsets") {
    const body::BodyModel m = body::make_toy_model(16, 150);
    auto gt = toydata::make_motion(m, 31, 4);
    CHECK(evalm::joint_error_cm(gt, gt, m) == 0.0);
    CHECK(evalm::mesh_error_cm(gt, gt, m) == 0.0);

    auto pred = gt;
    pred.x.col(0).array() += 0.01;
    CHECK(evalm::joint_error_cm(gt, pred, m) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(evalm::mesh_error_cm(gt, pred, m) == doctest::Approx(1.0).epsilon(1e-9));
    pred.x.col(0).array() += 0.01;
    CHECK(evalm::joint_error_cm(gt, pred, m) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("positional error aligns roots") {
    const body::BodyModel m = body::make_toy_model(16, 150);
    auto gt = toydata::make_motion(m, 32, 4);

    // pure root-translation error vanishes after alignment
    auto pred = gt;
    pred.x.col(2).array() += 0.3;
    CHECK(evalm::positional_error_cm(gt, pred, m) < 1e-9);
    CHECK(evalm::joint_error_cm(gt, pred, m) > 1.0);

    // a non-root rotation error survives
    auto pred2 = gt;
    for (int f = 0; f < 4; ++f) pred2.theta(f, 3 * m.joint_index("l_upperarm")) += 0.4;
    CHECK(evalm::positional_error_cm(gt, pred2, m) > 0.1);

    // alignment never increases the error
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        auto noisy = gt;
        for (Eigen::Index i = 0; i < noisy.theta.size(); ++i)
            noisy.theta.data()[i] += 0.05 * rng.gauss();
        for (Eigen::Index i = 0; i < noisy.x.size(); ++i) noisy.x.data()[i] += 0.05 * rng.gauss();
        CHECK(evalm::positional_error_cm(gt, noisy, m) <=
              evalm::joint_error_cm(gt, noisy, m) + 1e-9);
    }
}

TEST_CASE("global-rotation metrics") {
    const body::BodyModel m = body::make_toy_model();
    auto gt = still_pose(m, 3);

    SUBCASE("single upper-arm offset averages over four sites") {
        auto pred = gt;
        const int arm = m.joint_index("l_upperarm");
        for (int f = 0; f < 3; ++f) pred.theta(f, 3 * arm + 1) = 20.0 * M_PI / 180.0;
        CHECK(evalm::sip_error_deg(gt, pred, m) == doctest::Approx(5.0).epsilon(1e-9));
        // root translation is irrelevant
        pred.x.array() += 2.0;
        CHECK(evalm::sip_error_deg(gt, pred, m) == doctest::Approx(5.0).epsilon(1e-9));
    }

    SUBCASE("root rotation propagates to every joint") {
        auto pred = gt;
        for (int f = 0; f < 3; ++f) pred.theta(f, 1) = 15.0 * M_PI / 180.0;
        CHECK(evalm::angular_error_deg(gt, pred, m) == doctest::Approx(15.0).epsilon(1e-9));
        CHECK(evalm::angular_error_deg(pred, gt, m) == doctest::Approx(15.0).epsilon(1e-9));
    }

    SUBCASE("unmapped joints are reported") {
        const body::BodyModel chain = testutil::chain_model(3);
        auto a = still_pose(chain, 3);
        CHECK_THROWS_AS(evalm::sip_error_deg(a, a, chain), std::invalid_argument);
    }
}

TEST_CASE("jitter") {
    const body::BodyModel m = body::make_toy_model(16, 150);

    SUBCASE("static motion has exactly zero jerk") {
        auto seq = still_pose(m, 8);
        CHECK(evalm::jitter_kms3(seq, m) == 0.0);
    }

    SUBCASE("constant velocity has zero jerk up to rounding") {
        auto seq = still_pose(m, 8);
        for (int f = 0; f < 8; ++f) seq.x(f, 0) = 0.25 * f;
        CHECK(evalm::jitter_kms3(seq, m) < 1e-12);
    }

    SUBCASE("cubic trajectory gives exactly 1e-3 km/s^3") {
        auto seq = still_pose(m, 10);
        seq.fps = 10.0;
        for (int f = 0; f < 10; ++f) {
            const double t = f / seq.fps;
            seq.x(f, 0) = t * t * t / 6.0;
        }
        CHECK(evalm::jitter_kms3(seq, m) == doctest::Approx(1e-3).epsilon(1e-12));

        // same spatial samples at double the rate: jerk scales by 8
        auto fast = seq;
        fast.fps = 20.0;
        CHECK(evalm::jitter_kms3(fast, m) == doctest::Approx(8e-3).epsilon(1e-12));
    }

    SUBCASE("too few frames") {
        auto seq = still_pose(m, 3);
        CHECK_THROWS_AS(evalm::jitter_kms3(seq, m), std::invalid_argument);
    }
}

TEST_CASE("chamfer distance") {
    Mat a(1, 3), b(1, 3);
    a << 0, 0, 0;
    b << 0.01, 0, 0;
    CHECK(evalm::chamfer_cm(a, a) == 0.0);
    CHECK(evalm::chamfer_cm(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(evalm::chamfer_cm(Mat(0, 3), b), std::invalid_argument);

    // brute-force oracle on random sets
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int pa = 30 + static_cast<int>(rng.below(170));
        const int pb = 30 + static_cast<int>(rng.below(170));
        Mat xa(pa, 3), xb(pb, 3);
        for (Eigen::Index i = 0; i < xa.size(); ++i) xa.data()[i] = rng.gauss();
        for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] = rng.gauss();
        double da = 0, db = 0;
        for (int i = 0; i < pa; ++i) {
            double best = 1e300;
            for (int j = 0; j < pb; ++j)
                best = std::min(best, (xa.row(i) - xb.row(j)).norm());
            da += best;
        }
        for (int j = 0; j < pb; ++j) {
            double best = 1e300;
            for (int i = 0; i < pa; ++i)
                best = std::min(best, (xa.row(i) - xb.row(j)).norm());
            db += best;
        }
        const double oracle = 0.5 * (da / pa + db / pb) * 100.0;
        CHECK(evalm::chamfer_cm(xa, xb) == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("metric report enforces unit discipline") {
    evalm::MetricReport rep;
    rep.dataset = "unit-test";
    rep.sequence_ids = {"a", "b"};
    rep.add("joint", "cm", 1.0);
    rep.add("joint", "cm", 3.0);
    CHECK(rep.mean("joint") == doctest::Approx(2.0));
    CHECK_THROWS_AS(rep.add("joint", "m", 1.0), ConfigError);

    rep.add("pose", "deg", 4.0);
    const auto j = rep.to_json();
    CHECK(j["aggregate"]["joint"]["mean"] == doctest::Approx(2.0));
    CHECK(j["per_sequence"][1]["joint"] == doctest::Approx(3.0));
    CHECK(rep.table().find("joint") != std::string::npos);
}
