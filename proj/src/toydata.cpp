#include "mopri/toydata.hpp"

#include <cmath>

namespace mopri::toydata {

MotionStyle sample_style(Rng& rng, int n_shape) {
    MotionStyle s;
    s.family = rng.uniform() < 0.5 ? 0 : 1;
    s.speed = rng.uniform(0.4, 1.2);
    s.freq = rng.uniform(0.7, 1.4);
    s.leg_amp = rng.uniform(0.3, 0.7);
    s.arm_amp = rng.uniform(0.2, 0.6);
    s.bob_amp = rng.uniform(0.01, 0.04);
    s.sway_amp = rng.uniform(0.01, 0.05);
    s.twist_amp = rng.uniform(0.05, 0.2);
    s.heading = rng.uniform(0.0, 2.0 * M_PI);
    s.phase = rng.uniform(0.0, 2.0 * M_PI);
    s.beta = Vec::Zero(n_shape);
    for (int i = 0; i < n_shape; ++i) s.beta[i] = rng.uniform(-0.8, 0.8);
    return s;
}

body::MotionSequence synthesize(const body::BodyModel& model, const MotionStyle& s,
                                int frames, double fps, const std::string& id) {
    const int j = model.n_joints();
    body::MotionSequence seq;
    seq.theta = Mat::Zero(frames, 3 * j);
    seq.x = Mat::Zero(frames, 3);
    seq.beta = s.beta;
    seq.fps = fps;
    seq.source_id = id;

    auto set_aa = [&](int frame, const char* name, const Vec3& v) {
        const int k = model.joint_index(name);
        if (k >= 0) seq.theta.block<1, 3>(frame, 3 * k) = v.transpose();
    };

    const Vec3 dir(std::sin(s.heading), 0.0, std::cos(s.heading));
    const Vec3 lateral(std::cos(s.heading), 0.0, -std::sin(s.heading));
    const bool walking = s.family == 0;

    for (int f = 0; f < frames; ++f) {
        const double t = f / fps;
        const double w = 2.0 * M_PI * s.freq * t + s.phase;

        if (walking) {
            seq.x.row(f) = (s.speed * t * dir + s.sway_amp * std::sin(w) * lateral +
                            Vec3(0, s.bob_amp * std::abs(std::sin(w)), 0))
                               .transpose();
        } else {
            seq.x.row(f) = (s.sway_amp * std::sin(0.5 * w) * lateral).transpose();
        }

        set_aa(f, "pelvis", Vec3(0, s.heading, 0));
        const double swing = std::sin(w);
        const double counter = std::sin(w + M_PI);
        if (walking) {
            set_aa(f, "l_upperleg", Vec3(s.leg_amp * swing, 0, 0));
            set_aa(f, "r_upperleg", Vec3(s.leg_amp * counter, 0, 0));
            // knees flex when the leg swings back
            set_aa(f, "l_lowerleg", Vec3(-0.5 * s.leg_amp * (1 - std::cos(w)), 0, 0));
            set_aa(f, "r_lowerleg", Vec3(-0.5 * s.leg_amp * (1 + std::cos(w)), 0, 0));
            set_aa(f, "l_upperarm",
                   Vec3(0, s.arm_amp * counter, -0.9 + 0.1 * std::sin(w * 0.5)));
            set_aa(f, "r_upperarm", Vec3(0, s.arm_amp * swing, 0.9 - 0.1 * std::sin(w * 0.5)));
            set_aa(f, "l_lowerarm", Vec3(0, 0.3 * s.arm_amp * (1 + swing), 0));
            set_aa(f, "r_lowerarm", Vec3(0, 0.3 * s.arm_amp * (1 + counter), 0));
            set_aa(f, "spine", Vec3(0.03 * std::sin(2 * w), s.twist_amp * swing, 0));
            set_aa(f, "chest", Vec3(0, 0.5 * s.twist_amp * counter, 0.05 * std::sin(w)));
            set_aa(f, "head", Vec3(0, -0.4 * s.twist_amp * swing, 0));
        } else {
            // reaching / waving in place
            set_aa(f, "l_upperarm",
                   Vec3(0.3 * std::sin(w), 0.2 * std::cos(w), -0.4 - s.arm_amp * swing));
            set_aa(f, "r_upperarm",
                   Vec3(0.3 * std::sin(w + 1.3), 0.2 * std::cos(0.7 * w), 0.4 + s.arm_amp * counter));
            set_aa(f, "l_lowerarm", Vec3(0, 0.4 * s.arm_amp * (1 + std::cos(w)), 0));
            set_aa(f, "r_lowerarm", Vec3(0, -0.4 * s.arm_amp * (1 + std::sin(w)), 0));
            set_aa(f, "spine", Vec3(0.1 * std::sin(0.5 * w), s.twist_amp * std::sin(w), 0));
            set_aa(f, "chest", Vec3(0.08 * std::cos(0.5 * w), 0, 0));
            set_aa(f, "head", Vec3(0.1 * std::sin(0.8 * w), 0.15 * std::cos(0.6 * w), 0));
            set_aa(f, "l_upperleg", Vec3(0.08 * std::sin(0.5 * w), 0, 0));
            set_aa(f, "r_upperleg", Vec3(-0.08 * std::sin(0.5 * w), 0, 0));
        }
    }
    return seq;
}

body::MotionSequence make_motion(const body::BodyModel& model, uint64_t seed, int frames,
                                 double fps) {
    Rng rng(seed);
    const MotionStyle s = sample_style(rng, model.n_shape());
    return synthesize(model, s, frames, fps, "toy/" + std::to_string(seed));
}

std::vector<body::MotionSequence> make_corpus(const body::BodyModel& model, uint64_t seed,
                                              int count, int frames, double fps,
                                              const std::string& id_prefix) {
    std::vector<body::MotionSequence> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng(seed * 1000003ull + i);
        const MotionStyle s = sample_style(rng, model.n_shape());
        out.push_back(synthesize(model, s, frames, fps,
                                 id_prefix + "/" + std::to_string(seed) + "/" +
                                     std::to_string(i)));
    }
    return out;
}

}  // namespace mopri::toydata
