#pragma once

// Deterministic parametric motion family (gait and reach styles) used as
// the training corpus when no external motion data is available.

#include "mopri/body.hpp"

namespace mopri::toydata {

struct MotionStyle {
    int family = 0;        // 0 = gait, 1 = reach
    double speed = 0.8;    // m/s forward
    double freq = 1.0;     // stride or wave frequency, Hz
    double leg_amp = 0.5;  // radians
    double arm_amp = 0.4;
    double bob_amp = 0.02;  // meters
    double sway_amp = 0.03;
    double twist_amp = 0.1;
    double heading = 0.0;  // about the vertical axis
    double phase = 0.0;
    Vec beta;  // shape coefficients
};

MotionStyle sample_style(Rng& rng, int n_shape);

body::MotionSequence synthesize(const body::BodyModel& model, const MotionStyle& style,
                                int frames, double fps, const std::string& id);

// style drawn from `seed`
body::MotionSequence make_motion(const body::BodyModel& model, uint64_t seed,
                                 int frames = 40, double fps = 10.0);

std::vector<body::MotionSequence> make_corpus(const body::BodyModel& model, uint64_t seed,
                                              int count, int frames = 40, double fps = 10.0,
                                              const std::string& id_prefix = "toy");

}  // namespace mopri::toydata
