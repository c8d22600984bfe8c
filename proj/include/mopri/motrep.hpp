#pragma once

// Network-facing motion parameterization: per frame the flattened 6D
// joint rotations concatenated with a translation block (learned
// dimension-expanded root-translation increments by default).

#include <string>

#include "mopri/body.hpp"
#include "mopri/tensor.hpp"

namespace mopri::motrep {

enum class TranslationRepr { delta_144, delta_3, abs_144, abs_3 };

TranslationRepr parse_repr(const std::string& s);  // throws ConfigError
std::string repr_name(TranslationRepr r);
bool repr_is_delta(TranslationRepr r);
bool repr_is_expanded(TranslationRepr r);

// Two-layer perceptron expanding the 3-dim translation channel.
struct DeltaExpander {
    ad::Param w1, b1, w2, b2;
    int hidden = 144, out = 144;

    DeltaExpander() = default;
    DeltaExpander(int hidden, int out, Rng& rng);

    ad::Var apply(ad::Tape& tape, ad::Var dx, bool frozen = false);
    Mat apply_numeric(const Mat& dx);
    void collect(std::vector<ad::Param*>& out_params);
};

// dx_t = x_t - x_{t-1}, dx_0 = 0 (global frame).
Mat compute_delta_x(const Mat& x);

// Increment channel under a temporal mask: each visible frame carries the
// mean per-frame increment since the previous visible frame (plain dx
// when nothing is masked); masked rows and the first visible frame are
// zero. Keeps training and sparse-keyframe inference consistent.
Mat masked_delta_x(const Mat& x, const std::vector<char>& mask);
// x_t = anchor + sum_{s<=t} dx_s ... with dx_0 folded into the anchor,
// i.e. x_0 = anchor, exact inverse of compute_delta_x.
Mat integrate_delta_x(const Mat& dx, const Vec3& anchor);

// T x 6J flattened local rotations of a sequence.
Mat theta_to_6d(const body::MotionSequence& seq);
// translation channel fed to the expander / parameter block: dx or x.
Mat translation_input(const body::MotionSequence& seq, TranslationRepr repr);

int translation_width(TranslationRepr repr, int expander_out);
int param_width(int joints, TranslationRepr repr, int expander_out);

// numeric build of the full parameter matrix (T x width)
Mat build_motion_params(const body::MotionSequence& seq, DeltaExpander& exp,
                        TranslationRepr repr);
// graph build (expander parameters participate in the tape)
ad::Var build_params_graph(ad::Tape& tape, const Mat& theta6d, const Mat& trans_in,
                           DeltaExpander& exp, TranslationRepr repr, bool frozen = false);

// Invert decoded parameters to a motion sequence. trans is the 3-dim
// translation channel (increments for delta_* reprs, absolute otherwise).
// Throws rot::DegenerateRotation naming (frame, joint) on bad 6D blocks.
body::MotionSequence params_to_pose(const Mat& theta6d, const Mat& trans, const Vec& beta,
                                    const Vec3& anchor, TranslationRepr repr, double fps);

}  // namespace mopri::motrep
