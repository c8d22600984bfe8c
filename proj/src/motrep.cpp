#include "mopri/motrep.hpp"

#include "mopri/rotconv.hpp"

namespace mopri::motrep {

TranslationRepr parse_repr(const std::string& s) {
    if (s == "delta_144") return TranslationRepr::delta_144;
    if (s == "delta_3") return TranslationRepr::delta_3;
    if (s == "abs_144") return TranslationRepr::abs_144;
    if (s == "abs_3") return TranslationRepr::abs_3;
    throw ConfigError("unknown translation representation '" + s + "'");
}

std::string repr_name(TranslationRepr r) {
    switch (r) {
        case TranslationRepr::delta_144: return "delta_144";
        case TranslationRepr::delta_3: return "delta_3";
        case TranslationRepr::abs_144: return "abs_144";
        case TranslationRepr::abs_3: return "abs_3";
    }
    return "?";
}

bool repr_is_delta(TranslationRepr r) {
    return r == TranslationRepr::delta_144 || r == TranslationRepr::delta_3;
}

bool repr_is_expanded(TranslationRepr r) {
    return r == TranslationRepr::delta_144 || r == TranslationRepr::abs_144;
}

DeltaExpander::DeltaExpander(int hidden_, int out_, Rng& rng) : hidden(hidden_), out(out_) {
    auto init = [&rng](int r, int c) {
        Mat m(r, c);
        const double s = std::sqrt(2.0 / (r + c));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.gauss();
        return m;
    };
    w1 = ad::Param("expander/w1", init(3, hidden));
    b1 = ad::Param("expander/b1", Mat::Zero(1, hidden));
    w2 = ad::Param("expander/w2", init(hidden, out));
    b2 = ad::Param("expander/b2", Mat::Zero(1, out));
}

ad::Var DeltaExpander::apply(ad::Tape& t, ad::Var dx, bool frozen) {
    auto leaf = [&](ad::Param& p) { return frozen ? t.constant(p.value) : t.param(p); };
    ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(dx, leaf(w1)), leaf(b1)));
    return ad::add_rowvec(ad::matmul(h, leaf(w2)), leaf(b2));
}

Mat DeltaExpander::apply_numeric(const Mat& dx) {
    ad::Tape t;
    return apply(t, t.constant(dx), true).val();
}

void DeltaExpander::collect(std::vector<ad::Param*>& out_params) {
    out_params.push_back(&w1);
    out_params.push_back(&b1);
    out_params.push_back(&w2);
    out_params.push_back(&b2);
}

Mat compute_delta_x(const Mat& x) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index t = 1; t < x.rows(); ++t) dx.row(t) = x.row(t) - x.row(t - 1);
    return dx;
}

Mat masked_delta_x(const Mat& x, const std::vector<char>& mask) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    int prev_visible = -1;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        if (!mask.empty() && mask[t]) continue;
        if (prev_visible >= 0)
            dx.row(t) = (x.row(t) - x.row(prev_visible)) /
                        static_cast<double>(t - prev_visible);
        prev_visible = static_cast<int>(t);
    }
    return dx;
}

Mat integrate_delta_x(const Mat& dx, const Vec3& anchor) {
    Mat x(dx.rows(), dx.cols());
    if (dx.rows() == 0) return x;
    x.row(0) = anchor.transpose() + dx.row(0);
    for (Eigen::Index t = 1; t < dx.rows(); ++t) x.row(t) = x.row(t - 1) + dx.row(t);
    return x;
}

Mat theta_to_6d(const body::MotionSequence& seq) {
    const int t = seq.frames(), j = seq.joints();
    Mat out(t, 6 * j);
    for (int f = 0; f < t; ++f)
        for (int k = 0; k < j; ++k) {
            const Mat3 r = rot::aa_to_matrix(seq.theta.block<1, 3>(f, 3 * k).transpose());
            out.block<1, 6>(f, 6 * k) = rot::matrix_to_6d(r).transpose();
        }
    return out;
}

Mat translation_input(const body::MotionSequence& seq, TranslationRepr repr) {
    return repr_is_delta(repr) ? compute_delta_x(seq.x) : seq.x;
}

int translation_width(TranslationRepr repr, int expander_out) {
    return repr_is_expanded(repr) ? expander_out : 3;
}

int param_width(int joints, TranslationRepr repr, int expander_out) {
    return 6 * joints + translation_width(repr, expander_out);
}

Mat build_motion_params(const body::MotionSequence& seq, DeltaExpander& exp,
                        TranslationRepr repr) {
    ad::Tape t;
    return build_params_graph(t, theta_to_6d(seq), translation_input(seq, repr), exp, repr, true)
        .val();
}

ad::Var build_params_graph(ad::Tape& tape, const Mat& theta6d, const Mat& trans_in,
                           DeltaExpander& exp, TranslationRepr repr, bool frozen) {
    ad::Var rot_block = tape.constant(theta6d);
    ad::Var tr = tape.constant(trans_in);
    if (repr_is_expanded(repr)) tr = exp.apply(tape, tr, frozen);
    return ad::concat_cols({rot_block, tr});
}

body::MotionSequence params_to_pose(const Mat& theta6d, const Mat& trans, const Vec& beta,
                                    const Vec3& anchor, TranslationRepr repr, double fps) {
    if (!theta6d.allFinite() || !trans.allFinite())
        throw std::invalid_argument("params_to_pose: non-finite input");
    const int t = static_cast<int>(theta6d.rows());
    const int j = static_cast<int>(theta6d.cols()) / 6;
    body::MotionSequence seq;
    seq.theta.resize(t, 3 * j);
    seq.beta = beta;
    seq.fps = fps;
    for (int f = 0; f < t; ++f)
        for (int k = 0; k < j; ++k) {
            try {
                const Mat3 r = rot::sixd_to_matrix(theta6d.block<1, 6>(f, 6 * k).transpose());
                seq.theta.block<1, 3>(f, 3 * k) = rot::matrix_to_aa(r).transpose();
            } catch (const rot::DegenerateRotation& e) {
                throw rot::DegenerateRotation("frame " + std::to_string(f) + ", joint " +
                                              std::to_string(k) + ": " + e.what());
            }
        }
    if (repr_is_delta(repr)) {
        Mat dx = trans;
        dx.row(0).setZero();  // first frame carries no increment
        seq.x = integrate_delta_x(dx, anchor);
    } else {
        seq.x = trans;
    }
    return seq;
}

}  // namespace mopri::motrep
