#include "mopri/body.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "mopri/dataio.hpp"
#include "mopri/rotconv.hpp"

namespace mopri::body {

Mat BodyModel::basis_flat() const {
    const int n = n_vertices(), b = n_shape();
    Mat out(b, 3 * n);
    for (int k = 0; k < b; ++k)
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) out(k, 3 * i + c) = shape_basis[k](i, c);
    return out;
}

void BodyModel::validate() const {
    const int n = n_vertices(), j = n_joints();
    if (joint_regressor.cols() != n)
        throw std::invalid_argument("BodyModel: regressor column count != vertex count");
    if (skin_weights.rows() != n || skin_weights.cols() != j)
        throw std::invalid_argument("BodyModel: skin weight shape mismatch");
    if (static_cast<int>(parents.size()) != j)
        throw std::invalid_argument("BodyModel: parents size != joint count");
    for (int k = 0; k < j; ++k) {
        const double rs = joint_regressor.row(k).sum();
        if (std::abs(rs - 1.0) > 1e-6)
            throw std::invalid_argument("BodyModel: regressor row " + std::to_string(k) +
                                        " sums to " + std::to_string(rs));
    }
    for (int i = 0; i < n; ++i) {
        if (skin_weights.row(i).minCoeff() < 0)
            throw std::invalid_argument("BodyModel: negative skin weight at vertex " +
                                        std::to_string(i));
        if (std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6)
            throw std::invalid_argument("BodyModel: skin weights of vertex " + std::to_string(i) +
                                        " do not sum to 1");
    }
    if (parents[0] != -1) throw std::invalid_argument("BodyModel: joint 0 must be the root");
    for (int k = 1; k < j; ++k) {
        if (parents[k] < 0 || parents[k] >= j)
            throw std::invalid_argument("BodyModel: parent of joint " + std::to_string(k) +
                                        " out of range");
        // walk to the root; a cycle would loop more than j times
        int cur = k, steps = 0;
        while (cur != 0) {
            cur = parents[cur];
            if (cur < 0 || ++steps > j)
                throw std::invalid_argument("BodyModel: parents do not form a rooted tree");
        }
    }
    for (const auto& b : shape_basis)
        if (b.rows() != n || b.cols() != 3)
            throw std::invalid_argument("BodyModel: shape basis shape mismatch");
}

int BodyModel::joint_index(const std::string& name) const {
    for (size_t i = 0; i < joint_names.size(); ++i)
        if (joint_names[i] == name) return static_cast<int>(i);
    return -1;
}

PoseState MotionSequence::frame(int t) const {
    PoseState p;
    const int j = joints();
    p.theta.resize(j, 3);
    for (int k = 0; k < j; ++k) p.theta.row(k) = theta.block<1, 3>(t, 3 * k);
    p.x = x.row(t);
    p.beta = beta;
    return p;
}

void MotionSequence::set_frame(int t, const PoseState& p) {
    for (int k = 0; k < p.theta.rows(); ++k) theta.block<1, 3>(t, 3 * k) = p.theta.row(k);
    x.row(t) = p.x.transpose();
}

Mat shape_blend(const BodyModel& m, const Vec& beta) {
    if (beta.size() != m.n_shape())
        throw std::invalid_argument("shape_blend: beta length " + std::to_string(beta.size()) +
                                    " != basis size " + std::to_string(m.n_shape()));
    Mat v = m.template_vertices;
    for (int b = 0; b < m.n_shape(); ++b) v += beta[b] * m.shape_basis[b];
    return v;
}

Mat rest_joints(const BodyModel& m, const Vec& beta) {
    return m.joint_regressor * shape_blend(m, beta);
}

JointTransforms forward_kinematics(const BodyModel& m, const PoseState& p) {
    const int j = m.n_joints();
    const Mat j0 = rest_joints(m, p.beta);
    JointTransforms out;
    out.rot.resize(j);
    out.pos.resize(j, 3);
    out.rot[0] = rot::aa_to_matrix(p.theta.row(0));
    out.pos.row(0) = (j0.row(0).transpose() + p.x).transpose();
    for (int k = 1; k < j; ++k) {
        const int pa = m.parents[k];
        const Mat3 rl = rot::aa_to_matrix(p.theta.row(k));
        out.rot[k] = out.rot[pa] * rl;
        const Vec3 off = (j0.row(k) - j0.row(pa)).transpose();
        out.pos.row(k) = (out.rot[pa] * off).transpose() + out.pos.row(pa);
    }
    return out;
}

Mat skin(const BodyModel& m, const PoseState& p) {
    const Mat v0 = shape_blend(m, p.beta);
    const Mat j0 = rest_joints(m, p.beta);
    const JointTransforms g = forward_kinematics(m, p);
    const int j = m.n_joints();
    // per joint: y = R x + u with u = pos - R j0
    std::vector<Vec3> u(j);
    for (int k = 0; k < j; ++k)
        u[k] = g.pos.row(k).transpose() - g.rot[k] * j0.row(k).transpose();
    Mat out = Mat::Zero(m.n_vertices(), 3);
    for (int k = 0; k < j; ++k) {
        const Vec w = m.skin_weights.col(k);
        Mat moved = (v0 * g.rot[k].transpose()).rowwise() + u[k].transpose();
        out += (moved.array().colwise() * w.array()).matrix();
    }
    return out;
}

namespace {

struct Segment {
    int joint;
    Vec3 a, b;
    double radius;
};

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

// smooth 0->1 ramp on [lo, hi]
double smoothstep(double x, double lo, double hi) {
    const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

}  // namespace

BodyModel make_toy_model(int n_joints, int n_vertices) {
    if (n_joints < 2) throw std::invalid_argument("make_toy_model: need at least 2 joints");
    // Fixed 16-joint humanoid; n_joints trims from the tail of this list
    // (kinematic order, so any prefix is a valid tree).
    const std::vector<std::string> names = {
        "pelvis",      "spine",       "chest",       "head",
        "l_upperarm",  "l_lowerarm",  "l_hand",      "r_upperarm",
        "r_lowerarm",  "r_hand",      "l_upperleg",  "l_lowerleg",
        "l_foot",      "r_upperleg",  "r_lowerleg",  "r_foot"};
    const std::vector<int> all_parents = {-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14};
    std::vector<Vec3> jp = {
        {0.00, 0.95, 0.00},  {0.00, 1.10, 0.00},  {0.00, 1.30, 0.00},  {0.00, 1.52, 0.00},
        {0.18, 1.40, 0.00},  {0.44, 1.40, 0.00},  {0.66, 1.40, 0.00},  {-0.18, 1.40, 0.00},
        {-0.44, 1.40, 0.00}, {-0.66, 1.40, 0.00}, {0.10, 0.88, 0.00},  {0.12, 0.48, 0.00},
        {0.13, 0.06, 0.00},  {-0.10, 0.88, 0.00}, {-0.12, 0.48, 0.00}, {-0.13, 0.06, 0.00}};

    const int j = std::min<int>(n_joints, 16);
    BodyModel m;
    m.parents.assign(all_parents.begin(), all_parents.begin() + j);
    m.joint_names.assign(names.begin(), names.begin() + j);

    // geometry + influence segments, one owner joint each
    std::vector<Segment> segs;
    auto leaf_dir = [&](int k) -> Vec3 {
        if (names[k] == "head") return {0, 0.20, 0};
        if (names[k] == "l_hand") return {0.10, 0, 0};
        if (names[k] == "r_hand") return {-0.10, 0, 0};
        if (names[k] == "l_foot" || names[k] == "r_foot") return {0.01, -0.04, 0.12};
        return {0, 0.05, 0};
    };
    std::vector<double> radius(j, 0.055);
    for (int k = 0; k < j; ++k) {
        if (names[k] == "pelvis" || names[k] == "spine" || names[k] == "chest") radius[k] = 0.11;
        if (names[k] == "head") radius[k] = 0.09;
        if (names[k].find("hand") != std::string::npos || names[k].find("foot") != std::string::npos)
            radius[k] = 0.04;
    }
    for (int k = 0; k < j; ++k) {
        bool has_child = false;
        for (int c = k + 1; c < j; ++c)
            if (m.parents[c] == k) {
                segs.push_back({k, jp[k], jp[c], 0.5 * (radius[k] + radius[c])});
                has_child = true;
            }
        if (!has_child) segs.push_back({k, jp[k], jp[k] + leaf_dir(k), radius[k]});
    }

    // vertices: rings along each segment
    const int per_seg = std::max<int>(6, n_vertices / static_cast<int>(segs.size()));
    const int around = 6;
    const int rings = std::max(2, per_seg / around);
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    for (const Segment& s : segs) {
        const Vec3 axis = (s.b - s.a).normalized();
        Vec3 ref = std::abs(axis.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
        const Vec3 u = axis.cross(ref).normalized();
        const Vec3 v = axis.cross(u).normalized();
        const int base = static_cast<int>(verts.size());
        for (int r = 0; r < rings; ++r) {
            const double t = rings == 1 ? 0.5 : static_cast<double>(r) / (rings - 1);
            const Vec3 c = s.a + t * (s.b - s.a);
            // taper slightly toward the ends
            const double rad = s.radius * (0.85 + 0.15 * std::sin(M_PI * t));
            for (int i = 0; i < around; ++i) {
                const double ang = 2.0 * M_PI * i / around;
                verts.push_back(c + rad * (std::cos(ang) * u + std::sin(ang) * v));
            }
        }
        for (int r = 0; r + 1 < rings; ++r)
            for (int i = 0; i < around; ++i) {
                const int i1 = (i + 1) % around;
                const int a0 = base + r * around + i;
                const int a1 = base + r * around + i1;
                const int b0 = base + (r + 1) * around + i;
                const int b1 = base + (r + 1) * around + i1;
                faces.push_back({a0, b0, a1});
                faces.push_back({a1, b0, b1});
            }
    }

    const int n = static_cast<int>(verts.size());
    m.template_vertices.resize(n, 3);
    for (int i = 0; i < n; ++i) m.template_vertices.row(i) = verts[i].transpose();
    m.faces.resize(static_cast<int>(faces.size()), 3);
    for (size_t i = 0; i < faces.size(); ++i)
        for (int c = 0; c < 3; ++c) m.faces(static_cast<int>(i), c) = faces[i][c];

    // skin weights: distance falloff to each joint's segments, top-2 blend
    m.skin_weights = Mat::Zero(n, j);
    const double sigma = 0.07;
    for (int i = 0; i < n; ++i) {
        Vec d = Vec::Constant(j, 1e9);
        for (const Segment& s : segs)
            d[s.joint] = std::min(d[s.joint], point_segment_dist(verts[i], s.a, s.b));
        int b1 = 0, b2 = -1;
        for (int k = 1; k < j; ++k)
            if (d[k] < d[b1]) b1 = k;
        for (int k = 0; k < j; ++k)
            if (k != b1 && (b2 < 0 || d[k] < d[b2])) b2 = k;
        const double w1 = std::exp(-d[b1] * d[b1] / (sigma * sigma));
        const double w2 = b2 >= 0 ? std::exp(-d[b2] * d[b2] / (sigma * sigma)) : 0.0;
        m.skin_weights(i, b1) = w1 / (w1 + w2);
        if (b2 >= 0) m.skin_weights(i, b2) = w2 / (w1 + w2);
    }

    // regressor: average the 8 vertices nearest each joint position
    m.joint_regressor = Mat::Zero(j, n);
    for (int k = 0; k < j; ++k) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + 8, idx.end(), [&](int a, int b) {
            const double da = (verts[a] - jp[k]).squaredNorm();
            const double db = (verts[b] - jp[k]).squaredNorm();
            return da < db || (da == db && a < b);
        });
        for (int q = 0; q < 8; ++q) m.joint_regressor(k, idx[q]) = 1.0 / 8.0;
    }

    // 10 smooth shape directions
    const Vec3 pelvis = jp[0];
    m.shape_basis.assign(10, Mat::Zero(n, 3));
    for (int i = 0; i < n; ++i) {
        const Vec3 p = verts[i];
        const Vec3 rel = p - pelvis;
        m.shape_basis[0].row(i) = 0.06 * rel.transpose();                       // global scale
        m.shape_basis[1](i, 1) = 0.05 * rel.y();                                // height
        m.shape_basis[2](i, 0) = 0.05 * p.x();                                  // width
        m.shape_basis[3](i, 2) = 0.05 * (p.z() + 0.02);                         // depth
        const double arm = smoothstep(std::abs(p.x()), 0.15, 0.30);
        m.shape_basis[4](i, 0) = 0.06 * arm * (p.x() > 0 ? 1.0 : -1.0);         // arm length
        const double leg = smoothstep(pelvis.y() - p.y(), 0.0, 0.35);
        m.shape_basis[5](i, 1) = -0.08 * leg;                                   // leg length
        const double head = smoothstep(p.y(), 1.40, 1.52);
        m.shape_basis[6].row(i) = 0.5 * head * (p - Vec3(0, 1.55, 0)).transpose();  // head size
        const Vec3 belly(0, 1.10, 0.05);
        const double bw = std::exp(-(p - belly).squaredNorm() / (0.18 * 0.18));
        m.shape_basis[7].row(i) = 0.06 * bw * (p - belly).transpose();          // belly
        const double sh = smoothstep(p.y(), 1.25, 1.45) * smoothstep(std::abs(p.x()), 0.05, 0.20);
        m.shape_basis[8](i, 0) = 0.05 * sh * (p.x() > 0 ? 1.0 : -1.0);          // shoulder width
        m.shape_basis[9].row(i) = 0.03 * (p - Vec3(0, p.y(), 0)).transpose();   // girth
    }

    // virtual-sensor attachment sites: nearest vertex to a semantic anchor
    auto nearest = [&](const Vec3& a) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if ((verts[i] - a).squaredNorm() < (verts[best] - a).squaredNorm()) best = i;
        return best;
    };
    if (j == 16) {
        m.markers["left_arm"] = nearest({0.55, 1.40, 0.04});
        m.markers["right_arm"] = nearest({-0.55, 1.40, 0.04});
        m.markers["left_leg"] = nearest({0.125, 0.30, 0.04});
        m.markers["right_leg"] = nearest({-0.125, 0.30, 0.04});
        m.markers["head"] = nearest({0.0, 1.62, 0.04});
        m.markers["root"] = nearest({0.0, 0.95, -0.10});
    } else {
        // degenerate configurations used by miniature tests
        m.markers["root"] = nearest(jp[0]);
    }

    m.validate();
    return m;
}

void save_model(const BodyModel& m, const std::string& path) {
    io::Bundle b;
    b.kind = "body_model";
    b.meta["joint_names"] = m.joint_names;
    b.meta["markers"] = m.markers;
    b.meta["n_shape"] = m.n_shape();
    b.put("template", m.template_vertices);
    io::MatI faces = m.faces.cast<int64_t>();
    b.put("faces", faces);
    for (int k = 0; k < m.n_shape(); ++k)
        b.put("shape_basis/" + std::to_string(k), m.shape_basis[k]);
    b.put("joint_regressor", m.joint_regressor);
    b.put("skin_weights", m.skin_weights);
    io::MatI parents(m.parents.size(), 1);
    for (size_t i = 0; i < m.parents.size(); ++i) parents(static_cast<int>(i), 0) = m.parents[i];
    b.put("parents", parents);
    io::write_bundle(b, path);
}

BodyModel load_model(const std::string& path) {
    io::Bundle b = io::read_bundle(path);
    if (b.kind != "body_model")
        throw io::LoadError("'" + path + "': expected kind 'body_model', got '" + b.kind + "'");
    BodyModel m;
    m.template_vertices = b.get_f64("template");
    m.faces = b.get_i64("faces").cast<int>();
    const int nb = b.meta.value("n_shape", 0);
    for (int k = 0; k < nb; ++k) m.shape_basis.push_back(b.get_f64("shape_basis/" + std::to_string(k)));
    m.joint_regressor = b.get_f64("joint_regressor");
    m.skin_weights = b.get_f64("skin_weights");
    const io::MatI parents = b.get_i64("parents");
    for (Eigen::Index i = 0; i < parents.rows(); ++i)
        m.parents.push_back(static_cast<int>(parents(i, 0)));
    if (b.meta.contains("joint_names"))
        m.joint_names = b.meta["joint_names"].get<std::vector<std::string>>();
    if (b.meta.contains("markers"))
        m.markers = b.meta["markers"].get<std::map<std::string, int>>();
    if (b.meta.contains("pose_blendshapes"))
        std::cerr << "load_model: pose blendshapes present in '" << path << "' are ignored\n";
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw io::LoadError("'" + path + "': " + e.what());
    }
    return m;
}

}  // namespace mopri::body
