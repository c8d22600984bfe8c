#include "mopri/evalm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mopri/rotconv.hpp"

namespace mopri::evalm {

namespace {

constexpr double kRad2Deg = 180.0 / M_PI;

void check_compatible(const body::MotionSequence& gt, const body::MotionSequence& pred) {
    if (gt.frames() != pred.frames() || gt.joints() != pred.joints())
        throw std::invalid_argument("metric: sequence shapes differ (" +
                                    std::to_string(gt.frames()) + "x" +
                                    std::to_string(gt.joints()) + " vs " +
                                    std::to_string(pred.frames()) + "x" +
                                    std::to_string(pred.joints()) + ")");
}

// Positions of all joints, one FK pass per frame.
std::vector<body::JointTransforms> fk_all(const body::MotionSequence& seq,
                                          const body::BodyModel& model) {
    std::vector<body::JointTransforms> out;
    out.reserve(seq.frames());
    for (int f = 0; f < seq.frames(); ++f)
        out.push_back(body::forward_kinematics(model, seq.frame(f)));
    return out;
}

// Minimal 3-d KD-tree for nearest-neighbour queries.
class KdTree3 {
public:
    explicit KdTree3(const Mat& pts) : pts_(pts) {
        idx_.resize(pts.rows());
        for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = static_cast<int>(i);
        build(0, static_cast<int>(idx_.size()), 0);
    }

    double nearest_dist(const Vec3& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(q, 0, static_cast<int>(idx_.size()), 0, best);
        return std::sqrt(best);
    }

private:
    void build(int lo, int hi, int axis) {
        if (hi - lo <= 1) return;
        const int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) { return pts_(a, axis) < pts_(b, axis); });
        build(lo, mid, (axis + 1) % 3);
        build(mid + 1, hi, (axis + 1) % 3);
    }

    void search(const Vec3& q, int lo, int hi, int axis, double& best) const {
        if (hi <= lo) return;
        const int mid = (lo + hi) / 2;
        const int p = idx_[mid];
        const double d2 = (Vec3(pts_.row(p)) - q).squaredNorm();
        best = std::min(best, d2);
        const double split = pts_(p, axis);
        const double diff = q[axis] - split;
        const int next = (axis + 1) % 3;
        if (diff < 0) {
            search(q, lo, mid, next, best);
            if (diff * diff < best) search(q, mid + 1, hi, next, best);
        } else {
            search(q, mid + 1, hi, next, best);
            if (diff * diff < best) search(q, lo, mid, next, best);
        }
    }

    Mat pts_;
    std::vector<int> idx_;
};

int find_joint(const body::BodyModel& model, const std::vector<std::string>& candidates) {
    for (const std::string& name : candidates) {
        const int k = model.joint_index(name);
        if (k >= 0) return k;
    }
    return -1;
}

}  // namespace

double pose_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred) {
    check_compatible(gt, pred);
    double acc = 0;
    const int t = gt.frames(), j = gt.joints();
    for (int f = 0; f < t; ++f)
        for (int k = 0; k < j; ++k) {
            const Mat3 a = rot::aa_to_matrix(gt.theta.block<1, 3>(f, 3 * k).transpose());
            const Mat3 b = rot::aa_to_matrix(pred.theta.block<1, 3>(f, 3 * k).transpose());
            acc += rot::geodesic_angle(a, b);
        }
    return acc / (t * j) * kRad2Deg;
}

double joint_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                      const body::BodyModel& model) {
    check_compatible(gt, pred);
    const auto ga = fk_all(gt, model), pa = fk_all(pred, model);
    double acc = 0;
    for (int f = 0; f < gt.frames(); ++f)
        acc += (ga[f].pos - pa[f].pos).rowwise().norm().mean();
    return acc / gt.frames() * 100.0;
}

double mesh_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                     const body::BodyModel& model) {
    check_compatible(gt, pred);
    double acc = 0;
    for (int f = 0; f < gt.frames(); ++f) {
        const Mat a = body::skin(model, gt.frame(f));
        const Mat b = body::skin(model, pred.frame(f));
        acc += (a - b).rowwise().norm().mean();
    }
    return acc / gt.frames() * 100.0;
}

double positional_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                           const body::BodyModel& model) {
    check_compatible(gt, pred);
    const auto ga = fk_all(gt, model), pa = fk_all(pred, model);
    double acc = 0;
    for (int f = 0; f < gt.frames(); ++f) {
        const Eigen::RowVector3d shift = ga[f].pos.row(0) - pa[f].pos.row(0);
        acc += ((pa[f].pos.rowwise() + shift) - ga[f].pos).rowwise().norm().mean();
    }
    return acc / gt.frames() * 100.0;
}

double sip_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred,
                     const body::BodyModel& model) {
    check_compatible(gt, pred);
    const std::vector<std::vector<std::string>> sites = {
        {"l_upperarm", "left_shoulder", "L_Shoulder"},
        {"r_upperarm", "right_shoulder", "R_Shoulder"},
        {"l_upperleg", "left_hip", "L_Hip"},
        {"r_upperleg", "right_hip", "R_Hip"}};
    std::vector<int> joints;
    for (const auto& candidates : sites) {
        const int k = find_joint(model, candidates);
        if (k < 0)
            throw std::invalid_argument("sip_error: model lacks a joint for '" +
                                        candidates[0] + "'");
        joints.push_back(k);
    }
    const auto ga = fk_all(gt, model), pa = fk_all(pred, model);
    double acc = 0;
    for (int f = 0; f < gt.frames(); ++f)
        for (int k : joints) acc += rot::geodesic_angle(ga[f].rot[k], pa[f].rot[k]);
    return acc / (gt.frames() * joints.size()) * kRad2Deg;
}

double angular_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred,
                         const body::BodyModel& model) {
    check_compatible(gt, pred);
    const auto ga = fk_all(gt, model), pa = fk_all(pred, model);
    double acc = 0;
    for (int f = 0; f < gt.frames(); ++f)
        for (int k = 0; k < model.n_joints(); ++k)
            acc += rot::geodesic_angle(ga[f].rot[k], pa[f].rot[k]);
    return acc / (gt.frames() * model.n_joints()) * kRad2Deg;
}

double jitter_kms3(const body::MotionSequence& seq, const body::BodyModel& model) {
    const int t = seq.frames();
    if (t < 4) throw std::invalid_argument("jitter: need at least 4 frames");
    const auto fk = fk_all(seq, model);
    const double f3 = seq.fps * seq.fps * seq.fps;
    double acc = 0;
    int count = 0;
    for (int f = 2; f + 2 < t; ++f) {
        const Mat jerk =
            (fk[f + 2].pos - 2.0 * fk[f + 1].pos + 2.0 * fk[f - 1].pos - fk[f - 2].pos) *
            (f3 / 2.0);
        acc += jerk.rowwise().norm().sum();
        count += model.n_joints();
    }
    if (count == 0) throw std::invalid_argument("jitter: no interior frames");
    return acc / count / 1000.0;
}

double chamfer_cm(const Mat& a, const Mat& b) {
    if (a.rows() == 0 || b.rows() == 0)
        throw std::invalid_argument("chamfer: empty point set");
    const KdTree3 ta(a), tb(b);
    double da = 0, db = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) da += tb.nearest_dist(a.row(i));
    for (Eigen::Index i = 0; i < b.rows(); ++i) db += ta.nearest_dist(b.row(i));
    return 0.5 * (da / a.rows() + db / b.rows()) * 100.0;
}

void MetricReport::add(const std::string& metric, const std::string& unit, double value) {
    auto it = units.find(metric);
    if (it == units.end()) {
        units[metric] = unit;
        metric_names.push_back(metric);
    } else if (it->second != unit) {
        throw ConfigError("metric '" + metric + "' reported in '" + unit +
                          "' but aggregated in '" + it->second + "'");
    }
    values[metric].push_back(value);
}

double MetricReport::mean(const std::string& metric) const {
    const auto it = values.find(metric);
    if (it == values.end() || it->second.empty())
        throw std::invalid_argument("no values for metric '" + metric + "'");
    double acc = 0;
    for (double v : it->second) acc += v;
    return acc / it->second.size();
}

json MetricReport::to_json() const {
    json per_seq = json::array();
    for (size_t i = 0; i < sequence_ids.size(); ++i) {
        json rec = {{"id", sequence_ids[i]}};
        for (const auto& name : metric_names) {
            const auto& vals = values.at(name);
            if (i < vals.size()) rec[name] = vals[i];
        }
        per_seq.push_back(rec);
    }
    json agg = json::object();
    for (const auto& name : metric_names)
        agg[name] = {{"mean", mean(name)}, {"units", units.at(name)}};
    return json{{"dataset", dataset},
                {"checkpoint_hash", checkpoint_hash},
                {"metadata", metadata},
                {"per_sequence", per_seq},
                {"aggregate", agg}};
}

std::string MetricReport::table() const {
    std::ostringstream os;
    os << "dataset: " << dataset << "\n";
    for (const auto& name : metric_names) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-14s %10.4f %s\n", name.c_str(), mean(name),
                      units.at(name).c_str());
        os << buf;
    }
    return os.str();
}

}  // namespace mopri::evalm
