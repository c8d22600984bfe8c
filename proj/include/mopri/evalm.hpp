#pragma once

// Evaluation metrics: local/global rotation errors, joint/vertex position
// errors, Chamfer distance, root-aligned positional error, and jerk.

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "mopri/body.hpp"

namespace mopri::evalm {

using json = nlohmann::json;

// mean geodesic angle over local joint rotations, degrees
double pose_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred);

// mean Euclidean distance over frames x joints, absolute positions, cm
double joint_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                      const body::BodyModel& model);

// mean Euclidean distance over frames x vertices, cm
double mesh_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                     const body::BodyModel& model);

// joint error after per-frame root alignment, cm
double positional_error_cm(const body::MotionSequence& gt, const body::MotionSequence& pred,
                           const body::BodyModel& model);

// mean global geodesic angle of the four upper limbs, degrees
double sip_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred,
                     const body::BodyModel& model);

// mean global geodesic angle over all joints, degrees
double angular_error_deg(const body::MotionSequence& gt, const body::MotionSequence& pred,
                         const body::BodyModel& model);

// mean norm of the third time derivative of joint positions, km/s^3;
// boundary frames without a full central stencil are excluded
double jitter_kms3(const body::MotionSequence& seq, const body::BodyModel& model);

// bidirectional mean nearest-neighbour distance (non-squared), cm
double chamfer_cm(const Mat& a, const Mat& b);

struct MetricReport {
    std::string dataset;
    std::string checkpoint_hash;
    json metadata = json::object();
    std::vector<std::string> sequence_ids;
    std::vector<std::string> metric_names;          // insertion order
    std::map<std::string, std::string> units;
    std::map<std::string, std::vector<double>> values;

    // appends one per-sequence value; a unit mismatch for an existing
    // metric throws ConfigError
    void add(const std::string& metric, const std::string& unit, double value);
    double mean(const std::string& metric) const;
    json to_json() const;
    std::string table() const;
};

}  // namespace mopri::evalm
