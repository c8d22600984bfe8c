#pragma once

// Synthetic sensors: a virtual depth camera with a software z-buffer
// rasterizer, LiDAR-style sparsification of the same depth images, and
// virtual inertial sensors attached to mesh vertices.

#include <optional>
#include <string>
#include <vector>

#include "mopri/body.hpp"

namespace mopri::sensim {

// A frame produced no measurable surface (clip generators flag it).
struct EmptyObservation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Camera {
    int width = 640, height = 480;
    double fx = 525, fy = 525, cx = 320, cy = 240;
    Mat3 rot = Mat3::Identity();  // world -> camera
    Vec3 pos = Vec3::Zero();      // camera center in world coordinates

    Vec3 to_camera(const Vec3& w) const { return rot * (w - pos); }
    Vec3 to_world(const Vec3& c) const { return rot.transpose() * c + pos; }
    // u,v are continuous pixel coordinates; z is camera-space depth
    bool project(const Vec3& w, double& u, double& v, double& z) const;
    Vec3 backproject(double u, double v, double z) const;
};

struct DepthImage {
    Mat depth;  // H x W camera-space depth in meters; 0 = no hit
    Camera camera;

    int hits() const;
};

struct ImuFrame {
    Mat acc;                // 6 x 3, m/s^2
    std::vector<Mat3> ori;  // 6 global orientations
};

struct SensorClip {
    std::string id, modality, source_id;
    uint64_t seed = 0;
    Camera camera;                 // point-cloud modalities
    std::vector<Mat> points;       // T frames of P x 3 world points
    std::vector<ImuFrame> imu;     // imu modality
    std::vector<char> frame_flags; // 1 = frame had no observation
    body::MotionSequence source;   // paired ground truth

    int frames() const { return source.frames(); }
};

struct SensimConfig {
    int width = 640, height = 480;
    double fx = 525, fy = 525;
    double radius = 3.0, cam_height = 1.2;
    int depth_points = 1024;
    int lidar_stride = 5, lidar_points = 256;
    int t_frames = 40;
    bool imu_root_relative = false;
};

// Azimuth uniform in [0, 2pi) about the vertical axis, fixed radius and
// height, aimed at the root position of the middle frame.
Camera sample_camera(const body::MotionSequence& seq, const body::BodyModel& model, Rng& rng,
                     const SensimConfig& cfg = {});

DepthImage render_depth(const Mat& vertices, const Eigen::MatrixXi& faces,
                        const Camera& camera);

// Back-projects hit pixels and samples exactly n points (with replacement
// only when fewer than n pixels hit). Throws EmptyObservation on 0 hits.
Mat depth_to_pointcloud(const DepthImage& img, int n, Rng& rng);

// Candidate pixels restricted to every stride-th row and column.
Mat lidar_sparsify(const DepthImage& img, int stride, int n, Rng& rng);

// Vertex attachment sites used when the model has enough vertices to
// address them directly (the standard full-body mesh layout).
extern const std::vector<int> kCanonicalImuVertices;
// marker-table order used for other models
extern const std::vector<std::string> kImuMarkerOrder;

std::vector<int> imu_vertex_ids(const body::BodyModel& model);

std::vector<ImuFrame> simulate_imu(const body::MotionSequence& seq,
                                   const body::BodyModel& model,
                                   bool root_relative = false,
                                   const std::vector<int>* vertex_ids = nullptr);

SensorClip generate_clip(const body::MotionSequence& seq, const body::BodyModel& model,
                         const std::string& modality, const SensimConfig& cfg,
                         uint64_t seed);

void save_clip(const SensorClip& clip, const std::string& path);
SensorClip load_clip(const std::string& path);

}  // namespace mopri::sensim
