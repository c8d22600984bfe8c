#include "mopri/sensim.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mopri/dataio.hpp"

namespace mopri::sensim {

bool Camera::project(const Vec3& w, double& u, double& v, double& z) const {
    const Vec3 c = to_camera(w);
    z = c.z();
    if (z <= 1e-9) return false;
    u = fx * c.x() / z + cx;
    v = fy * c.y() / z + cy;
    return true;
}

Vec3 Camera::backproject(double u, double v, double z) const {
    return to_world(Vec3((u - cx) / fx * z, (v - cy) / fy * z, z));
}

int DepthImage::hits() const {
    int n = 0;
    for (Eigen::Index i = 0; i < depth.size(); ++i)
        if (depth.data()[i] > 0) ++n;
    return n;
}

Camera sample_camera(const body::MotionSequence& seq, const body::BodyModel& model, Rng& rng,
                     const SensimConfig& cfg) {
    if (seq.frames() < 1) throw std::invalid_argument("sample_camera: empty sequence");
    const int mid = (seq.frames() - 1) / 2;
    const auto fk = body::forward_kinematics(model, seq.frame(mid));
    const Vec3 target = fk.pos.row(0);

    const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
    Camera cam;
    cam.width = cfg.width;
    cam.height = cfg.height;
    cam.fx = cfg.fx;
    cam.fy = cfg.fy;
    cam.cx = cfg.width / 2.0;
    cam.cy = cfg.height / 2.0;
    cam.pos = Vec3(target.x() + cfg.radius * std::sin(azimuth), cfg.cam_height,
                   target.z() + cfg.radius * std::cos(azimuth));

    const Vec3 fwd = (target - cam.pos).normalized();
    Vec3 up(0, 1, 0);
    if (std::abs(fwd.dot(up)) > 0.999) up = Vec3(1, 0, 0);
    const Vec3 right = up.cross(fwd).normalized();
    const Vec3 down = fwd.cross(right);  // completes a proper rotation
    cam.rot.row(0) = right.transpose();
    cam.rot.row(1) = down.transpose();
    cam.rot.row(2) = fwd.transpose();
    return cam;
}

DepthImage render_depth(const Mat& vertices, const Eigen::MatrixXi& faces,
                        const Camera& camera) {
    DepthImage img;
    img.camera = camera;
    img.depth = Mat::Zero(camera.height, camera.width);

    const Eigen::Index n = vertices.rows();
    Mat uvz(n, 3);
    std::vector<char> valid(n, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        double u, v, z;
        if (camera.project(vertices.row(i), u, v, z) && z > 0.05) {
            uvz.row(i) = Vec3(u, v, z).transpose();
            valid[i] = 1;
        }
    }

    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
        const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
        if (!valid[a] || !valid[b] || !valid[c]) continue;
        const Vec3 pa = uvz.row(a), pb = uvz.row(b), pc = uvz.row(c);
        const double area =
            (pb.x() - pa.x()) * (pc.y() - pa.y()) - (pb.y() - pa.y()) * (pc.x() - pa.x());
        if (std::abs(area) < 1e-12) continue;

        const int c0 = std::max(0, static_cast<int>(std::floor(
                                       std::min({pa.x(), pb.x(), pc.x()}) - 0.5)));
        const int c1 = std::min(camera.width - 1,
                                static_cast<int>(std::ceil(std::max({pa.x(), pb.x(), pc.x()}))));
        const int r0 = std::max(0, static_cast<int>(std::floor(
                                       std::min({pa.y(), pb.y(), pc.y()}) - 0.5)));
        const int r1 = std::min(camera.height - 1,
                                static_cast<int>(std::ceil(std::max({pa.y(), pb.y(), pc.y()}))));
        for (int r = r0; r <= r1; ++r) {
            for (int col = c0; col <= c1; ++col) {
                const double px = col + 0.5, py = r + 0.5;
                double w0 = (pb.x() - pa.x()) * (py - pa.y()) - (pb.y() - pa.y()) * (px - pa.x());
                double w1 = (pc.x() - pb.x()) * (py - pb.y()) - (pc.y() - pb.y()) * (px - pb.x());
                double w2 = (pa.x() - pc.x()) * (py - pc.y()) - (pa.y() - pc.y()) * (px - pc.x());
                if (area < 0) {
                    w0 = -w0;
                    w1 = -w1;
                    w2 = -w2;
                }
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double s = w0 + w1 + w2;
                // perspective-correct: 1/z is affine in screen space
                const double inv_z =
                    (w1 / pa.z() + w2 / pb.z() + w0 / pc.z()) / s;
                const double z = 1.0 / inv_z;
                double& cell = img.depth(r, col);
                if (cell == 0.0 || z < cell) cell = z;
            }
        }
    }
    return img;
}

namespace {

std::vector<std::pair<int, int>> hit_pixels(const DepthImage& img, int stride) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < img.depth.rows(); r += stride)
        for (int c = 0; c < img.depth.cols(); c += stride)
            if (img.depth(r, c) > 0) out.emplace_back(r, c);
    return out;
}

Mat sample_points(const DepthImage& img, const std::vector<std::pair<int, int>>& hits, int n,
                  Rng& rng) {
    const size_t k = hits.size();
    std::vector<size_t> chosen;
    chosen.reserve(n);
    if (k >= static_cast<size_t>(n)) {
        std::vector<size_t> idx(k);
        for (size_t i = 0; i < k; ++i) idx[i] = i;
        for (int i = 0; i < n; ++i) {
            const size_t j = i + rng.below(k - i);
            std::swap(idx[i], idx[j]);
            chosen.push_back(idx[i]);
        }
    } else {
        for (int i = 0; i < n; ++i) chosen.push_back(rng.below(k));
    }
    Mat out(n, 3);
    for (int i = 0; i < n; ++i) {
        const auto [r, c] = hits[chosen[i]];
        out.row(i) =
            img.camera.backproject(c + 0.5, r + 0.5, img.depth(r, c)).transpose();
    }
    return out;
}

}  // namespace

Mat depth_to_pointcloud(const DepthImage& img, int n, Rng& rng) {
    const auto hits = hit_pixels(img, 1);
    if (hits.empty()) throw EmptyObservation("depth image has no hit pixels");
    return sample_points(img, hits, n, rng);
}

Mat lidar_sparsify(const DepthImage& img, int stride, int n, Rng& rng) {
    const auto hits = hit_pixels(img, stride);
    if (hits.empty()) throw EmptyObservation("sparsified depth image has no hit pixels");
    return sample_points(img, hits, n, rng);
}

const std::vector<int> kCanonicalImuVertices = {1962, 5431, 1096, 4583, 412, 3021};
const std::vector<std::string> kImuMarkerOrder = {"left_arm", "right_arm", "left_leg",
                                                  "right_leg", "head",     "root"};

std::vector<int> imu_vertex_ids(const body::BodyModel& model) {
    const int max_id = *std::max_element(kCanonicalImuVertices.begin(),
                                         kCanonicalImuVertices.end());
    if (model.n_vertices() > max_id) return kCanonicalImuVertices;
    std::vector<int> ids;
    for (const std::string& key : kImuMarkerOrder) {
        const auto it = model.markers.find(key);
        if (it == model.markers.end())
            throw std::invalid_argument("model has no attachment marker '" + key + "'");
        ids.push_back(it->second);
    }
    return ids;
}

std::vector<ImuFrame> simulate_imu(const body::MotionSequence& seq,
                                   const body::BodyModel& model, bool root_relative,
                                   const std::vector<int>* vertex_ids) {
    const int t = seq.frames();
    if (t < 3) throw std::invalid_argument("simulate_imu: need at least 3 frames");
    const std::vector<int> ids = vertex_ids ? *vertex_ids : imu_vertex_ids(model);
    const int s = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= model.n_vertices())
            throw std::invalid_argument("simulate_imu: vertex id out of range");

    // dominant skinning joint per sensor
    std::vector<int> joint(s);
    for (int i = 0; i < s; ++i) {
        int best = 0;
        model.skin_weights.row(ids[i]).maxCoeff(&best);
        joint[i] = best;
    }

    // positions and orientations per frame
    std::vector<Mat> pos(t);  // s x 3
    std::vector<std::vector<Mat3>> ori(t, std::vector<Mat3>(s));
    for (int f = 0; f < t; ++f) {
        const body::PoseState p = seq.frame(f);
        const Mat v = body::skin(model, p);
        const auto fk = body::forward_kinematics(model, p);
        pos[f].resize(s, 3);
        for (int i = 0; i < s; ++i) {
            pos[f].row(i) = v.row(ids[i]);
            ori[f][i] = fk.rot[joint[i]];
        }
    }

    const double fps2 = seq.fps * seq.fps;
    std::vector<ImuFrame> out(t);
    for (int f = 0; f < t; ++f) {
        const int c = std::clamp(f, 1, t - 2);  // one-sided stencils at the ends
        out[f].acc = (pos[c + 1] - 2.0 * pos[c] + pos[c - 1]) * fps2;
        out[f].ori = ori[f];
    }
    if (root_relative) {
        // root sensor is the last entry in the canonical order
        const int root = s - 1;
        for (int f = 0; f < t; ++f) {
            const Mat3 r_root = out[f].ori[root];
            const Eigen::RowVector3d a_root = out[f].acc.row(root);
            for (int i = 0; i < s; ++i) {
                if (i == root) continue;
                out[f].acc.row(i) -= a_root;
                out[f].ori[i] = r_root.transpose() * out[f].ori[i];
            }
        }
    }
    return out;
}

SensorClip generate_clip(const body::MotionSequence& seq, const body::BodyModel& model,
                         const std::string& modality, const SensimConfig& cfg,
                         uint64_t seed) {
    if (seq.frames() != cfg.t_frames)
        throw std::invalid_argument("generate_clip: sequence length " +
                                    std::to_string(seq.frames()) + " != configured " +
                                    std::to_string(cfg.t_frames));
    SensorClip clip;
    clip.modality = modality;
    clip.seed = seed;
    clip.source = seq;
    clip.source_id = seq.source_id;
    clip.id = modality + "/" + seq.source_id + "/" + std::to_string(seed);
    clip.frame_flags.assign(seq.frames(), 0);

    Rng rng(seed);
    if (modality == "depth_pc" || modality == "lidar") {
        clip.camera = sample_camera(seq, model, rng, cfg);
        const int n = modality == "lidar" ? cfg.lidar_points : cfg.depth_points;
        for (int f = 0; f < seq.frames(); ++f) {
            const Mat verts = body::skin(model, seq.frame(f));
            const DepthImage img = render_depth(verts, model.faces, clip.camera);
            try {
                clip.points.push_back(modality == "lidar"
                                          ? lidar_sparsify(img, cfg.lidar_stride, n, rng)
                                          : depth_to_pointcloud(img, n, rng));
            } catch (const EmptyObservation&) {
                clip.frame_flags[f] = 1;
                clip.points.push_back(Mat::Zero(n, 3));
            }
        }
    } else if (modality == "imu") {
        clip.imu = simulate_imu(seq, model, cfg.imu_root_relative);
    } else {
        throw ConfigError("unknown modality '" + modality + "'");
    }
    return clip;
}

void save_clip(const SensorClip& clip, const std::string& path) {
    io::Bundle b;
    b.kind = "sensor_clip";
    b.meta["id"] = clip.id;
    b.meta["modality"] = clip.modality;
    b.meta["source_id"] = clip.source_id;
    b.meta["seed"] = clip.seed;
    b.meta["fps"] = clip.source.fps;
    b.meta["flags"] = clip.frame_flags;
    if (!clip.points.empty()) {
        b.meta["points_per_frame"] = clip.points[0].rows();
        const auto& c = clip.camera;
        b.meta["camera"] = {{"width", c.width}, {"height", c.height}, {"fx", c.fx},
                            {"fy", c.fy},       {"cx", c.cx},         {"cy", c.cy}};
        Mat rot(3, 3);
        rot = c.rot;
        b.put("camera_rot", rot);
        Mat pos(1, 3);
        pos = c.pos.transpose();
        b.put("camera_pos", pos);
        Mat pts(clip.points.size() * clip.points[0].rows(), 3);
        for (size_t f = 0; f < clip.points.size(); ++f)
            pts.middleRows(f * clip.points[0].rows(), clip.points[0].rows()) = clip.points[f];
        b.put("points", pts);
    }
    if (!clip.imu.empty()) {
        const int t = static_cast<int>(clip.imu.size());
        Mat acc(t * 6, 3), ori(t * 6 * 3, 3);
        for (int f = 0; f < t; ++f) {
            acc.middleRows(f * 6, 6) = clip.imu[f].acc;
            for (int s = 0; s < 6; ++s)
                ori.middleRows((f * 6 + s) * 3, 3) = clip.imu[f].ori[s];
        }
        b.put("imu_acc", acc);
        b.put("imu_ori", ori);
    }
    b.put("gt_theta", clip.source.theta);
    b.put("gt_x", clip.source.x);
    Mat beta(1, clip.source.beta.size());
    beta = clip.source.beta.transpose();
    b.put("gt_beta", beta);
    io::write_bundle(b, path);
}

SensorClip load_clip(const std::string& path) {
    io::Bundle b = io::read_bundle(path);
    if (b.kind != "sensor_clip") throw io::LoadError("'" + path + "': not a sensor clip");
    SensorClip clip;
    clip.id = b.meta.value("id", "");
    clip.modality = b.meta.value("modality", "");
    clip.source_id = b.meta.value("source_id", "");
    clip.seed = b.meta.value("seed", 0ull);
    clip.frame_flags = b.meta.value("flags", std::vector<char>());
    clip.source.theta = b.get_f64("gt_theta");
    clip.source.x = b.get_f64("gt_x");
    clip.source.beta = b.get_f64("gt_beta").row(0);
    clip.source.fps = b.meta.value("fps", 10.0);
    clip.source.source_id = clip.source_id;
    if (b.has_f64("points")) {
        const int p = b.meta.at("points_per_frame");
        const Mat pts = b.get_f64("points");
        const auto& cm = b.meta.at("camera");
        clip.camera.width = cm.at("width");
        clip.camera.height = cm.at("height");
        clip.camera.fx = cm.at("fx");
        clip.camera.fy = cm.at("fy");
        clip.camera.cx = cm.at("cx");
        clip.camera.cy = cm.at("cy");
        clip.camera.rot = b.get_f64("camera_rot");
        clip.camera.pos = b.get_f64("camera_pos").row(0).transpose();
        for (Eigen::Index f = 0; f < pts.rows() / p; ++f)
            clip.points.push_back(pts.middleRows(f * p, p));
    }
    if (b.has_f64("imu_acc")) {
        const Mat acc = b.get_f64("imu_acc");
        const Mat ori = b.get_f64("imu_ori");
        const int t = static_cast<int>(acc.rows()) / 6;
        for (int f = 0; f < t; ++f) {
            ImuFrame fr;
            fr.acc = acc.middleRows(f * 6, 6);
            for (int s = 0; s < 6; ++s)
                fr.ori.push_back(Mat3(ori.middleRows((f * 6 + s) * 3, 3)));
            clip.imu.push_back(fr);
        }
    }
    return clip;
}

}  // namespace mopri::sensim
