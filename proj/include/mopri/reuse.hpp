#pragma once

// Frozen-prior adaptation: modality input encoders (point-cloud set
// encoder, inertial-frame perceptron), a transformer latent mapper with a
// Gaussian head, a sequence-level shape estimator, and the adapter
// training loop that only updates adapter parameters.

#include "mopri/prior.hpp"
#include "mopri/sensim.hpp"

namespace mopri::reuse {

struct ReuseConfig {
    std::string modality = "depth_pc";  // depth_pc | lidar | imu
    int d_feat = 64;
    int pc_hidden = 64;
    int mapper_layers = 2;
    int mapper_heads = 4;
    int mapper_ff = 256;
    int head_hidden = 128;
    int shape_hidden = 128;
    int t_frames = 40;
    bool center_pointclouds = true;
    bool use_gt_beta = false;  // inertial evaluation convention
    double logvar_min = -15, logvar_max = 15;
};

prior::json reuse_config_to_json(const ReuseConfig& c);
ReuseConfig reuse_config_from_json(const prior::json& j);

// T x 72 rows: per frame, six sensors of (acceleration, row-major
// orientation matrix).
Mat imu_rows(const std::vector<sensim::ImuFrame>& frames);

struct ReuseNet {
    ReuseConfig cfg;
    int d_z = 0, n_shape = 0;
    nn::Linear pc1, pc2;   // shared pointwise layers
    nn::Mlp2 imu_enc;      // 72 -> d_feat
    nn::Transformer mapper;
    nn::Mlp2 gauss_head;   // d_z -> 2 d_z
    nn::Mlp2 shape_est;    // t_frames * d_feat -> n_shape

    ReuseNet() = default;
    ReuseNet(const ReuseConfig& cfg, int d_z, int n_shape, uint64_t seed);

    std::vector<ad::Param*> params();
    uint64_t checksum();

    // per frame: pointwise perceptron then a symmetric max pool
    ad::Var encode_pointcloud_g(ad::Tape& t, const Mat& stacked_points, int points_per_frame,
                                bool frozen = false);
    ad::Var encode_imu_g(ad::Tape& t, const Mat& rows, bool frozen = false);
    std::pair<ad::Var, ad::Var> map_latent_g(ad::Tape& t, ad::Var feats, bool frozen = false);
    ad::Var estimate_shape_g(ad::Tape& t, ad::Var feats, bool frozen = false);
};

// first-frame centroid used to centre a clip's point clouds
Vec3 clip_center(const sensim::SensorClip& clip);
// stacked (T*P) x 3 input points, centred when the config says so
Mat stacked_inputs(const sensim::SensorClip& clip, const ReuseConfig& cfg);

// ---- numeric wrappers ----
Mat encode_pointcloud(ReuseNet& net, const std::vector<Mat>& frames);
Mat encode_imu(ReuseNet& net, const std::vector<sensim::ImuFrame>& frames);
prior::GaussianSeq map_latent(ReuseNet& net, const Mat& feats);
Vec estimate_shape(ReuseNet& net, const Mat& feats);

// Eq-style weighted shape loss: weights (11-i)/10 for i = 1..10
double beta_loss(const Vec& beta, const Vec& beta_hat);
ad::Var beta_loss_g(ad::Tape& t, ad::Var beta_hat, const Vec& beta_gt);

// KL(target || predicted); target comes from the frozen prior on
// ground-truth motion parameters with no masking
double reuse_kl(const prior::GaussianSeq& target, const prior::GaussianSeq& pred);

struct ReuseTrainConfig {
    int epochs = 100;
    int batch = 8;
    double lr = 1e-4;
    double decay1 = 0.6, decay2 = 0.85;
    uint64_t seed = 1;
    prior::LossWeights weights;  // recon terms
    double w_kl_reuse = 1e-3;
    double w_beta = 1.0;
    int log_every = 10;
};

prior::json reuse_train_config_to_json(const ReuseTrainConfig& c);
ReuseTrainConfig reuse_train_config_from_json(const prior::json& j);

struct ReuseLogRecord {
    long step = 0;
    int epoch = 0;
    double lr = 0, total = 0, recon = 0, kl = 0, beta = 0;
};

struct ReuseTrainLog {
    std::vector<ReuseLogRecord> records;
    std::string to_jsonl() const;
};

class ReuseTrainer {
public:
    ReuseTrainer(ReuseNet& net, prior::PriorNet& frozen, const body::BodyModel& model,
                 const ReuseTrainConfig& cfg);

    // trains on paired clips; asserts the frozen prior is byte-identical
    // before and after
    void run(const std::vector<sensim::SensorClip>& clips);
    void run_epochs(const std::vector<sensim::SensorClip>& clips, int n_epochs);

    ReuseNet& net;
    prior::PriorNet& frozen;
    const body::BodyModel& model;
    ReuseTrainConfig cfg;
    nn::Adam adam;
    Rng rng;
    long step = 0;
    int epoch = 0;
    ReuseTrainLog log;

private:
    struct ClipCache {
        prior::GtCache gt;
        Mat inputs;  // stacked points or imu rows
        int points_per_frame = 0;
        prior::GaussianSeq target;  // frozen-prior distribution on gt
    };
    const ClipCache& cache_for(const sensim::SensorClip* clip);
    double train_step(const std::vector<const sensim::SensorClip*>& batch, double lr,
                      ReuseLogRecord& rec);
    std::map<const sensim::SensorClip*, ClipCache> cache_;
};

// one clip's objective with fixed noise (shared by trainer and tests)
ad::Var reuse_loss_g(ad::Tape& t, ReuseNet& net, prior::PriorNet& frozen,
                     const body::BodyModel& model, const prior::GtCache& gt,
                     const Mat& inputs, int points_per_frame,
                     const prior::GaussianSeq& target, const ReuseTrainConfig& cfg,
                     const Mat& eps, ad::Var* recon_out = nullptr, ad::Var* kl_out = nullptr,
                     ad::Var* beta_out = nullptr);

// encode -> latent means -> frozen decode -> pose parameters
body::MotionSequence estimate_motion(ReuseNet& net, prior::PriorNet& frozen,
                                     const sensim::SensorClip& clip,
                                     const Vec3& anchor = Vec3::Zero(),
                                     const Vec* beta_override = nullptr);

void save_reuse_checkpoint(const std::string& path, ReuseNet& net, const nn::Adam& adam,
                           uint64_t prior_hash, const prior::json& config_echo,
                           uint64_t seed, int epoch, const std::string& rng_state);

struct LoadedReuse {
    ReuseNet net;
    prior::json config_echo;
    uint64_t seed = 0;
    int epoch = 0;
    std::string rng_state;
    std::vector<Mat> adam_m, adam_v;
    long adam_steps = 0;
    uint64_t prior_hash = 0;
};

// expected_prior_hash != 0 enforces that the adapter was trained against
// exactly that prior checkpoint
LoadedReuse load_reuse_checkpoint(const std::string& path, uint64_t expected_prior_hash = 0);

}  // namespace mopri::reuse
