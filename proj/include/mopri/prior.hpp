#pragma once

// Spatio-temporal motion prior: transformer encoder over motion
// parameters, per-timestep posterior/prior Gaussian heads, transformer
// decoder back to motion parameters, losses, random temporal masking,
// the training loop, and mask-driven inbetweening.

#include <json.hpp>
#include <map>
#include <optional>
#include <vector>

#include "mopri/body.hpp"
#include "mopri/motrep.hpp"
#include "mopri/nn.hpp"

namespace mopri::prior {

using json = nlohmann::json;

struct GaussianSeq {
    Mat mean, logvar;  // T x D_z, logvar clamped to [-15, 15]
};

struct LossWeights {
    double theta = 1, dtheta = 1, x = 1, dx = 1, joints = 1, verts = 1;
    double kl_prior = 1e-3;
};

struct PriorConfig {
    int joints = 24;
    int d_z = 256;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int head_hidden = 256;      // posterior/prior head hidden width
    int expander_hidden = 144;
    int expander_out = 144;
    double logvar_min = -15, logvar_max = 15;
    motrep::TranslationRepr repr = motrep::TranslationRepr::delta_144;

    int m_width() const { return motrep::param_width(joints, repr, expander_out); }
};

json prior_config_to_json(const PriorConfig& c);
PriorConfig prior_config_from_json(const json& j);

struct PriorNet {
    PriorConfig cfg;
    motrep::DeltaExpander expander;
    nn::Transformer encoder;
    nn::Mlp2 posterior_head;  // (m_width + d_z) -> 2 d_z
    nn::Mlp2 prior_head;      // d_z -> 2 d_z
    nn::Transformer decoder;
    nn::Linear theta_head;    // d_z -> 6J
    nn::Linear trans_head;    // d_z -> 3

    PriorNet() = default;
    PriorNet(const PriorConfig& cfg, uint64_t seed);

    std::vector<ad::Param*> params();
    uint64_t checksum();

    // graph pieces; frozen=true treats all parameters as constants
    ad::Var encode_g(ad::Tape& t, ad::Var m, const std::vector<char>& mask,
                     bool frozen = false);
    std::pair<ad::Var, ad::Var> posterior_g(ad::Tape& t, ad::Var m, ad::Var zp,
                                            bool frozen = false);
    std::pair<ad::Var, ad::Var> prior_g(ad::Tape& t, ad::Var zp, bool frozen = false);
    std::pair<ad::Var, ad::Var> decode_g(ad::Tape& t, ad::Var z, bool frozen = false);
};

// ---- numeric operations ----

std::vector<char> no_mask(int t_frames);

// Masked frames contribute nothing as attention keys; all frames still
// receive features. Throws std::invalid_argument when all are masked.
Mat encode(PriorNet& net, const Mat& m, const std::vector<char>& mask);

GaussianSeq posterior(PriorNet& net, const Mat& m, const Mat& zp);
GaussianSeq prior_dist(PriorNet& net, const Mat& zp);

// mean + exp(logvar/2) * eps, eps drawn from rng
Mat sample(const GaussianSeq& g, Rng& rng);

std::pair<Mat, Mat> decode(PriorNet& net, const Mat& z);  // theta6d, trans

// closed-form diagonal KL(q || p), summed over dims, averaged over frames
double kl_divergence(const GaussianSeq& q, const GaussianSeq& p);
ad::Var kl_g(ad::Tape& t, ad::Var qm, ad::Var qlv, ad::Var pm, ad::Var plv);

struct ReconTerms {
    double theta = 0, dtheta = 0, x = 0, dx = 0, joints = 0, verts = 0, total = 0;
};

struct ReconGraphTerms {
    ad::Var theta, dtheta, x, dx, joints, verts, total;
};

// Ground-truth targets precomputed once per sequence.
struct GtCache {
    int frames = 0;
    Mat theta6d;        // T x 6J
    Mat trans_in;       // T x 3 (dx or x per repr)
    Mat x;              // T x 3
    Mat dx;             // T x 3
    Mat joints_jmajor;  // (J*T) x 3
    Mat verts_fmajor;   // (T*N) x 3
    Vec beta;
};

GtCache make_gt_cache(const body::BodyModel& model, const body::MotionSequence& seq,
                      motrep::TranslationRepr repr);

// Reconstruction loss terms; beta_pred drives the predicted-side body
// geometry (pass ground truth for prior training).
ReconGraphTerms recon_loss_g(ad::Tape& t, const body::BodyModel& model, ad::Var theta6d_pred,
                             ad::Var trans_pred, ad::Var beta_pred, const GtCache& gt,
                             motrep::TranslationRepr repr, const LossWeights& w);

ReconTerms recon_loss(const body::BodyModel& model, const Mat& theta6d_pred,
                      const Mat& trans_pred, const body::MotionSequence& gt,
                      motrep::TranslationRepr repr, const LossWeights& w);

// One sequence's contribution to the training objective: fixed temporal
// mask and reparameterization noise make the graph deterministic.
// from_prior decodes a latent drawn from the prior head instead of the
// posterior, training the inference path directly.
struct StepSample {
    std::vector<char> mask;
    Mat eps;  // T x D_z
    bool from_prior = false;
};

ad::Var prior_loss_g(ad::Tape& t, PriorNet& net, const body::BodyModel& model,
                     const GtCache& gt, const LossWeights& w, const StepSample& s,
                     ReconGraphTerms* recon_out = nullptr, ad::Var* kl_out = nullptr);

// ---- training ----

struct TrainConfig {
    int epochs = 100;
    int batch = 8;
    double lr = 1e-4;
    double decay1 = 0.6, decay2 = 0.85;  // epoch fractions for lr/4, lr/10
    double r_mask = 0.3;
    // fraction of steps that use a sparse-keyframe mask instead of the
    // Bernoulli mask, covering the regime inbetweening runs in
    double keyframe_mask_prob = 0.0;
    // fraction of steps that decode a prior-head sample instead of a
    // posterior sample
    double prior_path_prob = 0.0;
    uint64_t seed = 1;
    LossWeights weights;
    int log_every = 10;
};

json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

struct LogRecord {
    long step = 0;
    int epoch = 0;
    double lr = 0;
    ReconTerms recon;
    double kl = 0;
    double per_dim_kl = 0;
    double total = 0;
};

struct TrainLog {
    std::vector<LogRecord> records;
    std::string to_jsonl() const;
};

class PriorTrainer {
public:
    PriorTrainer(PriorNet& net, const body::BodyModel& model, const TrainConfig& cfg);

    // runs remaining epochs; throws NumericalFailure on non-finite loss
    void run(const std::vector<body::MotionSequence>& data);
    void run_epochs(const std::vector<body::MotionSequence>& data, int n_epochs);

    PriorNet& net;
    const body::BodyModel& model;
    TrainConfig cfg;
    nn::Adam adam;
    Rng rng;
    long step = 0;
    int epoch = 0;
    TrainLog log;

private:
    double train_step(const std::vector<const body::MotionSequence*>& batch, double lr,
                      LogRecord& rec);
    const GtCache& cache_for(const body::MotionSequence* seq);
    std::map<const body::MotionSequence*, GtCache> cache_;
    long last_collapse_warn_ = -1000;
};

// ---- inference ----

body::MotionSequence reconstruct(PriorNet& net, const body::MotionSequence& seq,
                                 const std::vector<char>* mask = nullptr,
                                 bool sample_latents = false, uint64_t sample_seed = 0);

struct InbetweenResult {
    body::MotionSequence blended;  // known frames passed through
    body::MotionSequence decoded;  // raw decoder output
    std::vector<char> mask;        // true on frames the decoder filled
};

InbetweenResult inbetween(PriorNet& net, const std::map<int, body::PoseState>& keyframes,
                          int t_frames, double fps);

body::MotionSequence slerp_baseline(const std::map<int, body::PoseState>& keyframes,
                                    int t_frames, double fps);

// ---- checkpoints ----

void save_checkpoint(const std::string& path, PriorNet& net, const nn::Adam& adam,
                     const json& config_echo, uint64_t seed, int epoch,
                     const std::string& rng_state);

struct LoadedPrior {
    PriorNet net;
    json config_echo;
    uint64_t seed = 0;
    int epoch = 0;
    std::string rng_state;
    std::vector<Mat> adam_m, adam_v;
    long adam_steps = 0;
    uint64_t param_hash = 0;
};

LoadedPrior load_checkpoint(const std::string& path);

}  // namespace mopri::prior
