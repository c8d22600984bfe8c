#include "mopri/reuse.hpp"

#include <cmath>
#include <sstream>

#include "mopri/dataio.hpp"

namespace mopri::reuse {

using prior::json;

json reuse_config_to_json(const ReuseConfig& c) {
    return json{{"modality", c.modality},
                {"d_feat", c.d_feat},
                {"pc_hidden", c.pc_hidden},
                {"mapper_layers", c.mapper_layers},
                {"mapper_heads", c.mapper_heads},
                {"mapper_ff", c.mapper_ff},
                {"head_hidden", c.head_hidden},
                {"shape_hidden", c.shape_hidden},
                {"t_frames", c.t_frames},
                {"center_pointclouds", c.center_pointclouds},
                {"use_gt_beta", c.use_gt_beta},
                {"logvar_min", c.logvar_min},
                {"logvar_max", c.logvar_max}};
}

ReuseConfig reuse_config_from_json(const json& j) {
    ReuseConfig c;
    c.modality = j.at("modality");
    c.d_feat = j.at("d_feat");
    c.pc_hidden = j.at("pc_hidden");
    c.mapper_layers = j.at("mapper_layers");
    c.mapper_heads = j.at("mapper_heads");
    c.mapper_ff = j.at("mapper_ff");
    c.head_hidden = j.at("head_hidden");
    c.shape_hidden = j.at("shape_hidden");
    c.t_frames = j.at("t_frames");
    c.center_pointclouds = j.at("center_pointclouds");
    c.use_gt_beta = j.at("use_gt_beta");
    c.logvar_min = j.at("logvar_min");
    c.logvar_max = j.at("logvar_max");
    return c;
}

Mat imu_rows(const std::vector<sensim::ImuFrame>& frames) {
    const int t = static_cast<int>(frames.size());
    Mat out(t, 72);
    for (int f = 0; f < t; ++f) {
        for (int s = 0; s < 6; ++s) {
            out.block<1, 3>(f, 12 * s) = frames[f].acc.row(s);
            const Mat3& r = frames[f].ori[s];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) out(f, 12 * s + 3 + 3 * a + b) = r(a, b);
        }
    }
    return out;
}

ReuseNet::ReuseNet(const ReuseConfig& c, int d_z_, int n_shape_, uint64_t seed)
    : cfg(c), d_z(d_z_), n_shape(n_shape_) {
    Rng rng(seed);
    pc1 = nn::Linear("pc/l1", 3, c.pc_hidden, rng);
    pc2 = nn::Linear("pc/l2", c.pc_hidden, c.d_feat, rng);
    imu_enc = nn::Mlp2("imu", 72, c.pc_hidden, c.d_feat, rng);
    mapper = nn::Transformer("map", c.d_feat, d_z_, c.mapper_ff, c.mapper_layers,
                             c.mapper_heads, rng);
    gauss_head = nn::Mlp2("gauss", d_z_, c.head_hidden, 2 * d_z_, rng);
    for (int d = 0; d < d_z_; ++d) gauss_head.l2.b.value(0, d_z_ + d) = -4.0;
    shape_est = nn::Mlp2("shape", c.t_frames * c.d_feat, c.shape_hidden, n_shape_, rng);
}

std::vector<ad::Param*> ReuseNet::params() {
    std::vector<ad::Param*> ps;
    if (cfg.modality == "imu") {
        imu_enc.collect(ps);
    } else {
        pc1.collect(ps);
        pc2.collect(ps);
    }
    mapper.collect(ps);
    gauss_head.collect(ps);
    shape_est.collect(ps);
    return ps;
}

uint64_t ReuseNet::checksum() {
    uint64_t h = 14695981039346656037ull;
    for (const ad::Param* p : params())
        h = fnv1a(p->value.data(), sizeof(double) * p->value.size(), h);
    return h;
}

ad::Var ReuseNet::encode_pointcloud_g(ad::Tape& t, const Mat& stacked_points,
                                      int points_per_frame, bool frozen) {
    if (points_per_frame <= 0 || stacked_points.rows() % points_per_frame != 0)
        throw std::invalid_argument("encode_pointcloud: bad frame partition");
    ad::Var x = t.constant(stacked_points);
    x = ad::gelu(pc1.apply(t, x, frozen));
    x = ad::gelu(pc2.apply(t, x, frozen));
    return ad::colmax_blocks(x, points_per_frame);
}

ad::Var ReuseNet::encode_imu_g(ad::Tape& t, const Mat& rows, bool frozen) {
    if (rows.cols() != 72) throw std::invalid_argument("encode_imu: expected 72 columns");
    return imu_enc.apply(t, t.constant(rows), frozen);
}

std::pair<ad::Var, ad::Var> ReuseNet::map_latent_g(ad::Tape& t, ad::Var feats, bool frozen) {
    ad::Var h = mapper.apply(t, feats, nullptr, frozen);
    ad::Var packed = gauss_head.apply(t, h, frozen);
    ad::Var mean = ad::slice_cols(packed, 0, d_z);
    ad::Var logvar = ad::clamp_(ad::slice_cols(packed, d_z, d_z), cfg.logvar_min,
                                cfg.logvar_max);
    return {mean, logvar};
}

ad::Var ReuseNet::estimate_shape_g(ad::Tape& t, ad::Var feats, bool frozen) {
    if (feats.rows() != cfg.t_frames)
        throw std::invalid_argument("estimate_shape: expected " +
                                    std::to_string(cfg.t_frames) + " frames, got " +
                                    std::to_string(feats.rows()));
    return shape_est.apply(t, ad::flatten_rows(feats), frozen);
}

// Bounding-box midpoint of the first observed frame. Min/max reductions
// are invariant to point order, so centring preserves the encoder's
// bit-exact permutation invariance.
Vec3 clip_center(const sensim::SensorClip& clip) {
    for (size_t f = 0; f < clip.points.size(); ++f) {
        const bool flagged = !clip.frame_flags.empty() && clip.frame_flags[f];
        if (!flagged)
            return 0.5 * (clip.points[f].colwise().minCoeff() +
                          clip.points[f].colwise().maxCoeff())
                       .transpose();
    }
    return Vec3::Zero();
}

Mat stacked_inputs(const sensim::SensorClip& clip, const ReuseConfig& cfg) {
    if (clip.modality == "imu") return imu_rows(clip.imu);
    if (clip.points.empty()) throw std::invalid_argument("clip has no point frames");
    const int p = static_cast<int>(clip.points[0].rows());
    Mat out(static_cast<int>(clip.points.size()) * p, 3);
    for (size_t f = 0; f < clip.points.size(); ++f) {
        if (clip.points[f].rows() == 0)
            throw std::invalid_argument("clip frame " + std::to_string(f) + " is empty");
        out.middleRows(f * p, p) = clip.points[f];
    }
    if (cfg.center_pointclouds) out.rowwise() -= clip_center(clip).transpose();
    return out;
}

Mat encode_pointcloud(ReuseNet& net, const std::vector<Mat>& frames) {
    if (frames.empty()) throw std::invalid_argument("encode_pointcloud: no frames");
    const int p = static_cast<int>(frames[0].rows());
    if (p == 0) throw std::invalid_argument("encode_pointcloud: empty frame");
    Mat stacked(static_cast<int>(frames.size()) * p, 3);
    for (size_t f = 0; f < frames.size(); ++f) {
        if (frames[f].rows() != p)
            throw std::invalid_argument("encode_pointcloud: ragged frames");
        stacked.middleRows(f * p, p) = frames[f];
    }
    ad::Tape t;
    return net.encode_pointcloud_g(t, stacked, p, true).val();
}

Mat encode_imu(ReuseNet& net, const std::vector<sensim::ImuFrame>& frames) {
    ad::Tape t;
    return net.encode_imu_g(t, imu_rows(frames), true).val();
}

prior::GaussianSeq map_latent(ReuseNet& net, const Mat& feats) {
    ad::Tape t;
    auto [m, lv] = net.map_latent_g(t, t.constant(feats), true);
    return {m.val(), lv.val()};
}

Vec estimate_shape(ReuseNet& net, const Mat& feats) {
    ad::Tape t;
    return net.estimate_shape_g(t, t.constant(feats), true).val().row(0).transpose();
}

double beta_loss(const Vec& beta, const Vec& beta_hat) {
    if (beta.size() != beta_hat.size())
        throw std::invalid_argument("beta_loss: length mismatch");
    double acc = 0;
    const int n = static_cast<int>(beta.size());
    for (int i = 0; i < n; ++i) {
        const double w = static_cast<double>(n + 1 - (i + 1)) / n;
        const double d = beta[i] - beta_hat[i];
        acc += w * d * d;
    }
    return acc;
}

ad::Var beta_loss_g(ad::Tape& t, ad::Var beta_hat, const Vec& beta_gt) {
    const int n = static_cast<int>(beta_gt.size());
    Mat wrow(1, n);
    for (int i = 0; i < n; ++i) wrow(0, i) = static_cast<double>(n - i) / n;
    ad::Var d = ad::sub(beta_hat, t.constant(Mat(beta_gt.transpose())));
    return ad::sum(ad::cmul_rowvec(ad::cmul(d, d), t.constant(wrow)));
}

double reuse_kl(const prior::GaussianSeq& target, const prior::GaussianSeq& pred) {
    return prior::kl_divergence(target, pred);
}

json reuse_train_config_to_json(const ReuseTrainConfig& c) {
    json j = prior::train_config_to_json([&] {
        prior::TrainConfig t;
        t.epochs = c.epochs;
        t.batch = c.batch;
        t.lr = c.lr;
        t.decay1 = c.decay1;
        t.decay2 = c.decay2;
        t.seed = c.seed;
        t.weights = c.weights;
        t.log_every = c.log_every;
        return t;
    }());
    j["w_kl_reuse"] = c.w_kl_reuse;
    j["w_beta"] = c.w_beta;
    j.erase("r_mask");
    j.erase("keyframe_mask_prob");
    j.erase("prior_path_prob");
    return j;
}

ReuseTrainConfig reuse_train_config_from_json(const json& j) {
    json base = j;
    base["r_mask"] = 0.0;
    const prior::TrainConfig t = prior::train_config_from_json(base);
    ReuseTrainConfig c;
    c.epochs = t.epochs;
    c.batch = t.batch;
    c.lr = t.lr;
    c.decay1 = t.decay1;
    c.decay2 = t.decay2;
    c.seed = t.seed;
    c.weights = t.weights;
    c.log_every = t.log_every;
    c.w_kl_reuse = j.at("w_kl_reuse");
    c.w_beta = j.at("w_beta");
    return c;
}

std::string ReuseTrainLog::to_jsonl() const {
    std::ostringstream os;
    for (const auto& r : records) {
        json j{{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},
               {"loss", r.total}, {"recon", r.recon}, {"kl", r.kl},
               {"beta", r.beta}};
        os << j.dump() << "\n";
    }
    return os.str();
}

ad::Var reuse_loss_g(ad::Tape& t, ReuseNet& net, prior::PriorNet& frozen,
                     const body::BodyModel& model, const prior::GtCache& gt,
                     const Mat& inputs, int points_per_frame,
                     const prior::GaussianSeq& target, const ReuseTrainConfig& cfg,
                     const Mat& eps, ad::Var* recon_out, ad::Var* kl_out,
                     ad::Var* beta_out) {
    ad::Var feats = net.cfg.modality == "imu"
                        ? net.encode_imu_g(t, inputs, false)
                        : net.encode_pointcloud_g(t, inputs, points_per_frame, false);
    auto [pm, plv] = net.map_latent_g(t, feats, false);
    ad::Var z = ad::add(pm, ad::cmul(ad::exp_(ad::scale(plv, 0.5)), t.constant(eps)));
    auto [theta_pred, trans_pred] = frozen.decode_g(t, z, true);

    ad::Var beta_hat = net.estimate_shape_g(t, feats, false);
    ad::Var beta_for_geometry =
        net.cfg.use_gt_beta ? t.constant(Mat(gt.beta.transpose())) : beta_hat;

    prior::ReconGraphTerms recon =
        prior::recon_loss_g(t, model, theta_pred, trans_pred, beta_for_geometry, gt,
                            frozen.cfg.repr, cfg.weights);
    ad::Var kl = prior::kl_g(t, t.constant(target.mean), t.constant(target.logvar), pm, plv);
    ad::Var lb = beta_loss_g(t, beta_hat, gt.beta);

    if (recon_out) *recon_out = recon.total;
    if (kl_out) *kl_out = kl;
    if (beta_out) *beta_out = lb;
    return ad::add(ad::add(recon.total, ad::scale(kl, cfg.w_kl_reuse)),
                   ad::scale(lb, cfg.w_beta));
}

ReuseTrainer::ReuseTrainer(ReuseNet& net_, prior::PriorNet& frozen_,
                           const body::BodyModel& model_, const ReuseTrainConfig& cfg_)
    : net(net_), frozen(frozen_), model(model_), cfg(cfg_), adam(net_.params()),
      rng(cfg_.seed) {
    if (net.d_z != frozen.cfg.d_z)
        throw ConfigError("adapter latent width " + std::to_string(net.d_z) +
                          " != prior latent width " + std::to_string(frozen.cfg.d_z));
    if (net.cfg.t_frames <= 0) throw ConfigError("adapter window length must be positive");
}

const ReuseTrainer::ClipCache& ReuseTrainer::cache_for(const sensim::SensorClip* clip) {
    auto it = cache_.find(clip);
    if (it != cache_.end()) return it->second;
    ClipCache c;
    c.gt = prior::make_gt_cache(model, clip->source, frozen.cfg.repr);
    c.inputs = stacked_inputs(*clip, net.cfg);
    c.points_per_frame =
        clip->modality == "imu" ? 0 : static_cast<int>(clip->points[0].rows());
    // frozen-prior target on ground-truth motion parameters, no masking
    const Mat m = motrep::build_motion_params(clip->source, frozen.expander, frozen.cfg.repr);
    const Mat zp = prior::encode(frozen, m, prior::no_mask(clip->source.frames()));
    c.target = prior::prior_dist(frozen, zp);
    return cache_.emplace(clip, std::move(c)).first->second;
}

void ReuseTrainer::run(const std::vector<sensim::SensorClip>& clips) {
    run_epochs(clips, cfg.epochs - epoch);
}

void ReuseTrainer::run_epochs(const std::vector<sensim::SensorClip>& clips, int n_epochs) {
    if (clips.empty()) throw std::invalid_argument("train_reuse: empty clip set");
    for (const auto& c : clips)
        if (c.source.frames() == 0)
            throw std::invalid_argument("train_reuse: clip '" + c.id +
                                        "' has no paired motion");
    const uint64_t frozen_before = frozen.checksum();
    const int d1 = static_cast<int>(cfg.decay1 * cfg.epochs);
    const int d2 = static_cast<int>(cfg.decay2 * cfg.epochs);
    const int end_epoch = epoch + n_epochs;
    for (; epoch < end_epoch; ++epoch) {
        const double lr = nn::decayed_lr(cfg.lr, epoch, d1, d2);
        std::vector<const sensim::SensorClip*> order;
        for (const auto& c : clips) order.push_back(&c);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        for (size_t ofs = 0; ofs < order.size(); ofs += cfg.batch) {
            std::vector<const sensim::SensorClip*> batch(
                order.begin() + ofs,
                order.begin() + std::min(order.size(), ofs + cfg.batch));
            ReuseLogRecord rec;
            const double loss = train_step(batch, lr, rec);
            if (!std::isfinite(loss))
                throw NumericalFailure("train_reuse: non-finite loss at step " +
                                       std::to_string(step));
            ++step;
            if (step % cfg.log_every == 0 || step == 1) {
                rec.step = step;
                rec.epoch = epoch;
                rec.lr = lr;
                log.records.push_back(rec);
            }
        }
    }
    if (frozen.checksum() != frozen_before)
        throw std::logic_error("frozen prior parameters changed during adapter training");
    for (ad::Param* p : frozen.params())
        if (p->grad.cwiseAbs().maxCoeff() != 0.0)
            throw std::logic_error("frozen prior accumulated gradients during training");
}

double ReuseTrainer::train_step(const std::vector<const sensim::SensorClip*>& batch,
                                double lr, ReuseLogRecord& rec) {
    ad::Tape tape;
    std::vector<ad::Var> losses;
    double recon_sum = 0, kl_sum = 0, beta_sum = 0;
    for (const sensim::SensorClip* clip : batch) {
        const ClipCache& c = cache_for(clip);
        Mat eps(c.gt.frames, net.d_z);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.gauss();
        ad::Var recon, kl, lb;
        losses.push_back(reuse_loss_g(tape, net, frozen, model, c.gt, c.inputs,
                                      c.points_per_frame, c.target, cfg, eps, &recon, &kl,
                                      &lb));
        recon_sum += ad::scalar(recon);
        kl_sum += ad::scalar(kl);
        beta_sum += ad::scalar(lb);
    }
    ad::Var total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));

    const double b = static_cast<double>(batch.size());
    rec.total = ad::scalar(total);
    rec.recon = recon_sum / b;
    rec.kl = kl_sum / b;
    rec.beta = beta_sum / b;

    const double loss = rec.total;
    if (!std::isfinite(loss)) return loss;
    adam.zero_grad();
    tape.backward(total);
    adam.step(lr);
    return loss;
}

body::MotionSequence estimate_motion(ReuseNet& net, prior::PriorNet& frozen,
                                     const sensim::SensorClip& clip, const Vec3& anchor,
                                     const Vec* beta_override) {
    ad::Tape t;
    const Mat inputs = stacked_inputs(clip, net.cfg);
    ad::Var feats = net.cfg.modality == "imu"
                        ? net.encode_imu_g(t, inputs, true)
                        : net.encode_pointcloud_g(
                              t, inputs, static_cast<int>(clip.points[0].rows()), true);
    auto [pm, plv] = net.map_latent_g(t, feats, true);
    auto [theta6d, trans] = frozen.decode_g(t, pm, true);
    Vec beta_hat = beta_override
                       ? *beta_override
                       : Vec(net.estimate_shape_g(t, feats, true).val().row(0).transpose());
    return motrep::params_to_pose(theta6d.val(), trans.val(), beta_hat, anchor,
                                  frozen.cfg.repr, clip.source.fps);
}

void save_reuse_checkpoint(const std::string& path, ReuseNet& net, const nn::Adam& adam,
                           uint64_t prior_hash, const json& config_echo, uint64_t seed,
                           int epoch, const std::string& rng_state) {
    io::Bundle b;
    b.kind = "reuse_checkpoint";
    b.meta["version"] = kVersion;
    b.meta["reuse_config"] = reuse_config_to_json(net.cfg);
    b.meta["d_z"] = net.d_z;
    b.meta["n_shape"] = net.n_shape;
    b.meta["prior_hash"] = hex64(prior_hash);
    b.meta["config_echo"] = config_echo;
    b.meta["config_hash"] = hex64(fnv1a(config_echo.dump()));
    b.meta["seed"] = seed;
    b.meta["epoch"] = epoch;
    b.meta["rng_state"] = rng_state;
    b.meta["adam_steps"] = adam.steps;
    std::vector<ad::Param*> ps = net.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        b.put("param/" + ps[i]->name, ps[i]->value);
        b.put("adam_m/" + ps[i]->name, adam.m[i]);
        b.put("adam_v/" + ps[i]->name, adam.v[i]);
    }
    io::write_bundle(b, path);
}

LoadedReuse load_reuse_checkpoint(const std::string& path, uint64_t expected_prior_hash) {
    io::Bundle b = io::read_bundle(path);
    if (b.kind != "reuse_checkpoint")
        throw io::LoadError("'" + path + "': not a reuse checkpoint");
    LoadedReuse out;
    out.prior_hash = std::stoull(b.meta.at("prior_hash").get<std::string>(), nullptr, 16);
    if (expected_prior_hash != 0 && out.prior_hash != expected_prior_hash)
        throw io::LoadError("'" + path + "': adapter was trained against prior " +
                            b.meta.at("prior_hash").get<std::string>() +
                            " but a different prior checkpoint was supplied");
    out.net = ReuseNet(reuse_config_from_json(b.meta.at("reuse_config")),
                       b.meta.at("d_z"), b.meta.at("n_shape"), 0);
    out.config_echo = b.meta.value("config_echo", json::object());
    out.seed = b.meta.value("seed", 0ull);
    out.epoch = b.meta.value("epoch", 0);
    out.rng_state = b.meta.value("rng_state", "");
    out.adam_steps = b.meta.value("adam_steps", 0l);
    for (ad::Param* p : out.net.params()) {
        p->value = b.get_f64("param/" + p->name);
        p->grad = Mat::Zero(p->value.rows(), p->value.cols());
        out.adam_m.push_back(b.get_f64("adam_m/" + p->name));
        out.adam_v.push_back(b.get_f64("adam_v/" + p->name));
    }
    return out;
}

}  // namespace mopri::reuse
