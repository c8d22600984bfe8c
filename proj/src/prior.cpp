#include "mopri/prior.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "mopri/body_diff.hpp"
#include "mopri/dataio.hpp"
#include "mopri/rotconv.hpp"

namespace mopri::prior {

json prior_config_to_json(const PriorConfig& c) {
    return json{{"joints", c.joints},
                {"d_z", c.d_z},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},
                {"head_hidden", c.head_hidden},
                {"expander_hidden", c.expander_hidden},
                {"expander_out", c.expander_out},
                {"logvar_min", c.logvar_min},
                {"logvar_max", c.logvar_max},
                {"translation_repr", motrep::repr_name(c.repr)}};
}

PriorConfig prior_config_from_json(const json& j) {
    PriorConfig c;
    c.joints = j.at("joints");
    c.d_z = j.at("d_z");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.head_hidden = j.at("head_hidden");
    c.expander_hidden = j.at("expander_hidden");
    c.expander_out = j.at("expander_out");
    c.logvar_min = j.at("logvar_min");
    c.logvar_max = j.at("logvar_max");
    c.repr = motrep::parse_repr(j.at("translation_repr"));
    return c;
}

PriorNet::PriorNet(const PriorConfig& c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    expander = motrep::DeltaExpander(c.expander_hidden, c.expander_out, rng);
    encoder = nn::Transformer("enc", c.m_width(), c.d_z, c.d_ff, c.n_layers, c.n_heads, rng);
    posterior_head = nn::Mlp2("post", c.m_width() + c.d_z, c.head_hidden, 2 * c.d_z, rng);
    prior_head = nn::Mlp2("prior", c.d_z, c.head_hidden, 2 * c.d_z, rng);
    decoder = nn::Transformer("dec", c.d_z, c.d_z, c.d_ff, c.n_layers, c.n_heads, rng);
    theta_head = nn::Linear("theta_head", c.d_z, 6 * c.joints, rng);
    trans_head = nn::Linear("trans_head", c.d_z, 3, rng);
    // start the pose output at the identity rotation so Gram-Schmidt on
    // the predicted 6D blocks is well-conditioned from the first step
    for (int k = 0; k < c.joints; ++k) {
        theta_head.b.value(0, 6 * k) = 1.0;
        theta_head.b.value(0, 6 * k + 4) = 1.0;
    }
    // start both distributions confident: large sampling noise at
    // init drowns the latent signal and stalls reconstruction
    for (int d = 0; d < c.d_z; ++d) {
        posterior_head.l2.b.value(0, c.d_z + d) = -4.0;
        prior_head.l2.b.value(0, c.d_z + d) = -4.0;
    }
}

std::vector<ad::Param*> PriorNet::params() {
    std::vector<ad::Param*> ps;
    expander.collect(ps);
    encoder.collect(ps);
    posterior_head.collect(ps);
    prior_head.collect(ps);
    decoder.collect(ps);
    theta_head.collect(ps);
    trans_head.collect(ps);
    return ps;
}

uint64_t PriorNet::checksum() {
    uint64_t h = 14695981039346656037ull;
    for (const ad::Param* p : params())
        h = fnv1a(p->value.data(), sizeof(double) * p->value.size(), h);
    return h;
}

ad::Var PriorNet::encode_g(ad::Tape& t, ad::Var m, const std::vector<char>& mask,
                           bool frozen) {
    if (static_cast<Eigen::Index>(mask.size()) != m.rows())
        throw std::invalid_argument("encode: mask length != frame count");
    bool any_open = false;
    for (char c : mask) any_open = any_open || !c;
    if (!any_open) throw std::invalid_argument("encode: all frames masked");
    // zero-fill masked rows so values cannot leak past the key mask
    Vec keep(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) keep[i] = mask[i] ? 0.0 : 1.0;
    ad::Var x = ad::rows_scale_const(m, keep);
    return encoder.apply(t, x, &mask, frozen);
}

namespace {

std::pair<ad::Var, ad::Var> split_gaussian(ad::Var packed, int d_z, double lo, double hi) {
    ad::Var mean = ad::slice_cols(packed, 0, d_z);
    ad::Var logvar = ad::clamp_(ad::slice_cols(packed, d_z, d_z), lo, hi);
    return {mean, logvar};
}

}  // namespace

std::pair<ad::Var, ad::Var> PriorNet::posterior_g(ad::Tape& t, ad::Var m, ad::Var zp,
                                                  bool frozen) {
    ad::Var packed = posterior_head.apply(t, ad::concat_cols({m, zp}), frozen);
    return split_gaussian(packed, cfg.d_z, cfg.logvar_min, cfg.logvar_max);
}

std::pair<ad::Var, ad::Var> PriorNet::prior_g(ad::Tape& t, ad::Var zp, bool frozen) {
    ad::Var packed = prior_head.apply(t, zp, frozen);
    return split_gaussian(packed, cfg.d_z, cfg.logvar_min, cfg.logvar_max);
}

std::pair<ad::Var, ad::Var> PriorNet::decode_g(ad::Tape& t, ad::Var z, bool frozen) {
    ad::Var feats = decoder.apply(t, z, nullptr, frozen);
    return {theta_head.apply(t, feats, frozen), trans_head.apply(t, feats, frozen)};
}

std::vector<char> no_mask(int t_frames) { return std::vector<char>(t_frames, 0); }

Mat encode(PriorNet& net, const Mat& m, const std::vector<char>& mask) {
    ad::Tape t;
    return net.encode_g(t, t.constant(m), mask, true).val();
}

GaussianSeq posterior(PriorNet& net, const Mat& m, const Mat& zp) {
    ad::Tape t;
    auto [mean, lv] = net.posterior_g(t, t.constant(m), t.constant(zp), true);
    return {mean.val(), lv.val()};
}

GaussianSeq prior_dist(PriorNet& net, const Mat& zp) {
    ad::Tape t;
    auto [mean, lv] = net.prior_g(t, t.constant(zp), true);
    return {mean.val(), lv.val()};
}

Mat sample(const GaussianSeq& g, Rng& rng) {
    Mat eps(g.mean.rows(), g.mean.cols());
    for (Eigen::Index i = 0; i < eps.rows(); ++i)
        for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.gauss();
    return g.mean + (0.5 * g.logvar).array().exp().matrix().cwiseProduct(eps);
}

std::pair<Mat, Mat> decode(PriorNet& net, const Mat& z) {
    ad::Tape t;
    auto [th, tr] = net.decode_g(t, t.constant(z), true);
    return {th.val(), tr.val()};
}

double kl_divergence(const GaussianSeq& q, const GaussianSeq& p) {
    ad::Tape t;
    return ad::scalar(kl_g(t, t.constant(q.mean), t.constant(q.logvar), t.constant(p.mean),
                           t.constant(p.logvar)));
}

ad::Var kl_g(ad::Tape& t, ad::Var qm, ad::Var qlv, ad::Var pm, ad::Var plv) {
    ad::Var d = ad::sub(qlv, plv);
    ad::Var ratio = ad::exp_(d);
    ad::Var md = ad::sub(qm, pm);
    ad::Var maha = ad::cmul(ad::cmul(md, md), ad::exp_(ad::neg(plv)));
    ad::Var inner = ad::add(ad::add(ratio, maha), ad::add_scalar(ad::neg(d), -1.0));
    return ad::scale(ad::sum(inner), 0.5 / static_cast<double>(qm.rows()));
}

GtCache make_gt_cache(const body::BodyModel& model, const body::MotionSequence& seq,
                      motrep::TranslationRepr repr) {
    GtCache c;
    c.frames = seq.frames();
    c.theta6d = motrep::theta_to_6d(seq);
    c.trans_in = motrep::translation_input(seq, repr);
    c.x = seq.x;
    c.dx = motrep::compute_delta_x(seq.x);
    c.joints_jmajor = bodyg::gt_joints_jmajor(model, seq);
    c.verts_fmajor = bodyg::gt_verts_fmajor(model, seq);
    c.beta = seq.beta;
    return c;
}

ReconGraphTerms recon_loss_g(ad::Tape& t, const body::BodyModel& model, ad::Var theta6d_pred,
                             ad::Var trans_pred, ad::Var beta_pred, const GtCache& gt,
                             motrep::TranslationRepr repr, const LossWeights& w) {
    const int tf = gt.frames;
    const int j = model.n_joints();

    ReconGraphTerms out;

    // pose parameters: squared 6D residual summed per joint, averaged
    // over frames and joints
    ad::Var d6 = ad::sub(theta6d_pred, t.constant(gt.theta6d));
    out.theta = ad::scale(ad::sum(ad::cmul(d6, d6)), 1.0 / (tf * j));

    // angular velocity: consecutive-frame 6D differences
    auto row_diff = [&](ad::Var a) {
        return ad::sub(ad::slice_rows(a, 1, a.rows() - 1), ad::slice_rows(a, 0, a.rows() - 1));
    };
    ad::Var dv = ad::sub(row_diff(theta6d_pred),
                         t.constant(Mat(gt.theta6d.bottomRows(tf - 1) -
                                        gt.theta6d.topRows(tf - 1))));
    out.dtheta = ad::scale(ad::sum(ad::cmul(dv, dv)), 1.0 / ((tf - 1) * j));

    // translations
    ad::Var x_pred, dx_pred;
    if (motrep::repr_is_delta(repr)) {
        Vec first_zero = Vec::Ones(tf);
        first_zero[0] = 0.0;
        dx_pred = ad::rows_scale_const(trans_pred, first_zero);
        Mat anchor_row = gt.x.row(0);
        x_pred = ad::add_rowvec(ad::cumsum_rows(dx_pred), t.constant(anchor_row));
        ad::Var ddx = ad::sub(dx_pred, t.constant(gt.dx));
        out.dx = ad::scale(ad::sum(ad::cmul(ddx, ddx)), 1.0 / tf);
    } else {
        x_pred = trans_pred;
        dx_pred = row_diff(trans_pred);
        ad::Var ddx = ad::sub(dx_pred, t.constant(Mat(gt.dx.bottomRows(tf - 1))));
        out.dx = ad::scale(ad::sum(ad::cmul(ddx, ddx)), 1.0 / (tf - 1));
    }
    ad::Var dxm = ad::sub(x_pred, t.constant(gt.x));
    out.x = ad::scale(ad::sum(ad::cmul(dxm, dxm)), 1.0 / tf);

    // geometry through the body model
    std::vector<ad::Var> blocks = bodyg::sixd_blocks(t, theta6d_pred, j);
    const bool want_verts = w.verts != 0.0;
    bodyg::FkResult fk = bodyg::fk_lbs(t, model, blocks, x_pred, beta_pred, want_verts);
    ad::Var dj = ad::sub(fk.joints, t.constant(gt.joints_jmajor));
    out.joints = ad::scale(ad::sum(ad::cmul(dj, dj)), 1.0 / (tf * j));
    if (want_verts) {
        ad::Var dvv = ad::sub(fk.verts, t.constant(gt.verts_fmajor));
        out.verts = ad::scale(ad::sum(ad::cmul(dvv, dvv)), 1.0 / (tf * model.n_vertices()));
    } else {
        out.verts = t.constant(Mat::Zero(1, 1));
    }

    out.total = ad::add(
        ad::add(ad::add(ad::scale(out.theta, w.theta), ad::scale(out.dtheta, w.dtheta)),
                ad::add(ad::scale(out.x, w.x), ad::scale(out.dx, w.dx))),
        ad::add(ad::scale(out.joints, w.joints), ad::scale(out.verts, w.verts)));
    return out;
}

ReconTerms recon_loss(const body::BodyModel& model, const Mat& theta6d_pred,
                      const Mat& trans_pred, const body::MotionSequence& gt,
                      motrep::TranslationRepr repr, const LossWeights& w) {
    ad::Tape t;
    const GtCache cache = make_gt_cache(model, gt, repr);
    ReconGraphTerms g = recon_loss_g(t, model, t.constant(theta6d_pred),
                                     t.constant(trans_pred),
                                     t.constant(Mat(gt.beta.transpose())), cache, repr, w);
    ReconTerms r;
    r.theta = ad::scalar(g.theta);
    r.dtheta = ad::scalar(g.dtheta);
    r.x = ad::scalar(g.x);
    r.dx = ad::scalar(g.dx);
    r.joints = ad::scalar(g.joints);
    r.verts = ad::scalar(g.verts);
    r.total = ad::scalar(g.total);
    return r;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch", c.batch},
                {"lr", c.lr},
                {"decay1", c.decay1},
                {"decay2", c.decay2},
                {"r_mask", c.r_mask},
                {"keyframe_mask_prob", c.keyframe_mask_prob},
                {"prior_path_prob", c.prior_path_prob},
                {"seed", c.seed},
                {"log_every", c.log_every},
                {"weights",
                 {{"theta", c.weights.theta},
                  {"dtheta", c.weights.dtheta},
                  {"x", c.weights.x},
                  {"dx", c.weights.dx},
                  {"joints", c.weights.joints},
                  {"verts", c.weights.verts},
                  {"kl_prior", c.weights.kl_prior}}}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.batch = j.at("batch");
    c.lr = j.at("lr");
    c.decay1 = j.at("decay1");
    c.decay2 = j.at("decay2");
    c.r_mask = j.at("r_mask");
    c.keyframe_mask_prob = j.value("keyframe_mask_prob", 0.0);
    c.prior_path_prob = j.value("prior_path_prob", 0.0);
    c.seed = j.at("seed");
    c.log_every = j.at("log_every");
    const json& w = j.at("weights");
    c.weights.theta = w.at("theta");
    c.weights.dtheta = w.at("dtheta");
    c.weights.x = w.at("x");
    c.weights.dx = w.at("dx");
    c.weights.joints = w.at("joints");
    c.weights.verts = w.at("verts");
    c.weights.kl_prior = w.at("kl_prior");
    return c;
}

std::string TrainLog::to_jsonl() const {
    std::ostringstream os;
    for (const LogRecord& r : records) {
        json j{{"step", r.step},
               {"epoch", r.epoch},
               {"lr", r.lr},
               {"loss", r.total},
               {"kl", r.kl},
               {"per_dim_kl", r.per_dim_kl},
               {"theta", r.recon.theta},
               {"dtheta", r.recon.dtheta},
               {"x", r.recon.x},
               {"dx", r.recon.dx},
               {"joints", r.recon.joints},
               {"verts", r.recon.verts}};
        os << j.dump() << "\n";
    }
    return os.str();
}

PriorTrainer::PriorTrainer(PriorNet& net_, const body::BodyModel& model_,
                           const TrainConfig& cfg_)
    : net(net_), model(model_), cfg(cfg_), adam(net_.params()), rng(cfg_.seed) {}

void PriorTrainer::run(const std::vector<body::MotionSequence>& data) {
    run_epochs(data, cfg.epochs - epoch);
}

void PriorTrainer::run_epochs(const std::vector<body::MotionSequence>& data, int n_epochs) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const int d1 = static_cast<int>(cfg.decay1 * cfg.epochs);
    const int d2 = static_cast<int>(cfg.decay2 * cfg.epochs);
    const int end_epoch = epoch + n_epochs;
    for (; epoch < end_epoch; ++epoch) {
        const double lr = nn::decayed_lr(cfg.lr, epoch, d1, d2);
        // deterministic shuffle, then fixed-size batches
        std::vector<const body::MotionSequence*> order;
        order.reserve(data.size());
        for (const auto& s : data) order.push_back(&s);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        for (size_t ofs = 0; ofs < order.size(); ofs += cfg.batch) {
            std::vector<const body::MotionSequence*> batch(
                order.begin() + ofs,
                order.begin() + std::min(order.size(), ofs + cfg.batch));
            LogRecord rec;
            const double loss = train_step(batch, lr, rec);
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "train_prior: non-finite loss at step " << step << " (theta "
                   << rec.recon.theta << ", x " << rec.recon.x << ", joints "
                   << rec.recon.joints << ", verts " << rec.recon.verts << ", kl " << rec.kl
                   << ")";
                throw NumericalFailure(os.str());
            }
            ++step;
            if (step % cfg.log_every == 0 || step == 1) {
                rec.step = step;
                rec.epoch = epoch;
                rec.lr = lr;
                log.records.push_back(rec);
                if (rec.per_dim_kl < 1e-3 && step >= last_collapse_warn_ + 500) {
                    last_collapse_warn_ = step;
                    std::cerr << "warning: posterior per-dim KL " << rec.per_dim_kl
                              << " nats at step " << step << " (possible collapse)\n";
                }
            }
        }
    }
}

ad::Var prior_loss_g(ad::Tape& tape, PriorNet& net, const body::BodyModel& model,
                     const GtCache& gt, const LossWeights& w, const StepSample& s,
                     ReconGraphTerms* recon_out, ad::Var* kl_out) {
    // visible frames carry the mean increment since the previous visible
    // frame, matching what sparse-keyframe inference can provide
    const Mat trans_in = motrep::repr_is_delta(net.cfg.repr)
                             ? motrep::masked_delta_x(gt.x, s.mask)
                             : gt.trans_in;
    ad::Var m = motrep::build_params_graph(tape, gt.theta6d, trans_in, net.expander,
                                           net.cfg.repr, false);
    ad::Var zp = net.encode_g(tape, m, s.mask, false);
    auto [qm, qlv] = net.posterior_g(tape, m, zp, false);
    auto [pm, plv] = net.prior_g(tape, zp, false);
    ad::Var src_mean = s.from_prior ? pm : qm;
    ad::Var src_logvar = s.from_prior ? plv : qlv;
    ad::Var z = ad::add(src_mean,
                        ad::cmul(ad::exp_(ad::scale(src_logvar, 0.5)), tape.constant(s.eps)));
    auto [theta_pred, trans_pred] = net.decode_g(tape, z, false);
    ReconGraphTerms recon =
        recon_loss_g(tape, model, theta_pred, trans_pred,
                     tape.constant(Mat(gt.beta.transpose())), gt, net.cfg.repr, w);
    ad::Var kl = kl_g(tape, qm, qlv, pm, plv);
    if (recon_out) *recon_out = recon;
    if (kl_out) *kl_out = kl;
    return ad::add(recon.total, ad::scale(kl, w.kl_prior));
}

const GtCache& PriorTrainer::cache_for(const body::MotionSequence* seq) {
    auto it = cache_.find(seq);
    if (it == cache_.end())
        it = cache_.emplace(seq, make_gt_cache(model, *seq, net.cfg.repr)).first;
    return it->second;
}

double PriorTrainer::train_step(const std::vector<const body::MotionSequence*>& batch,
                                double lr, LogRecord& rec) {
    ad::Tape tape;
    std::vector<ad::Var> losses;
    double kl_sum = 0;
    ReconTerms agg;
    for (const body::MotionSequence* seq : batch) {
        const GtCache& gt = cache_for(seq);
        const int tf = gt.frames;
        StepSample s;
        if (cfg.keyframe_mask_prob > 0 && rng.uniform() < cfg.keyframe_mask_prob) {
            // sparse-keyframe regime: a handful of visible frames,
            // always including the first
            s.mask.assign(tf, 1);
            s.mask[0] = 0;
            const int visible = 1 + static_cast<int>(rng.below(4));
            for (int i = 0; i < visible; ++i) s.mask[rng.below(tf)] = 0;
        } else {
            // Bernoulli(r_mask), resampled until a frame stays open
            s.mask.assign(tf, 0);
            while (true) {
                bool any_open = false;
                for (int i = 0; i < tf; ++i) {
                    s.mask[i] = rng.uniform() < cfg.r_mask ? 1 : 0;
                    any_open = any_open || !s.mask[i];
                }
                if (any_open) break;
            }
        }
        s.eps.resize(tf, net.cfg.d_z);
        for (Eigen::Index i = 0; i < s.eps.size(); ++i) s.eps.data()[i] = rng.gauss();
        s.from_prior = cfg.prior_path_prob > 0 && rng.uniform() < cfg.prior_path_prob;

        ReconGraphTerms recon;
        ad::Var kl;
        losses.push_back(prior_loss_g(tape, net, model, gt, cfg.weights, s, &recon, &kl));

        kl_sum += ad::scalar(kl);
        agg.theta += ad::scalar(recon.theta);
        agg.dtheta += ad::scalar(recon.dtheta);
        agg.x += ad::scalar(recon.x);
        agg.dx += ad::scalar(recon.dx);
        agg.joints += ad::scalar(recon.joints);
        agg.verts += ad::scalar(recon.verts);
    }
    ad::Var total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));

    const double b = static_cast<double>(batch.size());
    rec.kl = kl_sum / b;
    rec.per_dim_kl = rec.kl / net.cfg.d_z;
    rec.recon.theta = agg.theta / b;
    rec.recon.dtheta = agg.dtheta / b;
    rec.recon.x = agg.x / b;
    rec.recon.dx = agg.dx / b;
    rec.recon.joints = agg.joints / b;
    rec.recon.verts = agg.verts / b;
    rec.recon.total = ad::scalar(total);
    rec.total = rec.recon.total;

    const double loss = ad::scalar(total);
    if (!std::isfinite(loss)) return loss;
    adam.zero_grad();
    tape.backward(total);
    adam.step(lr);
    return loss;
}

body::MotionSequence reconstruct(PriorNet& net, const body::MotionSequence& seq,
                                 const std::vector<char>* mask, bool sample_latents,
                                 uint64_t sample_seed) {
    const std::vector<char> open = mask ? *mask : no_mask(seq.frames());
    const Mat m = motrep::build_motion_params(seq, net.expander, net.cfg.repr);
    const Mat zp = encode(net, m, open);
    GaussianSeq p = prior_dist(net, zp);
    Mat z = p.mean;
    if (sample_latents) {
        Rng rng(sample_seed);
        z = sample(p, rng);
    }
    auto [theta6d, trans] = decode(net, z);
    return motrep::params_to_pose(theta6d, trans, seq.beta, seq.x.row(0).transpose(),
                                  net.cfg.repr, seq.fps);
}

InbetweenResult inbetween(PriorNet& net, const std::map<int, body::PoseState>& keyframes,
                          int t_frames, double fps) {
    if (keyframes.size() < 2 || !keyframes.count(0))
        throw std::invalid_argument(
            "inbetween: need at least 2 keyframes including frame 0");
    for (const auto& [t, p] : keyframes)
        if (t < 0 || t >= t_frames)
            throw std::invalid_argument("inbetween: keyframe index out of range");

    const int j = net.cfg.joints;
    body::MotionSequence scaffold;
    scaffold.theta = Mat::Zero(t_frames, 3 * j);
    scaffold.x = Mat::Zero(t_frames, 3);
    scaffold.beta = keyframes.begin()->second.beta;
    scaffold.fps = fps;
    std::vector<char> mask(t_frames, 1);
    for (const auto& [t, p] : keyframes) {
        scaffold.set_frame(t, p);
        mask[t] = 0;
    }
    // keyframes carry the mean increment since the previous keyframe,
    // the same convention the training masks use
    Mat trans_in = Mat::Zero(t_frames, 3);
    if (!motrep::repr_is_delta(net.cfg.repr)) {
        for (const auto& [t, p] : keyframes) trans_in.row(t) = p.x.transpose();
    } else {
        trans_in = motrep::masked_delta_x(scaffold.x, mask);
    }

    ad::Tape tape;
    ad::Var m = motrep::build_params_graph(tape, motrep::theta_to_6d(scaffold), trans_in,
                                           net.expander, net.cfg.repr, true);
    const Mat zp = net.encode_g(tape, m, mask, true).val();
    GaussianSeq p = prior_dist(net, zp);
    auto [theta6d, trans] = decode(net, p.mean);

    InbetweenResult out;
    out.mask = mask;
    const Vec3 anchor = keyframes.at(0).x;
    out.decoded = motrep::params_to_pose(theta6d, trans, scaffold.beta, anchor, net.cfg.repr,
                                         fps);
    out.blended = out.decoded;
    for (const auto& [t, pk] : keyframes) out.blended.set_frame(t, pk);
    return out;
}

body::MotionSequence slerp_baseline(const std::map<int, body::PoseState>& keyframes,
                                    int t_frames, double fps) {
    if (keyframes.size() < 2) throw std::invalid_argument("slerp_baseline: need >= 2 keyframes");
    const int j = static_cast<int>(keyframes.begin()->second.theta.rows());
    body::MotionSequence out;
    out.theta.resize(t_frames, 3 * j);
    out.x.resize(t_frames, 3);
    out.beta = keyframes.begin()->second.beta;
    out.fps = fps;
    for (int t = 0; t < t_frames; ++t) {
        auto hi = keyframes.lower_bound(t);
        if (hi != keyframes.end() && hi->first == t) {
            out.set_frame(t, hi->second);
            continue;
        }
        if (hi == keyframes.begin()) {
            out.set_frame(t, hi->second);
            continue;
        }
        if (hi == keyframes.end()) {
            out.set_frame(t, std::prev(hi)->second);
            continue;
        }
        auto lo = std::prev(hi);
        const double u = static_cast<double>(t - lo->first) / (hi->first - lo->first);
        body::PoseState p;
        p.theta.resize(j, 3);
        for (int k = 0; k < j; ++k) {
            const Mat3 ra = rot::aa_to_matrix(lo->second.theta.row(k).transpose());
            const Mat3 rb = rot::aa_to_matrix(hi->second.theta.row(k).transpose());
            p.theta.row(k) = rot::matrix_to_aa(rot::slerp(ra, rb, u)).transpose();
        }
        p.x = (1.0 - u) * lo->second.x + u * hi->second.x;
        p.beta = out.beta;
        out.set_frame(t, p);
    }
    return out;
}

void save_checkpoint(const std::string& path, PriorNet& net, const nn::Adam& adam,
                     const json& config_echo, uint64_t seed, int epoch,
                     const std::string& rng_state) {
    io::Bundle b;
    b.kind = "prior_checkpoint";
    b.meta["version"] = kVersion;
    b.meta["prior_config"] = prior_config_to_json(net.cfg);
    b.meta["config_echo"] = config_echo;
    b.meta["config_hash"] = hex64(fnv1a(config_echo.dump()));
    b.meta["seed"] = seed;
    b.meta["epoch"] = epoch;
    b.meta["rng_state"] = rng_state;
    b.meta["adam_steps"] = adam.steps;
    b.meta["param_hash"] = hex64(net.checksum());
    std::vector<ad::Param*> ps = net.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        b.put("param/" + ps[i]->name, ps[i]->value);
        b.put("adam_m/" + ps[i]->name, adam.m[i]);
        b.put("adam_v/" + ps[i]->name, adam.v[i]);
    }
    io::write_bundle(b, path);
}

LoadedPrior load_checkpoint(const std::string& path) {
    io::Bundle b = io::read_bundle(path);
    if (b.kind != "prior_checkpoint")
        throw io::LoadError("'" + path + "': not a prior checkpoint");
    LoadedPrior out;
    out.net = PriorNet(prior_config_from_json(b.meta.at("prior_config")), 0);
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
    out.param_hash = out.net.checksum();
    const std::string recorded = b.meta.value("param_hash", "");
    if (!recorded.empty() && recorded != hex64(out.param_hash))
        throw io::LoadError("'" + path + "': parameter hash mismatch (corrupt checkpoint)");
    return out;
}

}  // namespace mopri::prior
