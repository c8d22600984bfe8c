#include "mopri/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "mopri/dataio.hpp"
#include "mopri/rotconv.hpp"
#include "mopri/toydata.hpp"

namespace mopri::pipe {

namespace fs = std::filesystem;

void save_sequence(const body::MotionSequence& seq, const std::string& path) {
    io::Bundle b;
    b.kind = "motion_sequence";
    b.meta["fps"] = seq.fps;
    b.meta["source_id"] = seq.source_id;
    b.put("theta", seq.theta);
    b.put("x", seq.x);
    Mat beta(1, seq.beta.size());
    beta = seq.beta.transpose();
    b.put("beta", beta);
    io::write_bundle(b, path);
}

body::MotionSequence load_sequence(const std::string& path) {
    io::Bundle b = io::read_bundle(path);
    if (b.kind != "motion_sequence")
        throw io::LoadError("'" + path + "': not a motion sequence");
    body::MotionSequence seq;
    seq.theta = b.get_f64("theta");
    seq.x = b.get_f64("x");
    seq.beta = b.get_f64("beta").row(0).transpose();
    seq.fps = b.meta.at("fps");
    seq.source_id = b.meta.value("source_id", "");
    return seq;
}

void DatasetManifest::add(const ManifestEntry& e) {
    for (const auto& other : entries)
        if (other.id == e.id)
            throw std::invalid_argument("manifest: duplicate id '" + e.id + "'");
    entries.push_back(e);
}

std::vector<const ManifestEntry*> DatasetManifest::select(const std::string& kind,
                                                          const std::string& split,
                                                          const std::string& modality) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.kind != kind) continue;
        if (!split.empty() && e.split != split) continue;
        if (!modality.empty() && e.modality != modality) continue;
        out.push_back(&e);
    }
    return out;
}

json DatasetManifest::to_json() const {
    json items = json::array();
    for (const auto& e : entries)
        items.push_back({{"id", e.id},
                         {"kind", e.kind},
                         {"path", e.path},
                         {"modality", e.modality},
                         {"split", e.split},
                         {"source_id", e.source_id},
                         {"seed", e.seed},
                         {"frames", e.frames}});
    return json{{"header", header}, {"entries", items}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    DatasetManifest m;
    m.header = j.value("header", json::object());
    for (const auto& it : j.at("entries")) {
        ManifestEntry e;
        e.id = it.at("id");
        e.kind = it.at("kind");
        e.path = it.at("path");
        e.modality = it.value("modality", "");
        e.split = it.value("split", "");
        e.source_id = it.value("source_id", "");
        e.seed = it.value("seed", 0ull);
        e.frames = it.value("frames", 0);
        m.add(e);
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    io::write_json(path, m.to_json());
}

DatasetManifest load_manifest(const std::string& path) {
    if (!io::file_exists(path))
        throw MissingArtifact("dataset manifest '" + path +
                              "' not found; run gen-data first");
    return DatasetManifest::from_json(io::read_json(path));
}

body::MotionSequence resample_sequence(const body::MotionSequence& seq, double fps_target) {
    if (seq.fps <= 0) throw std::invalid_argument("resample: source fps unknown");
    if (std::abs(seq.fps - fps_target) < 1e-9) return seq;
    const int j = seq.joints();
    body::MotionSequence out;
    out.beta = seq.beta;
    out.fps = fps_target;
    out.source_id = seq.source_id;

    const double ratio = seq.fps / fps_target;
    const bool integer_ratio = std::abs(ratio - std::round(ratio)) < 1e-9 && ratio >= 1.0;
    if (integer_ratio) {
        const int k = static_cast<int>(std::round(ratio));
        const int n = (seq.frames() + k - 1) / k;
        out.theta.resize(n, 3 * j);
        out.x.resize(n, 3);
        for (int i = 0; i < n; ++i) {
            out.theta.row(i) = seq.theta.row(i * k);
            out.x.row(i) = seq.x.row(i * k);
        }
        return out;
    }

    const double duration = (seq.frames() - 1) / seq.fps;
    const int n = static_cast<int>(std::floor(duration * fps_target)) + 1;
    out.theta.resize(n, 3 * j);
    out.x.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        const double t = i / fps_target * seq.fps;  // source frame coordinate
        const int lo = std::min(static_cast<int>(std::floor(t)), seq.frames() - 1);
        const int hi = std::min(lo + 1, seq.frames() - 1);
        const double u = std::clamp(t - lo, 0.0, 1.0);
        out.x.row(i) = (1.0 - u) * seq.x.row(lo) + u * seq.x.row(hi);
        for (int k = 0; k < j; ++k) {
            const Mat3 a = rot::aa_to_matrix(seq.theta.block<1, 3>(lo, 3 * k).transpose());
            const Mat3 b = rot::aa_to_matrix(seq.theta.block<1, 3>(hi, 3 * k).transpose());
            out.theta.block<1, 3>(i, 3 * k) = rot::matrix_to_aa(rot::slerp(a, b, u)).transpose();
        }
    }
    return out;
}

std::vector<body::MotionSequence> split_by_duration(const body::MotionSequence& seq,
                                                    double min_seconds, double max_seconds) {
    const double duration = seq.frames() / seq.fps;
    if (duration < min_seconds) return {};
    if (duration <= max_seconds) return {seq};
    const int pieces = static_cast<int>(std::ceil(duration / max_seconds));
    const int base = seq.frames() / pieces;
    std::vector<body::MotionSequence> out;
    int start = 0;
    for (int p = 0; p < pieces; ++p) {
        const int len = p + 1 == pieces ? seq.frames() - start : base;
        body::MotionSequence piece;
        piece.theta = seq.theta.middleRows(start, len);
        piece.x = seq.x.middleRows(start, len);
        piece.beta = seq.beta;
        piece.fps = seq.fps;
        piece.source_id = seq.source_id + "#" + std::to_string(p);
        out.push_back(std::move(piece));
        start += len;
    }
    return out;
}

std::vector<body::MotionSequence> window_sequence(const body::MotionSequence& seq, int frames,
                                                  const std::string& mode, int stride) {
    std::vector<body::MotionSequence> out;
    if (seq.frames() < frames) return out;
    const int step = stride > 0 ? stride : frames;
    for (int start = 0; start + frames <= seq.frames(); start += step) {
        body::MotionSequence w;
        w.theta = seq.theta.middleRows(start, frames);
        w.x = seq.x.middleRows(start, frames);
        w.beta = seq.beta;
        w.fps = seq.fps;
        w.source_id = seq.source_id + "@" + std::to_string(start);
        out.push_back(std::move(w));
        if (mode == "leading") break;
    }
    return out;
}

DatasetManifest ingest_motion_corpus(const std::string& src_dir, const std::string& out_dir,
                                     const Config& cfg, IngestStats* stats) {
    if (!fs::exists(src_dir))
        throw MissingArtifact("source directory '" + src_dir + "' not found");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(src_dir))
        if (e.path().extension() == ".seq") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    fs::create_directories(fs::path(out_dir) / "sequences");
    DatasetManifest manifest;
    manifest.header = provenance(cfg);
    IngestStats st;
    int idx = 0;
    for (const auto& f : files) {
        ++st.sources;
        const body::MotionSequence raw = load_sequence(f);
        const body::MotionSequence seq = resample_sequence(raw, cfg.data.fps);
        const auto pieces = split_by_duration(seq);
        if (pieces.empty()) {
            ++st.dropped_short;
            continue;
        }
        st.pieces += static_cast<int>(pieces.size());
        for (const auto& piece : pieces) {
            for (const auto& w :
                 window_sequence(piece, cfg.data.frames, cfg.data.window,
                                 cfg.data.window_stride)) {
                ++st.windows;
                char name[32];
                std::snprintf(name, sizeof(name), "seq_%05d.seq", idx++);
                const std::string rel = std::string("sequences/") + name;
                save_sequence(w, (fs::path(out_dir) / rel).string());
                ManifestEntry e;
                e.id = w.source_id;
                e.kind = "sequence";
                e.path = rel;
                e.split = "train";
                e.source_id = raw.source_id;
                e.frames = w.frames();
                manifest.add(e);
            }
        }
    }
    if (stats) *stats = st;
    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

body::BodyModel build_body(const Config& cfg) {
    if (cfg.body.model == "toy")
        return body::make_toy_model(cfg.body.toy_joints, cfg.body.toy_vertices);
    return body::load_model(cfg.body.model);
}

body::BodyModel load_dataset_body(const std::string& data_root) {
    const std::string path = (fs::path(data_root) / "body_model.bin").string();
    if (!io::file_exists(path))
        throw MissingArtifact("body model '" + path + "' not found; run gen-data first");
    return body::load_model(path);
}

uint64_t clip_seed(const Config& cfg, const std::string& id, const std::string& modality) {
    return fnv1a(id + ":" + modality, cfg.seed ^ 0x9e3779b97f4a7c15ull);
}

void cmd_gen_data(const Config& cfg, const std::string& out_root) {
    fs::create_directories(fs::path(out_root) / "sequences");
    fs::create_directories(fs::path(out_root) / "clips");

    const body::BodyModel model = build_body(cfg);
    body::save_model(model, (fs::path(out_root) / "body_model.bin").string());

    DatasetManifest manifest;
    manifest.header = provenance(cfg);

    auto emit_split = [&](const std::string& split, uint64_t seed, int count, int& seq_idx,
                          int& clip_idx) {
        const auto corpus = toydata::make_corpus(model, seed, count, cfg.data.frames,
                                                 cfg.data.fps, split);
        for (const auto& seq : corpus) {
            char name[32];
            std::snprintf(name, sizeof(name), "seq_%05d.seq", seq_idx++);
            const std::string rel = std::string("sequences/") + name;
            save_sequence(seq, (fs::path(out_root) / rel).string());
            ManifestEntry e;
            e.id = seq.source_id;
            e.kind = "sequence";
            e.path = rel;
            e.split = split;
            e.source_id = seq.source_id;
            e.frames = seq.frames();
            manifest.add(e);

            sensim::SensimConfig scfg = cfg.sensim;
            scfg.t_frames = cfg.data.frames;
            for (const auto& modality : cfg.data.modalities) {
                const uint64_t cs = clip_seed(cfg, seq.source_id, modality);
                sensim::SensorClip clip = sensim::generate_clip(seq, model, modality, scfg, cs);
                char cname[32];
                std::snprintf(cname, sizeof(cname), "clip_%05d.clip", clip_idx++);
                const std::string crel = std::string("clips/") + cname;
                sensim::save_clip(clip, (fs::path(out_root) / crel).string());
                ManifestEntry ce;
                ce.id = clip.id;
                ce.kind = "clip";
                ce.path = crel;
                ce.modality = modality;
                ce.split = split;
                ce.source_id = seq.source_id;
                ce.seed = cs;
                ce.frames = seq.frames();
                manifest.add(ce);
            }
        }
    };

    int seq_idx = 0, clip_idx = 0;
    emit_split("train", cfg.seed, cfg.data.train_sequences, seq_idx, clip_idx);
    emit_split("held", cfg.seed + 1, cfg.data.eval_sequences, seq_idx, clip_idx);
    save_manifest(manifest, (fs::path(out_root) / "manifest.json").string());
}

namespace {

std::vector<body::MotionSequence> load_split_sequences(const DatasetManifest& m,
                                                       const std::string& data_root,
                                                       const std::string& split) {
    std::vector<body::MotionSequence> out;
    for (const ManifestEntry* e : m.select("sequence", split))
        out.push_back(load_sequence((fs::path(data_root) / e->path).string()));
    return out;
}

std::vector<sensim::SensorClip> load_split_clips(const DatasetManifest& m,
                                                 const std::string& data_root,
                                                 const std::string& split,
                                                 const std::string& modality) {
    std::vector<sensim::SensorClip> out;
    for (const ManifestEntry* e : m.select("clip", split, modality))
        out.push_back(sensim::load_clip((fs::path(data_root) / e->path).string()));
    return out;
}

void require_file(const std::string& path, const std::string& what) {
    if (!io::file_exists(path))
        throw MissingArtifact(what + " '" + path + "' not found");
}

}  // namespace

void cmd_train_prior(const Config& cfg, const std::string& data_root,
                     const std::string& out_ckpt) {
    const DatasetManifest manifest =
        load_manifest((fs::path(data_root) / "manifest.json").string());
    const body::BodyModel model = load_dataset_body(data_root);
    const auto train = load_split_sequences(manifest, data_root, "train");
    if (train.empty()) throw MissingArtifact("dataset has no training sequences");

    prior::PriorConfig pc = cfg.prior;
    pc.joints = model.n_joints();
    prior::PriorNet net(pc, cfg.seed);
    prior::PriorTrainer trainer(net, model, cfg.prior_train);
    trainer.run(train);

    prior::save_checkpoint(out_ckpt, net, trainer.adam, cfg.to_json(), cfg.seed,
                           trainer.epoch, trainer.rng.state());
    io::write_text(out_ckpt + ".log.jsonl", trainer.log.to_jsonl());
}

void cmd_train_reuse(const Config& cfg, const std::string& data_root,
                     const std::string& prior_ckpt, const std::string& modality,
                     const std::string& out_ckpt) {
    require_file(prior_ckpt, "prior checkpoint");
    prior::LoadedPrior lp = prior::load_checkpoint(prior_ckpt);
    const DatasetManifest manifest =
        load_manifest((fs::path(data_root) / "manifest.json").string());
    const body::BodyModel model = load_dataset_body(data_root);
    const auto clips = load_split_clips(manifest, data_root, "train", modality);
    if (clips.empty())
        throw MissingArtifact("dataset has no training clips for modality '" + modality +
                              "'");

    reuse::ReuseConfig rc = cfg.reuse_net;
    rc.modality = modality;
    rc.t_frames = cfg.data.frames;
    rc.use_gt_beta = modality == "imu";
    reuse::ReuseNet net(rc, lp.net.cfg.d_z, model.n_shape(), cfg.seed);
    reuse::ReuseTrainer trainer(net, lp.net, model, cfg.reuse_train);
    trainer.run(clips);

    reuse::save_reuse_checkpoint(out_ckpt, net, trainer.adam, lp.param_hash, cfg.to_json(),
                                 cfg.seed, trainer.epoch, trainer.rng.state());
    io::write_text(out_ckpt + ".log.jsonl", trainer.log.to_jsonl());
}

evalm::MetricReport cmd_eval(const Config& cfg, const std::string& data_root,
                             const std::string& prior_ckpt, const std::string& reuse_ckpt,
                             const std::string& modality, const std::string& out_report) {
    require_file(prior_ckpt, "prior checkpoint");
    prior::LoadedPrior lp = prior::load_checkpoint(prior_ckpt);
    const DatasetManifest manifest =
        load_manifest((fs::path(data_root) / "manifest.json").string());
    const body::BodyModel model = load_dataset_body(data_root);

    evalm::MetricReport report;
    report.metadata = provenance(cfg);
    report.metadata["chamfer"] = "bidirectional mean nearest-neighbour, non-squared";
    report.checkpoint_hash = hex64(lp.param_hash);

    if (modality.empty()) {
        report.dataset = data_root + " (held sequences)";
        for (const auto& seq : load_split_sequences(manifest, data_root, "held")) {
            const auto rec = prior::reconstruct(lp.net, seq);
            report.sequence_ids.push_back(seq.source_id);
            report.add("pose", "deg", evalm::pose_error_deg(seq, rec));
            report.add("joint", "cm", evalm::joint_error_cm(seq, rec, model));
            report.add("mesh", "cm", evalm::mesh_error_cm(seq, rec, model));
            report.add("jitter", "km/s^3", evalm::jitter_kms3(rec, model));
            report.add("traj", "cm", (rec.x - seq.x).rowwise().norm().mean() * 100.0);
        }
    } else {
        require_file(reuse_ckpt, "reuse checkpoint");
        reuse::LoadedReuse lr = reuse::load_reuse_checkpoint(reuse_ckpt, lp.param_hash);
        report.dataset = data_root + " (held " + modality + " clips)";
        for (const auto& clip : load_split_clips(manifest, data_root, "held", modality)) {
            const body::MotionSequence& gt = clip.source;
            const Vec3 anchor = gt.x.row(0).transpose();
            const Vec gt_beta = gt.beta;
            const bool use_gt_beta = lr.net.cfg.use_gt_beta;
            const auto est = reuse::estimate_motion(lr.net, lp.net, clip, anchor,
                                                    use_gt_beta ? &gt_beta : nullptr);
            report.sequence_ids.push_back(clip.id);
            report.add("pose", "deg", evalm::pose_error_deg(gt, est));
            report.add("joint", "cm", evalm::joint_error_cm(gt, est, model));
            report.add("mesh", "cm", evalm::mesh_error_cm(gt, est, model));
            report.add("sip", "deg", evalm::sip_error_deg(gt, est, model));
            report.add("angular", "deg", evalm::angular_error_deg(gt, est, model));
            report.add("positional", "cm", evalm::positional_error_cm(gt, est, model));
            report.add("jitter", "km/s^3", evalm::jitter_kms3(est, model));
            if (!clip.points.empty()) {
                double cd = 0;
                for (int f = 0; f < clip.frames(); ++f)
                    cd += evalm::chamfer_cm(body::skin(model, est.frame(f)), clip.points[f]);
                report.add("chamfer", "cm", cd / clip.frames());
            }
        }
    }
    if (!out_report.empty()) {
        io::write_json(out_report, report.to_json());
        io::write_text(out_report + ".txt", report.table());
    }
    return report;
}

json cmd_inbetween(const Config& cfg, const std::string& data_root,
                   const std::string& prior_ckpt, const std::string& sequence_id,
                   std::vector<int> keyframes, const std::string& out_report) {
    require_file(prior_ckpt, "prior checkpoint");
    prior::LoadedPrior lp = prior::load_checkpoint(prior_ckpt);
    const DatasetManifest manifest =
        load_manifest((fs::path(data_root) / "manifest.json").string());
    const body::BodyModel model = load_dataset_body(data_root);

    body::MotionSequence seq;
    bool found = false;
    for (const ManifestEntry* e : manifest.select("sequence")) {
        if (sequence_id.empty() ? e->split == "held" : e->id == sequence_id) {
            seq = load_sequence((fs::path(data_root) / e->path).string());
            found = true;
            break;
        }
    }
    if (!found) throw MissingArtifact("sequence '" + sequence_id + "' not in manifest");

    const int tf = seq.frames();
    if (keyframes.empty()) keyframes = {0, tf - 1};
    std::map<int, body::PoseState> keys;
    for (int k : keyframes) {
        if (k < 0 || k >= tf)
            throw ConfigError("keyframe " + std::to_string(k) + " out of range");
        keys[k] = seq.frame(k);
    }

    const auto res = prior::inbetween(lp.net, keys, tf, seq.fps);
    const auto slerped = prior::slerp_baseline(keys, tf, seq.fps);
    const auto recon = prior::reconstruct(lp.net, seq);

    // joint error restricted to the frames the decoder had to fill
    auto masked_joint_cm = [&](const body::MotionSequence& pred) {
        double acc = 0;
        int n = 0;
        for (int f = 0; f < tf; ++f) {
            if (!res.mask[f]) continue;
            const auto a = body::forward_kinematics(model, seq.frame(f));
            const auto b = body::forward_kinematics(model, pred.frame(f));
            acc += (a.pos - b.pos).rowwise().norm().mean();
            ++n;
        }
        return n ? acc / n * 100.0 : 0.0;
    };

    json out{{"provenance", provenance(cfg)},
             {"sequence", seq.source_id},
             {"keyframes", keyframes},
             {"masked_joint_cm", masked_joint_cm(res.blended)},
             {"slerp_masked_joint_cm", masked_joint_cm(slerped)},
             {"reconstruction_joint_cm", evalm::joint_error_cm(seq, recon, model)},
             {"pose_deg", evalm::pose_error_deg(seq, res.blended)},
             {"slerp_pose_deg", evalm::pose_error_deg(seq, slerped)}};
    if (!out_report.empty()) io::write_json(out_report, out);
    return out;
}

json cmd_ablate_translation(const Config& cfg, const std::string& out_report) {
    const body::BodyModel model = build_body(cfg);
    const auto train = toydata::make_corpus(model, cfg.seed, cfg.data.train_sequences,
                                            cfg.data.frames, cfg.data.fps, "train");
    const auto held = toydata::make_corpus(model, cfg.seed + 1, cfg.data.eval_sequences,
                                           cfg.data.frames, cfg.data.fps, "held");

    json rows = json::array();
    for (const auto repr :
         {motrep::TranslationRepr::delta_144, motrep::TranslationRepr::delta_3,
          motrep::TranslationRepr::abs_144, motrep::TranslationRepr::abs_3}) {
        prior::PriorConfig pc = cfg.prior;
        pc.joints = model.n_joints();
        pc.repr = repr;
        prior::PriorNet net(pc, cfg.seed);
        prior::PriorTrainer trainer(net, model, cfg.prior_train);
        trainer.run(train);

        double pose = 0, joint = 0, traj = 0;
        for (const auto& seq : held) {
            const auto rec = prior::reconstruct(net, seq);
            pose += evalm::pose_error_deg(seq, rec);
            joint += evalm::joint_error_cm(seq, rec, model);
            traj += (rec.x - seq.x).rowwise().norm().mean() * 100.0;
        }
        const double n = static_cast<double>(held.size());
        rows.push_back({{"translation_repr", motrep::repr_name(repr)},
                        {"width", motrep::param_width(model.n_joints(), repr,
                                                      cfg.prior.expander_out)},
                        {"pose_deg", pose / n},
                        {"joint_cm", joint / n},
                        {"traj_cm", traj / n}});
        std::cerr << "ablation " << motrep::repr_name(repr) << ": pose " << pose / n
                  << " deg, joint " << joint / n << " cm, traj " << traj / n << " cm\n";
    }
    json out{{"provenance", provenance(cfg)}, {"rows", rows}};
    if (!out_report.empty()) io::write_json(out_report, out);
    return out;
}

json cmd_data_efficiency(const Config& cfg, const std::string& out_report) {
    const body::BodyModel model = build_body(cfg);
    const DataEffConfig& de = cfg.data_efficiency;
    const auto pool = toydata::make_corpus(model, cfg.seed + 2, de.train_sequences,
                                           cfg.data.frames, cfg.data.fps, "de-train");
    const auto held = toydata::make_corpus(model, cfg.seed + 3, de.eval_sequences,
                                           cfg.data.frames, cfg.data.fps, "de-held");

    std::vector<double> fractions = de.fractions;
    std::sort(fractions.begin(), fractions.end());

    // nested subsets by sequence-id hash
    auto subset_for = [&](double fraction) {
        std::vector<body::MotionSequence> out;
        for (const auto& seq : pool) {
            const double u =
                static_cast<double>(fnv1a(seq.source_id) % 1000003ull) / 1000003.0;
            if (u < fraction) out.push_back(seq);
        }
        if (out.empty()) {
            const body::MotionSequence* best = &pool[0];
            for (const auto& seq : pool)
                if (fnv1a(seq.source_id) % 1000003ull < fnv1a(best->source_id) % 1000003ull)
                    best = &seq;
            out.push_back(*best);
        }
        return out;
    };

    json runs = json::array();
    std::vector<double> errors;
    for (double fraction : fractions) {
        const auto subset = subset_for(fraction);
        prior::PriorConfig pc = cfg.prior;
        pc.joints = model.n_joints();
        prior::PriorNet net(pc, cfg.seed);
        prior::TrainConfig tc = cfg.prior_train;
        tc.epochs = de.epochs;
        prior::PriorTrainer trainer(net, model, tc);
        trainer.run(subset);

        double joint = 0;
        for (const auto& seq : held)
            joint += evalm::joint_error_cm(seq, prior::reconstruct(net, seq), model);
        joint /= static_cast<double>(held.size());
        errors.push_back(joint);
        runs.push_back({{"fraction", fraction},
                        {"train_sequences", subset.size()},
                        {"joint_cm", joint}});
        std::cerr << "data-efficiency fraction " << fraction << ": " << subset.size()
                  << " sequences, joint " << joint << " cm\n";
    }

    // monotone non-increasing as data grows, one small inversion allowed
    int hard = 0, soft = 0;
    for (size_t i = 0; i + 1 < errors.size(); ++i) {
        if (errors[i + 1] > errors[i] * (1.0 + de.tolerance))
            ++hard;
        else if (errors[i + 1] > errors[i])
            ++soft;
    }
    const bool monotone_ok = hard == 0 && soft <= 1;

    json out{{"provenance", provenance(cfg)},
             {"stage", de.stage},
             {"runs", runs},
             {"hard_inversions", hard},
             {"soft_inversions", soft},
             {"tolerance", de.tolerance},
             {"monotone_ok", monotone_ok}};
    if (!out_report.empty()) io::write_json(out_report, out);
    return out;
}

void write_obj(const Mat& vertices, const Eigen::MatrixXi& faces, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io::LoadError("cannot open '" + path + "' for writing");
    char line[128];
    for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
        std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", vertices(i, 0),
                      vertices(i, 1), vertices(i, 2));
        f << line;
    }
    for (Eigen::Index i = 0; i < faces.rows(); ++i) {
        std::snprintf(line, sizeof(line), "f %d %d %d\n", faces(i, 0) + 1, faces(i, 1) + 1,
                      faces(i, 2) + 1);
        f << line;
    }
}

void cmd_export(const Config& cfg, const std::string& data_root,
                const std::string& prior_ckpt, const std::string& reuse_ckpt,
                const std::string& modality, const std::string& id,
                const std::string& out_dir) {
    require_file(prior_ckpt, "prior checkpoint");
    prior::LoadedPrior lp = prior::load_checkpoint(prior_ckpt);
    const DatasetManifest manifest =
        load_manifest((fs::path(data_root) / "manifest.json").string());
    const body::BodyModel model = load_dataset_body(data_root);
    fs::create_directories(out_dir);

    body::MotionSequence gt, pred;
    if (modality.empty()) {
        bool found = false;
        for (const ManifestEntry* e : manifest.select("sequence")) {
            if (id.empty() ? e->split == "held" : e->id == id) {
                gt = load_sequence((fs::path(data_root) / e->path).string());
                found = true;
                break;
            }
        }
        if (!found) throw MissingArtifact("sequence '" + id + "' not in manifest");
        pred = prior::reconstruct(lp.net, gt);
    } else {
        require_file(reuse_ckpt, "reuse checkpoint");
        reuse::LoadedReuse lr = reuse::load_reuse_checkpoint(reuse_ckpt, lp.param_hash);
        bool found = false;
        sensim::SensorClip clip;
        for (const ManifestEntry* e : manifest.select("clip", "", modality)) {
            if (id.empty() ? e->split == "held" : e->id == id) {
                clip = sensim::load_clip((fs::path(data_root) / e->path).string());
                found = true;
                break;
            }
        }
        if (!found) throw MissingArtifact("clip '" + id + "' not in manifest");
        gt = clip.source;
        const Vec3 anchor = gt.x.row(0).transpose();
        const Vec gt_beta = gt.beta;
        pred = reuse::estimate_motion(lr.net, lp.net, clip, anchor,
                                      lr.net.cfg.use_gt_beta ? &gt_beta : nullptr);
    }

    std::ofstream err_csv((fs::path(out_dir) / "vertex_error_cm.csv").string());
    evalm::MetricReport report;
    report.dataset = gt.source_id;
    report.metadata = provenance(cfg);
    report.sequence_ids.push_back(gt.source_id);
    report.add("pose", "deg", evalm::pose_error_deg(gt, pred));
    report.add("joint", "cm", evalm::joint_error_cm(gt, pred, model));
    report.add("mesh", "cm", evalm::mesh_error_cm(gt, pred, model));
    for (int f = 0; f < gt.frames(); ++f) {
        const Mat vg = body::skin(model, gt.frame(f));
        const Mat vp = body::skin(model, pred.frame(f));
        char name[32];
        std::snprintf(name, sizeof(name), "gt_%04d.obj", f);
        write_obj(vg, model.faces, (fs::path(out_dir) / name).string());
        std::snprintf(name, sizeof(name), "pred_%04d.obj", f);
        write_obj(vp, model.faces, (fs::path(out_dir) / name).string());
        const Vec err = (vg - vp).rowwise().norm() * 100.0;
        for (Eigen::Index i = 0; i < err.size(); ++i)
            err_csv << (i ? "," : "") << err[i];
        err_csv << "\n";
    }
    io::write_text((fs::path(out_dir) / "metrics.txt").string(), report.table());
    io::write_json((fs::path(out_dir) / "metrics.json").string(), report.to_json());
}

}  // namespace mopri::pipe
