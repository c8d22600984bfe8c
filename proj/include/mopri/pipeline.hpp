#pragma once

// Dataset generation and ingestion, experiment orchestration, and the
// command implementations behind the CLI.

#include <optional>

#include "mopri/config.hpp"
#include "mopri/evalm.hpp"

namespace mopri::pipe {

// ---- sequence files ----
void save_sequence(const body::MotionSequence& seq, const std::string& path);
body::MotionSequence load_sequence(const std::string& path);

// ---- manifest ----
struct ManifestEntry {
    std::string id, kind, path, modality, split, source_id;
    uint64_t seed = 0;
    int frames = 0;
};

struct DatasetManifest {
    json header = json::object();
    std::vector<ManifestEntry> entries;

    void add(const ManifestEntry& e);  // rejects duplicate ids
    std::vector<const ManifestEntry*> select(const std::string& kind,
                                             const std::string& split = "",
                                             const std::string& modality = "") const;
    json to_json() const;
    static DatasetManifest from_json(const json& j);
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);  // MissingArtifact if absent

// ---- ingestion ----
body::MotionSequence resample_sequence(const body::MotionSequence& seq, double fps_target);

// drops < min_seconds, splits > max_seconds into near-equal pieces
std::vector<body::MotionSequence> split_by_duration(const body::MotionSequence& seq,
                                                    double min_seconds = 4.0,
                                                    double max_seconds = 8.0);

std::vector<body::MotionSequence> window_sequence(const body::MotionSequence& seq,
                                                  int frames, const std::string& mode,
                                                  int stride = 0);

struct IngestStats {
    int sources = 0, dropped_short = 0, pieces = 0, windows = 0;
};

// reads *.seq bundles from src_dir, resamples, splits, windows, and
// writes a training-ready dataset under out_dir
DatasetManifest ingest_motion_corpus(const std::string& src_dir, const std::string& out_dir,
                                     const Config& cfg, IngestStats* stats = nullptr);

// ---- shared helpers ----
body::BodyModel build_body(const Config& cfg);
body::BodyModel load_dataset_body(const std::string& data_root);
uint64_t clip_seed(const Config& cfg, const std::string& id, const std::string& modality);

// ---- commands ----
void cmd_gen_data(const Config& cfg, const std::string& out_root);

void cmd_train_prior(const Config& cfg, const std::string& data_root,
                     const std::string& out_ckpt);

void cmd_train_reuse(const Config& cfg, const std::string& data_root,
                     const std::string& prior_ckpt, const std::string& modality,
                     const std::string& out_ckpt);

// modality "" evaluates prior reconstruction on held-out sequences;
// otherwise evaluates the adapter on held-out clips of that modality
evalm::MetricReport cmd_eval(const Config& cfg, const std::string& data_root,
                             const std::string& prior_ckpt, const std::string& reuse_ckpt,
                             const std::string& modality, const std::string& out_report);

json cmd_inbetween(const Config& cfg, const std::string& data_root,
                   const std::string& prior_ckpt, const std::string& sequence_id,
                   std::vector<int> keyframes, const std::string& out_report);

json cmd_ablate_translation(const Config& cfg, const std::string& out_report);

json cmd_data_efficiency(const Config& cfg, const std::string& out_report);

void cmd_export(const Config& cfg, const std::string& data_root,
                const std::string& prior_ckpt, const std::string& reuse_ckpt,
                const std::string& modality, const std::string& id,
                const std::string& out_dir);

void write_obj(const Mat& vertices, const Eigen::MatrixXi& faces, const std::string& path);

}  // namespace mopri::pipe
