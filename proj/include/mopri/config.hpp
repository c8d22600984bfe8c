#pragma once

// Experiment configuration: one JSON document with strict schema
// validation (unknown keys are rejected), echoed verbatim into every
// checkpoint and report this project writes.

#include <json.hpp>
#include <string>
#include <vector>

#include "mopri/prior.hpp"
#include "mopri/reuse.hpp"
#include "mopri/sensim.hpp"

namespace mopri::pipe {

using json = nlohmann::json;

struct BodyConfig {
    std::string model = "toy";  // "toy" or a model-file path
    int toy_joints = 16;
    int toy_vertices = 600;
};

struct DataConfig {
    double fps = 10.0;
    int frames = 40;
    int train_sequences = 8;
    int eval_sequences = 4;
    std::string window = "tiles";  // tiles | leading
    int window_stride = 0;         // 0 = window length (no overlap)
    std::vector<std::string> modalities = {"depth_pc", "lidar", "imu"};
};

struct DataEffConfig {
    std::vector<double> fractions = {0.0625, 0.125, 0.25, 0.5, 1.0};
    std::string stage = "prior";  // prior | depth_pc | lidar | imu
    int epochs = 120;
    int train_sequences = 16;
    int eval_sequences = 6;
    double tolerance = 0.10;  // allowed single-inversion band
};

struct Config {
    uint64_t seed = 1;
    BodyConfig body;
    DataConfig data;
    prior::PriorConfig prior;
    prior::TrainConfig prior_train;
    reuse::ReuseConfig reuse_net;
    reuse::ReuseTrainConfig reuse_train;
    sensim::SensimConfig sensim;
    DataEffConfig data_efficiency;

    json to_json() const;
    static Config from_json(const json& j);  // strict
    uint64_t hash() const { return fnv1a(to_json().dump()); }
    std::string hash_hex() const { return hex64(hash()); }
};

Config default_config();
// defaults sized for laptop-scale runs of the full flow
Config toy_config();

Config load_config_file(const std::string& path);
// key paths like "prior.d_z=128"; values parsed as JSON when possible
void apply_override(json& doc, const std::string& assignment);

// header stamped into generated artifacts
json provenance(const Config& cfg);

}  // namespace mopri::pipe
