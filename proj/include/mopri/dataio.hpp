#pragma once

// Single binary container used for body models, motion sequences, sensor
// clips, and checkpoints:
//
//   bytes 0..7   magic "MOPRBIN1"
//   bytes 8..15  u64 little-endian header length H
//   H bytes      UTF-8 JSON header:
//                  {"kind": ..., "meta": {...},
//                   "tensors": [{"name","dtype","rows","cols","offset"}]}
//   payload      raw little-endian scalars, row-major, in tensor order
//
// dtype is "f64" or "i64". Offsets are bytes from the payload start.

#include <Eigen/Core>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "mopri/common.hpp"

namespace mopri::io {

using json = nlohmann::json;
using MatI = Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Bundle {
    std::string kind;
    json meta = json::object();
    std::vector<std::pair<std::string, Mat>> f64;
    std::vector<std::pair<std::string, MatI>> i64;

    void put(const std::string& name, const Mat& m) { f64.emplace_back(name, m); }
    void put(const std::string& name, const MatI& m) { i64.emplace_back(name, m); }

    bool has_f64(const std::string& name) const;
    bool has_i64(const std::string& name) const;
    const Mat& get_f64(const std::string& name) const;       // throws LoadError
    const MatI& get_i64(const std::string& name) const;
};

void write_bundle(const Bundle& b, const std::string& path);
Bundle read_bundle(const std::string& path);

// Convenience text helpers (deterministic JSON serialization).
void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);
void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace mopri::io
