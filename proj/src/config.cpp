#include "mopri/config.hpp"

#include <set>

#include "mopri/dataio.hpp"

namespace mopri::pipe {

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + where + "." + key + "'");
}

}  // namespace

json Config::to_json() const {
    json j;
    j["seed"] = seed;
    j["body"] = {{"model", body.model},
                 {"toy_joints", body.toy_joints},
                 {"toy_vertices", body.toy_vertices}};
    j["data"] = {{"fps", data.fps},
                 {"frames", data.frames},
                 {"train_sequences", data.train_sequences},
                 {"eval_sequences", data.eval_sequences},
                 {"window", data.window},
                 {"window_stride", data.window_stride},
                 {"modalities", data.modalities}};
    j["prior"] = prior::prior_config_to_json(prior);
    j["prior_train"] = prior::train_config_to_json(prior_train);
    j["reuse"] = reuse::reuse_config_to_json(reuse_net);
    j["reuse_train"] = reuse::reuse_train_config_to_json(reuse_train);
    j["sensim"] = {{"width", sensim.width},
                   {"height", sensim.height},
                   {"fx", sensim.fx},
                   {"fy", sensim.fy},
                   {"radius", sensim.radius},
                   {"cam_height", sensim.cam_height},
                   {"depth_points", sensim.depth_points},
                   {"lidar_stride", sensim.lidar_stride},
                   {"lidar_points", sensim.lidar_points},
                   {"imu_root_relative", sensim.imu_root_relative}};
    j["data_efficiency"] = {{"fractions", data_efficiency.fractions},
                            {"stage", data_efficiency.stage},
                            {"epochs", data_efficiency.epochs},
                            {"train_sequences", data_efficiency.train_sequences},
                            {"eval_sequences", data_efficiency.eval_sequences},
                            {"tolerance", data_efficiency.tolerance}};
    return j;
}

Config Config::from_json(const json& j) {
    require_keys(j, "", {"seed", "body", "data", "prior", "prior_train", "reuse",
                         "reuse_train", "sensim", "data_efficiency"});
    Config c;
    try {
        c.seed = j.at("seed");

        const json& b = j.at("body");
        require_keys(b, "body", {"model", "toy_joints", "toy_vertices"});
        c.body.model = b.at("model");
        c.body.toy_joints = b.at("toy_joints");
        c.body.toy_vertices = b.at("toy_vertices");

        const json& d = j.at("data");
        require_keys(d, "data",
                     {"fps", "frames", "train_sequences", "eval_sequences", "window",
                      "window_stride", "modalities"});
        c.data.fps = d.at("fps");
        c.data.frames = d.at("frames");
        c.data.train_sequences = d.at("train_sequences");
        c.data.eval_sequences = d.at("eval_sequences");
        c.data.window = d.at("window");
        c.data.window_stride = d.at("window_stride");
        c.data.modalities = d.at("modalities").get<std::vector<std::string>>();
        if (c.data.window != "tiles" && c.data.window != "leading")
            throw ConfigError("data.window must be 'tiles' or 'leading'");

        require_keys(j.at("prior"), "prior",
                     {"joints", "d_z", "n_layers", "n_heads", "d_ff", "head_hidden",
                      "expander_hidden", "expander_out", "logvar_min", "logvar_max",
                      "translation_repr"});
        c.prior = prior::prior_config_from_json(j.at("prior"));

        require_keys(j.at("prior_train"), "prior_train",
                     {"epochs", "batch", "lr", "decay1", "decay2", "r_mask",
                      "keyframe_mask_prob", "prior_path_prob", "seed", "log_every",
                      "weights"});
        require_keys(j.at("prior_train").at("weights"), "prior_train.weights",
                     {"theta", "dtheta", "x", "dx", "joints", "verts", "kl_prior"});
        c.prior_train = prior::train_config_from_json(j.at("prior_train"));

        require_keys(j.at("reuse"), "reuse",
                     {"modality", "d_feat", "pc_hidden", "mapper_layers", "mapper_heads",
                      "mapper_ff", "head_hidden", "shape_hidden", "t_frames",
                      "center_pointclouds", "use_gt_beta", "logvar_min", "logvar_max"});
        c.reuse_net = reuse::reuse_config_from_json(j.at("reuse"));

        require_keys(j.at("reuse_train"), "reuse_train",
                     {"epochs", "batch", "lr", "decay1", "decay2", "seed", "log_every",
                      "weights", "w_kl_reuse", "w_beta"});
        c.reuse_train = reuse::reuse_train_config_from_json(j.at("reuse_train"));

        const json& s = j.at("sensim");
        require_keys(s, "sensim",
                     {"width", "height", "fx", "fy", "radius", "cam_height", "depth_points",
                      "lidar_stride", "lidar_points", "imu_root_relative"});
        c.sensim.width = s.at("width");
        c.sensim.height = s.at("height");
        c.sensim.fx = s.at("fx");
        c.sensim.fy = s.at("fy");
        c.sensim.radius = s.at("radius");
        c.sensim.cam_height = s.at("cam_height");
        c.sensim.depth_points = s.at("depth_points");
        c.sensim.lidar_stride = s.at("lidar_stride");
        c.sensim.lidar_points = s.at("lidar_points");
        c.sensim.imu_root_relative = s.at("imu_root_relative");
        c.sensim.t_frames = c.data.frames;
        c.reuse_net.t_frames = c.data.frames;

        const json& e = j.at("data_efficiency");
        require_keys(e, "data_efficiency",
                     {"fractions", "stage", "epochs", "train_sequences", "eval_sequences",
                      "tolerance"});
        c.data_efficiency.fractions = e.at("fractions").get<std::vector<double>>();
        c.data_efficiency.stage = e.at("stage");
        c.data_efficiency.epochs = e.at("epochs");
        c.data_efficiency.train_sequences = e.at("train_sequences");
        c.data_efficiency.eval_sequences = e.at("eval_sequences");
        c.data_efficiency.tolerance = e.at("tolerance");
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    }
    return c;
}

Config default_config() { return Config{}; }

Config toy_config() {
    Config c;
    c.body.model = "toy";
    c.prior.joints = c.body.toy_joints;
    c.prior.d_z = 64;
    c.prior.n_layers = 2;
    c.prior.n_heads = 4;
    c.prior.d_ff = 256;
    c.prior.head_hidden = 128;
    c.prior_train.epochs = 400;
    c.prior_train.batch = 8;
    c.prior_train.lr = 1e-3;
    c.prior_train.log_every = 20;
    c.reuse_net.d_feat = 64;
    c.reuse_net.pc_hidden = 64;
    c.reuse_net.mapper_layers = 2;
    c.reuse_net.mapper_ff = 128;
    c.reuse_net.head_hidden = 128;
    c.reuse_net.shape_hidden = 64;
    c.reuse_train.epochs = 150;
    c.reuse_train.batch = 8;
    c.reuse_train.lr = 1e-3;
    c.reuse_train.log_every = 10;
    c.data_efficiency.epochs = 120;
    return c;
}

Config load_config_file(const std::string& path) {
    return Config::from_json(io::read_json(path));
}

void apply_override(json& doc, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // plain string
    }
    json* cur = &doc;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json provenance(const Config& cfg) {
    return json{{"version", kVersion},
                {"config_hash", cfg.hash_hex()},
                {"seed", cfg.seed}};
}

}  // namespace mopri::pipe
