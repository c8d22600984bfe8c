#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "mopri/dataio.hpp"
#include "mopri/pipeline.hpp"

using namespace mopri;

namespace {

pipe::Config resolve_config(const std::string& config_path,
                            const std::vector<std::string>& overrides) {
    pipe::json doc = config_path.empty() ? pipe::toy_config().to_json()
                                         : io::read_json(config_path);
    for (const auto& o : overrides) pipe::apply_override(doc, o);
    return pipe::Config::from_json(doc);
}

std::string default_data_root(const std::string& given) {
    if (!given.empty()) return given;
    const char* env = std::getenv("MOPRI_DATA_ROOT");
    if (env && *env) return env;
    throw ConfigError("no dataset directory: pass --data or set MOPRI_DATA_ROOT");
}

std::vector<int> parse_keyframes(const std::string& csv) {
    std::vector<int> out;
    size_t start = 0;
    while (start < csv.size()) {
        const size_t comma = csv.find(',', start);
        out.push_back(std::stoi(csv.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"motion-prior toolkit: synthetic data, prior and adapter training, "
                 "evaluation, inbetweening"};
    app.require_subcommand(1);

    std::string config_path, data_root, out_path, prior_ckpt, reuse_ckpt, modality;
    std::string sequence_id, keyframes_csv, src_dir, export_id;
    std::vector<std::string> overrides;

    app.add_option("--config", config_path, "configuration file (JSON)");
    app.add_option("--set", overrides, "override config entries, e.g. prior.d_z=128");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen->add_option("--out", out_path, "dataset directory")->required();

    auto* tp = app.add_subcommand("train-prior", "train the motion prior");
    tp->add_option("--data", data_root, "dataset directory");
    tp->add_option("--out", out_path, "checkpoint path")->required();

    auto* tr = app.add_subcommand("train-reuse", "train a sensor adapter on a frozen prior");
    tr->add_option("--data", data_root, "dataset directory");
    tr->add_option("--prior", prior_ckpt, "prior checkpoint")->required();
    tr->add_option("--modality", modality, "depth_pc | lidar | imu")->required();
    tr->add_option("--out", out_path, "checkpoint path")->required();

    auto* ev = app.add_subcommand("eval", "evaluate reconstruction or adapter estimates");
    ev->add_option("--data", data_root, "dataset directory");
    ev->add_option("--prior", prior_ckpt, "prior checkpoint")->required();
    ev->add_option("--reuse", reuse_ckpt, "reuse checkpoint (with --modality)");
    ev->add_option("--modality", modality, "clip modality to evaluate");
    ev->add_option("--out", out_path, "report path (JSON)")->required();

    auto* ib = app.add_subcommand("inbetween", "keyframe inbetweening with the prior");
    ib->add_option("--data", data_root, "dataset directory");
    ib->add_option("--prior", prior_ckpt, "prior checkpoint")->required();
    ib->add_option("--sequence", sequence_id, "sequence id (default: first held-out)");
    ib->add_option("--keyframes", keyframes_csv, "comma-separated frame indices");
    ib->add_option("--out", out_path, "report path (JSON)")->required();

    auto* ab = app.add_subcommand("ablate-translation",
                                  "compare the four translation representations");
    ab->add_option("--out", out_path, "report path (JSON)")->required();

    auto* de = app.add_subcommand("data-efficiency",
                                  "error versus training-set fraction");
    de->add_option("--out", out_path, "report path (JSON)")->required();

    auto* ex = app.add_subcommand("export", "write meshes, error arrays, metric tables");
    ex->add_option("--data", data_root, "dataset directory");
    ex->add_option("--prior", prior_ckpt, "prior checkpoint")->required();
    ex->add_option("--reuse", reuse_ckpt, "reuse checkpoint (with --modality)");
    ex->add_option("--modality", modality, "clip modality");
    ex->add_option("--id", export_id, "sequence or clip id (default: first held-out)");
    ex->add_option("--out", out_path, "output directory")->required();

    auto* in = app.add_subcommand("ingest", "resample, split, and window a motion corpus");
    in->add_option("--src", src_dir, "directory of .seq files")->required();
    in->add_option("--out", out_path, "dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const pipe::Config cfg = resolve_config(config_path, overrides);
        if (gen->parsed()) {
            pipe::cmd_gen_data(cfg, out_path);
        } else if (tp->parsed()) {
            pipe::cmd_train_prior(cfg, default_data_root(data_root), out_path);
        } else if (tr->parsed()) {
            pipe::cmd_train_reuse(cfg, default_data_root(data_root), prior_ckpt, modality,
                                  out_path);
        } else if (ev->parsed()) {
            const auto report = pipe::cmd_eval(cfg, default_data_root(data_root), prior_ckpt,
                                               reuse_ckpt, modality, out_path);
            std::cout << report.table();
        } else if (ib->parsed()) {
            const auto rep =
                pipe::cmd_inbetween(cfg, default_data_root(data_root), prior_ckpt,
                                    sequence_id, parse_keyframes(keyframes_csv), out_path);
            std::cout << rep.dump(2) << "\n";
        } else if (ab->parsed()) {
            std::cout << pipe::cmd_ablate_translation(cfg, out_path).dump(2) << "\n";
        } else if (de->parsed()) {
            std::cout << pipe::cmd_data_efficiency(cfg, out_path).dump(2) << "\n";
        } else if (ex->parsed()) {
            pipe::cmd_export(cfg, default_data_root(data_root), prior_ckpt, reuse_ckpt,
                             modality, export_id, out_path);
        } else if (in->parsed()) {
            pipe::IngestStats stats;
            pipe::ingest_motion_corpus(src_dir, out_path, cfg, &stats);
            std::cout << "sources " << stats.sources << ", dropped " << stats.dropped_short
                      << ", pieces " << stats.pieces << ", windows " << stats.windows
                      << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const io::LoadError& e) {
        std::cerr << "load error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
