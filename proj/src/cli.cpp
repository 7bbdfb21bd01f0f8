#include "volformer/cli.hpp"

#include "volformer/checkpoint.hpp"
#include "volformer/cohort.hpp"
#include "volformer/rollout.hpp"
#include "volformer/stats.hpp"
#include "volformer/synth.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace volformer {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string out_path(const RunConfig& cfg, const std::string& p) {
    return resolve_path(cfg.paths.out, p);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) fail(ErrorKind::io, "cannot create directory '" + path + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    f << text;
    if (!f) fail(ErrorKind::io, "write to '" + path + "' failed");
}

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorKind::data, "'" + path + "' is not valid JSON: " + e.what());
    }
}

// Run metadata deliberately omits timestamps so reruns are byte-identical.
void write_meta(const RunConfig& cfg, const std::string& command,
                const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seed;
    m["version"] = kVersion;
    m["outputs"] = outputs;
    write_text(out_path(cfg, command + "_meta.json"), m.dump(2) + "\n");
}

Manifest read_manifest_resolved(const RunConfig& cfg) {
    Manifest m = read_manifest(out_path(cfg, cfg.paths.manifest));
    for (auto& s : m.subjects) s.volume_path = out_path(cfg, s.volume_path);
    return m;
}

std::vector<MatchedPair> read_pairs_file(const std::string& path) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("pairs") || !doc["pairs"].is_array()) {
        fail(ErrorKind::data, "'" + path + "' must hold an object with a \"pairs\" array");
    }
    std::vector<MatchedPair> pairs;
    for (const auto& p : doc["pairs"]) {
        if (!p.is_object() || !p.contains("case") || !p.contains("control")) {
            fail(ErrorKind::data, "'" + path + "' pair entries need \"case\" and \"control\"");
        }
        pairs.push_back({p["case"].get<std::string>(), p["control"].get<std::string>()});
    }
    return pairs;
}

FoldSplit read_folds_file(const std::string& path, std::size_t n_pairs) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("folds") || !doc["folds"].is_array() ||
        doc["folds"].size() != 6) {
        fail(ErrorKind::data, "'" + path + "' must hold an object with a 6-entry \"folds\" array");
    }
    FoldSplit split;
    std::vector<bool> seen(n_pairs, false);
    for (std::size_t f = 0; f < 6; ++f) {
        for (const auto& idx : doc["folds"][f]) {
            const std::int64_t i = idx.get<std::int64_t>();
            if (i < 0 || static_cast<std::size_t>(i) >= n_pairs ||
                seen[static_cast<std::size_t>(i)]) {
                fail(ErrorKind::data, "'" + path + "' fold indices must partition 0.." +
                                          std::to_string(n_pairs - 1));
            }
            seen[static_cast<std::size_t>(i)] = true;
            split.folds[f].push_back(static_cast<std::size_t>(i));
        }
    }
    for (bool b : seen) {
        if (!b) fail(ErrorKind::data, "'" + path + "' fold indices do not cover every pair");
    }
    return split;
}

// The pretrained 2D archive: read it if present, otherwise generate the
// deterministic synthetic stand-in and save it for reuse.
NamedTensors load_or_make_pretrained(const RunConfig& cfg) {
    const std::string path = out_path(cfg, cfg.paths.pretrained);
    if (fs::exists(path)) return read_archive(path);
    NamedTensors archive = synthetic_pretrained_2d(cfg.model.vit(), cfg.model.src_grid_h,
                                                   cfg.model.src_grid_w, cfg.seed);
    ensure_dir(fs::path(path).parent_path().string());
    write_archive(path, archive);
    return archive;
}

PatchGeometry target_geometry(const RunConfig& cfg) {
    const std::int64_t gh = (cfg.data.height + kPatchSize - 1) / kPatchSize;
    const std::int64_t gw = (cfg.data.width + kPatchSize - 1) / kPatchSize;
    PatchGeometry g;
    g.depth = cfg.data.depth;
    g.grid_h = gh;
    g.grid_w = gw;
    return g;
}

std::string scores_file(const RunConfig& cfg, const std::string& dir, std::size_t fold) {
    return resolve_path(out_path(cfg, dir), "fold" + std::to_string(fold) + "_scores.json");
}

} // namespace

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage:
        case ErrorKind::config:
            return 1;
        case ErrorKind::numeric:
            return 3;
        default:
            return 2;
    }
}

int threads_from_env() {
    const unsigned hw = std::thread::hardware_concurrency();
    int threads = static_cast<int>(hw == 0 ? 1 : std::min<unsigned>(hw, 6));
    if (const char* env = std::getenv("VOLFORMER_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            fail(ErrorKind::config, "VOLFORMER_THREADS must be a positive integer");
        }
        threads = std::min<int>(threads, static_cast<int>(v));
    }
    return threads;
}

void cmd_synth(const RunConfig& cfg) {
    SynthDataset ds = synthesize_cohort(cfg.synth_config());
    ensure_dir(cfg.paths.out);
    ensure_dir(out_path(cfg, cfg.paths.volumes_dir));
    for (std::size_t i = 0; i < ds.manifest.subjects.size(); ++i) {
        Subject& s = ds.manifest.subjects[i];
        s.volume_path = cfg.paths.volumes_dir + "/" + s.id + ".nta";
        save_volume(out_path(cfg, s.volume_path), ds.volumes[i]);
    }
    write_manifest(out_path(cfg, cfg.paths.manifest), ds.manifest);
    write_meta(cfg, "synth", {cfg.paths.manifest, cfg.paths.volumes_dir});
    std::cout << "synth: wrote " << ds.manifest.subjects.size() << " volumes and "
              << cfg.paths.manifest << " under " << cfg.paths.out << "\n";
}

void cmd_match(const RunConfig& cfg) {
    const Manifest m = read_manifest(out_path(cfg, cfg.paths.manifest));
    const MatchResult r = match_case_controls(m.subjects);
    json doc;
    doc["pairs"] = json::array();
    for (const auto& p : r.pairs) {
        doc["pairs"].push_back({{"case", p.case_id}, {"control", p.control_id}});
    }
    doc["excluded"] = r.excluded;
    ensure_dir(cfg.paths.out);
    write_text(out_path(cfg, cfg.paths.pairs), doc.dump(2) + "\n");
    write_meta(cfg, "match", {cfg.paths.pairs});
    std::cout << "match: " << r.pairs.size() << " pairs, " << r.excluded.size()
              << " excluded -> " << cfg.paths.pairs << "\n";
}

void cmd_split(const RunConfig& cfg) {
    const auto pairs = read_pairs_file(out_path(cfg, cfg.paths.pairs));
    const FoldSplit split = split_six_folds(pairs, cfg.seed);
    json doc;
    doc["folds"] = json::array();
    for (const auto& fold : split.folds) doc["folds"].push_back(fold);
    ensure_dir(cfg.paths.out);
    write_text(out_path(cfg, cfg.paths.folds), doc.dump(2) + "\n");
    write_meta(cfg, "split", {cfg.paths.folds});
    std::cout << "split: " << pairs.size() << " pairs into 6 folds -> " << cfg.paths.folds << "\n";
}

void cmd_import(const RunConfig& cfg) {
    ensure_dir(cfg.paths.out);
    const NamedTensors archive = load_or_make_pretrained(cfg);
    const PatchGeometry geom = target_geometry(cfg);
    auto [params, report] =
        import_2d_vit(archive, geom.depth, geom.grid_h, geom.grid_w, cfg.model.vit(), cfg.seed);
    save_model(out_path(cfg, cfg.paths.model), params);
    json doc;
    doc["copied"] = report.copied;
    doc["adapted"] = report.adapted;
    doc["adapted_with_resize"] = report.adapted_with_resize;
    doc["reinitialized"] = report.reinitialized;
    doc["src_grid"] = {report.src_grid_h, report.src_grid_w};
    doc["dst_geometry"] = {report.dst_depth, report.dst_grid_h, report.dst_grid_w};
    write_text(out_path(cfg, "import_report.json"), doc.dump(2) + "\n");
    write_meta(cfg, "import", {cfg.paths.model, "import_report.json", cfg.paths.pretrained});
    std::cout << "import: " << report.copied.size() << " copied, " << report.adapted.size()
              << " adapted, " << report.reinitialized.size() << " reinitialized -> "
              << cfg.paths.model << "\n";
}

void cmd_train(const RunConfig& cfg) {
    ensure_dir(cfg.paths.out);
    const Manifest manifest = read_manifest_resolved(cfg);
    const auto pairs = read_pairs_file(out_path(cfg, cfg.paths.pairs));
    const FoldSplit split = read_folds_file(out_path(cfg, cfg.paths.folds), pairs.size());
    const NamedTensors pretrained = load_or_make_pretrained(cfg);
    VolumeStore store;
    const auto results = cross_validate(pretrained, manifest.subjects, pairs, split,
                                        cfg.train_config(), cfg.model.vit(), store,
                                        threads_from_env());
    std::vector<std::string> outputs;
    for (std::size_t f = 0; f < results.size(); ++f) {
        const std::string model_file = "fold" + std::to_string(f) + "_model.nta";
        save_model(out_path(cfg, model_file), results[f].params);
        json doc;
        doc["fold"] = f;
        doc["ids"] = results[f].subject_ids;
        doc["labels"] = results[f].validation.labels;
        doc["scores"] = results[f].validation.scores;
        doc["epoch_mean_loss"] = results[f].history.epoch_mean_loss;
        const std::string scores_name = "fold" + std::to_string(f) + "_scores.json";
        write_text(out_path(cfg, scores_name), doc.dump(2) + "\n");
        outputs.push_back(model_file);
        outputs.push_back(scores_name);
    }
    write_meta(cfg, "train", outputs);
    std::cout << "train: 6 folds trained; fold models and scores under " << cfg.paths.out << "\n";
}

void cmd_eval(const RunConfig& cfg) {
    std::vector<ModelFolds> models;
    for (const auto& ref : cfg.eval.models) {
        ModelFolds mf;
        mf.name = ref.name;
        for (std::size_t f = 0; f < 6; ++f) {
            const json doc = parse_json_file(scores_file(cfg, ref.dir, f));
            if (!doc.contains("scores") || !doc.contains("labels")) {
                fail(ErrorKind::data, "fold scores for model '" + ref.name +
                                          "' need \"scores\" and \"labels\" arrays");
            }
            ScoredCohort c;
            c.scores = doc["scores"].get<std::vector<double>>();
            c.labels = doc["labels"].get<std::vector<int>>();
            mf.folds.push_back(std::move(c));
        }
        models.push_back(std::move(mf));
    }
    const FoldReport report =
        build_report(models, cfg.eval.reference, cfg.eval.spec_target, cfg.eval.sens_target);
    ensure_dir(cfg.paths.out);
    write_text(out_path(cfg, cfg.paths.report + ".json"), report.json_text);
    write_text(out_path(cfg, cfg.paths.report + ".txt"), report.table_text);
    write_meta(cfg, "eval", {cfg.paths.report + ".json", cfg.paths.report + ".txt"});
    std::cout << report.table_text;
}

void cmd_rollout(const RunConfig& cfg) {
    const ModelParams params = load_model(out_path(cfg, cfg.paths.model), cfg.model.vit());
    std::vector<std::pair<std::string, std::string>> inputs; // (name, volume path)
    if (!cfg.paths.volume.empty()) {
        const std::string path = out_path(cfg, cfg.paths.volume);
        inputs.emplace_back(fs::path(path).stem().string(), path);
    } else {
        // Default: the held-out case volumes of fold 0.
        const Manifest manifest = read_manifest_resolved(cfg);
        const auto pairs = read_pairs_file(out_path(cfg, cfg.paths.pairs));
        const FoldSplit split = read_folds_file(out_path(cfg, cfg.paths.folds), pairs.size());
        for (std::size_t idx : split.folds[0]) {
            const Subject& s = find_subject(manifest.subjects, pairs[idx].case_id);
            inputs.emplace_back(s.id, s.volume_path);
        }
    }
    if (inputs.empty()) fail(ErrorKind::data, "rollout: no input volumes selected");
    const std::string dir = out_path(cfg, cfg.paths.rollout_dir);
    ensure_dir(dir);
    std::vector<std::string> outputs;
    for (const auto& [name, path] : inputs) {
        const Volume padded = pad_to_patch_multiple(load_volume(path));
        const auto [prob, stack] = forward(padded, params);
        const Tensor rollout = attention_rollout(stack);
        const PatchGeometry geom = patch_geometry(padded.depth, padded.height, padded.width);
        const Tensor heat = class_heatmap(rollout, geom, padded.height, padded.width);
        const auto files = export_heatmap(heat, resolve_path(dir, name));
        outputs.insert(outputs.end(), files.begin(), files.end());
        std::cout << "rollout: " << name << " p=" << prob << " -> " << files.front() << " (+"
                  << files.size() - 1 << " slices)\n";
    }
    write_meta(cfg, "rollout", outputs);
}

int run_command(const std::string& command, const CliOptions& opt) {
    try {
        if (opt.config_path.empty()) {
            fail(ErrorKind::usage, "--config is required");
        }
        RunConfig cfg = load_run_config(opt.config_path);
        if (opt.has_seed_override) cfg.seed = opt.seed_override;
        if (!opt.out_override.empty()) cfg.paths.out = opt.out_override;
        if (opt.dry_run) {
            std::cout << "dry-run: " << command << " validated (config hash " << config_hash(cfg)
                      << "); would write under " << cfg.paths.out << "\n";
            return 0;
        }
        if (command == "synth") {
            cmd_synth(cfg);
        } else if (command == "match") {
            cmd_match(cfg);
        } else if (command == "split") {
            cmd_split(cfg);
        } else if (command == "import") {
            cmd_import(cfg);
        } else if (command == "train") {
            cmd_train(cfg);
        } else if (command == "eval") {
            cmd_eval(cfg);
        } else if (command == "rollout") {
            cmd_rollout(cfg);
        } else {
            fail(ErrorKind::usage, "unknown command '" + command + "'");
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "volformer " << command << ": error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "volformer " << command << ": error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace volformer
