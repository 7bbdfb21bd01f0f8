#include "volformer/config.hpp"

#include "volformer/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace volformer {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : j.items()) {
        if (!ok.count(item.key())) {
            fail(ErrorKind::config, "unknown key '" + item.key() + "' in " + section);
        }
    }
}

const json& section(const json& root, const char* name) {
    static const json empty = json::object();
    if (!root.contains(name)) return empty;
    if (!root.at(name).is_object()) {
        fail(ErrorKind::config, std::string("'") + name + "' must be a JSON object");
    }
    return root.at(name);
}

double get_number(const json& j, const char* key, double fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) {
        fail(ErrorKind::config, where + "." + key + " must be a number");
    }
    return j.at(key).get<double>();
}

std::int64_t get_int(const json& j, const char* key, std::int64_t fallback,
                     const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) {
        fail(ErrorKind::config, where + "." + key + " must be an integer");
    }
    return j.at(key).get<std::int64_t>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) {
        fail(ErrorKind::config, where + "." + key + " must be a string");
    }
    return j.at(key).get<std::string>();
}

} // namespace

ViTConfig ModelSection::vit() const {
    ViTConfig cfg;
    cfg.dim = dim;
    cfg.heads = heads;
    cfg.depth = depth;
    cfg.mlp_ratio = mlp_ratio;
    return cfg;
}

SynthConfig RunConfig::synth_config() const {
    SynthConfig s;
    s.n_pairs = data.n_pairs;
    s.depth = data.depth;
    s.height = data.height;
    s.width = data.width;
    s.lesion_delta = data.lesion_delta;
    s.noise_sd = data.noise_sd;
    s.seed = seed;
    return s;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.learning_rate = train.learning_rate;
    t.epochs = train.epochs;
    t.batch_size = train.batch_size;
    t.weight_decay = train.weight_decay;
    t.seed = seed;
    return t;
}

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const std::exception& e) {
        fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) fail(ErrorKind::config, "config must be a JSON object");
    check_keys(root, "config", {"seed", "data", "model", "train", "eval", "paths"});
    if (!root.contains("seed")) fail(ErrorKind::config, "config requires a top-level \"seed\"");
    if (!root.at("seed").is_number_integer() || root.at("seed").get<std::int64_t>() < 0) {
        fail(ErrorKind::config, "seed must be a non-negative integer");
    }

    RunConfig cfg;
    cfg.seed = root.at("seed").get<std::uint64_t>();

    {
        const json& d = section(root, "data");
        check_keys(d, "data",
                   {"n_pairs", "depth", "height", "width", "lesion_delta", "noise_sd"});
        cfg.data.n_pairs = static_cast<int>(get_int(d, "n_pairs", cfg.data.n_pairs, "data"));
        cfg.data.depth = get_int(d, "depth", cfg.data.depth, "data");
        cfg.data.height = get_int(d, "height", cfg.data.height, "data");
        cfg.data.width = get_int(d, "width", cfg.data.width, "data");
        cfg.data.lesion_delta = get_number(d, "lesion_delta", cfg.data.lesion_delta, "data");
        cfg.data.noise_sd = get_number(d, "noise_sd", cfg.data.noise_sd, "data");
    }
    {
        const json& m = section(root, "model");
        check_keys(m, "model", {"dim", "heads", "depth", "mlp_ratio", "src_grid_h", "src_grid_w"});
        cfg.model.dim = static_cast<int>(get_int(m, "dim", cfg.model.dim, "model"));
        cfg.model.heads = static_cast<int>(get_int(m, "heads", cfg.model.heads, "model"));
        cfg.model.depth = static_cast<int>(get_int(m, "depth", cfg.model.depth, "model"));
        cfg.model.mlp_ratio =
            static_cast<int>(get_int(m, "mlp_ratio", cfg.model.mlp_ratio, "model"));
        cfg.model.src_grid_h = get_int(m, "src_grid_h", cfg.model.src_grid_h, "model");
        cfg.model.src_grid_w = get_int(m, "src_grid_w", cfg.model.src_grid_w, "model");
        cfg.model.vit().validate();
        if (cfg.model.src_grid_h < 1 || cfg.model.src_grid_w < 1) {
            fail(ErrorKind::config, "model.src_grid_h and model.src_grid_w must be >= 1");
        }
    }
    {
        const json& t = section(root, "train");
        check_keys(t, "train", {"learning_rate", "epochs", "batch_size", "weight_decay"});
        cfg.train.learning_rate =
            get_number(t, "learning_rate", cfg.train.learning_rate, "train");
        cfg.train.epochs = static_cast<int>(get_int(t, "epochs", cfg.train.epochs, "train"));
        cfg.train.batch_size =
            static_cast<int>(get_int(t, "batch_size", cfg.train.batch_size, "train"));
        cfg.train.weight_decay = get_number(t, "weight_decay", cfg.train.weight_decay, "train");
        cfg.train_config().validate();
    }
    {
        const json& e = section(root, "eval");
        check_keys(e, "eval", {"spec_target", "sens_target", "reference", "models"});
        cfg.eval.spec_target = get_number(e, "spec_target", cfg.eval.spec_target, "eval");
        cfg.eval.sens_target = get_number(e, "sens_target", cfg.eval.sens_target, "eval");
        cfg.eval.reference = get_string(e, "reference", cfg.eval.reference, "eval");
        if (e.contains("models")) {
            if (!e.at("models").is_array() || e.at("models").empty()) {
                fail(ErrorKind::config, "eval.models must be a non-empty array");
            }
            cfg.eval.models.clear();
            for (const auto& entry : e.at("models")) {
                if (!entry.is_object()) {
                    fail(ErrorKind::config, "eval.models entries must be objects");
                }
                check_keys(entry, "eval.models[]", {"name", "dir"});
                EvalModelRef ref;
                ref.name = get_string(entry, "name", "", "eval.models[]");
                ref.dir = get_string(entry, "dir", ".", "eval.models[]");
                if (ref.name.empty()) {
                    fail(ErrorKind::config, "eval.models entries require a \"name\"");
                }
                cfg.eval.models.push_back(std::move(ref));
            }
        }
        if (!(cfg.eval.spec_target > 0.0 && cfg.eval.spec_target <= 1.0) ||
            !(cfg.eval.sens_target > 0.0 && cfg.eval.sens_target <= 1.0)) {
            fail(ErrorKind::config, "eval targets must lie in (0, 1]");
        }
    }
    {
        const json& p = section(root, "paths");
        check_keys(p, "paths",
                   {"out", "manifest", "volumes_dir", "pairs", "folds", "pretrained", "model",
                    "report", "rollout_dir", "volume"});
        cfg.paths.out = get_string(p, "out", cfg.paths.out, "paths");
        cfg.paths.manifest = get_string(p, "manifest", cfg.paths.manifest, "paths");
        cfg.paths.volumes_dir = get_string(p, "volumes_dir", cfg.paths.volumes_dir, "paths");
        cfg.paths.pairs = get_string(p, "pairs", cfg.paths.pairs, "paths");
        cfg.paths.folds = get_string(p, "folds", cfg.paths.folds, "paths");
        cfg.paths.pretrained = get_string(p, "pretrained", cfg.paths.pretrained, "paths");
        cfg.paths.model = get_string(p, "model", cfg.paths.model, "paths");
        cfg.paths.report = get_string(p, "report", cfg.paths.report, "paths");
        cfg.paths.rollout_dir = get_string(p, "rollout_dir", cfg.paths.rollout_dir, "paths");
        cfg.paths.volume = get_string(p, "volume", cfg.paths.volume, "paths");
        if (cfg.paths.out.empty()) fail(ErrorKind::config, "paths.out must not be empty");
    }
    cfg.synth_config().validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string canonical_config_json(const RunConfig& cfg) {
    json root;
    root["seed"] = cfg.seed;
    root["data"] = {{"n_pairs", cfg.data.n_pairs},     {"depth", cfg.data.depth},
                    {"height", cfg.data.height},       {"width", cfg.data.width},
                    {"lesion_delta", cfg.data.lesion_delta}, {"noise_sd", cfg.data.noise_sd}};
    root["model"] = {{"dim", cfg.model.dim},
                     {"heads", cfg.model.heads},
                     {"depth", cfg.model.depth},
                     {"mlp_ratio", cfg.model.mlp_ratio},
                     {"src_grid_h", cfg.model.src_grid_h},
                     {"src_grid_w", cfg.model.src_grid_w}};
    root["train"] = {{"learning_rate", cfg.train.learning_rate},
                     {"epochs", cfg.train.epochs},
                     {"batch_size", cfg.train.batch_size},
                     {"weight_decay", cfg.train.weight_decay}};
    json models = json::array();
    for (const auto& m : cfg.eval.models) models.push_back({{"name", m.name}, {"dir", m.dir}});
    root["eval"] = {{"spec_target", cfg.eval.spec_target},
                    {"sens_target", cfg.eval.sens_target},
                    {"reference", cfg.eval.reference},
                    {"models", models}};
    root["paths"] = {{"out", cfg.paths.out},
                     {"manifest", cfg.paths.manifest},
                     {"volumes_dir", cfg.paths.volumes_dir},
                     {"pairs", cfg.paths.pairs},
                     {"folds", cfg.paths.folds},
                     {"pretrained", cfg.paths.pretrained},
                     {"model", cfg.paths.model},
                     {"report", cfg.paths.report},
                     {"rollout_dir", cfg.paths.rollout_dir},
                     {"volume", cfg.paths.volume}};
    return root.dump();
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = canonical_config_json(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string resolve_path(const std::string& base, const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    if (base.empty()) return path;
    return base.back() == '/' ? base + path : base + "/" + path;
}

} // namespace volformer
