#pragma once

#include "volformer/cohort.hpp"
#include "volformer/encoder.hpp"
#include "volformer/synth.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace volformer {

// Run configuration parsed from a strict JSON document with sections
// {data, model, train, eval, paths} plus a mandatory top-level "seed".
// Unknown keys anywhere are rejected; every other field has a default.
struct DataSection {
    int n_pairs = 200;
    std::int64_t depth = 8, height = 64, width = 64;
    double lesion_delta = 0.4;
    double noise_sd = 0.1;
};

struct ModelSection {
    int dim = 192;
    int heads = 3;
    int depth = 12;
    int mlp_ratio = 4;
    std::int64_t src_grid_h = 14, src_grid_w = 14; // pretraining patch grid
    ViTConfig vit() const;
};

struct TrainSection {
    double learning_rate = 1e-3;
    int epochs = 6;
    int batch_size = 8;
    double weight_decay = 0.01;
};

struct EvalModelRef {
    std::string name;
    std::string dir; // holds fold{0..5}_scores.json; relative to paths.out
};

struct EvalSection {
    double spec_target = 0.80;
    double sens_target = 0.80;
    std::string reference = "mr-transformer";
    std::vector<EvalModelRef> models{{"mr-transformer", "."}};
};

// All file locations. `out` resolves against the working directory; every
// other path resolves against `out` unless absolute.
struct PathsSection {
    std::string out = "out";
    std::string manifest = "manifest.json";
    std::string volumes_dir = "volumes";
    std::string pairs = "pairs.json";
    std::string folds = "folds.json";
    std::string pretrained = "pretrained_2d.nta";
    std::string model = "fold0_model.nta";
    std::string report = "report";      // writes <report>.json and <report>.txt
    std::string rollout_dir = "rollout";
    std::string volume;                 // optional single-volume rollout input
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataSection data;
    ModelSection model;
    TrainSection train;
    EvalSection eval;
    PathsSection paths;

    SynthConfig synth_config() const;
    TrainConfig train_config() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical JSON of a parsed config (defaults filled in, keys sorted) and its
// FNV-1a 64-bit hash as 16 hex digits. Equal semantics => equal hash.
std::string canonical_config_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// `path` if absolute, otherwise base + "/" + path.
std::string resolve_path(const std::string& base, const std::string& path);

} // namespace volformer
