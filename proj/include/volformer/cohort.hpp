#pragma once

#include "volformer/checkpoint.hpp"
#include "volformer/encoder.hpp"
#include "volformer/stats.hpp"
#include "volformer/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace volformer {

struct Subject {
    std::string id;
    double age = 0.0;         // years
    std::string sex;          // "M" or "F"
    std::string ethnicity;    // categorical
    double bmi = 0.0;         // kg/m^2
    int label = 0;            // 1 = case, 0 = control
    std::string volume_path;  // .nta file with tensor "volume"
};

struct MatchedPair {
    std::string case_id, control_id;
};

struct MatchResult {
    std::vector<MatchedPair> pairs;
    std::vector<std::string> excluded; // unmatched subject ids, ascending
};

// Greedy nearest-neighbor case-control matching. Sex and ethnicity must match
// exactly; distance = |dAge|/sd_age + |dBMI|/sd_bmi with cohort-wide sample
// standard deviations; calipers |dAge| <= 5 years and |dBMI| <= 3. Cases are
// processed in ascending id; distance ties break toward the smaller
// control id. Unmatched subjects are returned as excluded.
MatchResult match_case_controls(const std::vector<Subject>& subjects);

// Six disjoint pair-index lists covering every pair exactly once; sizes differ
// by at most one. Pairs are atomic: both members stay in the same fold.
struct FoldSplit {
    std::array<std::vector<std::size_t>, 6> folds;
};

// Shuffles pair indices with SeededRng(seed), then deals them round-robin.
FoldSplit split_six_folds(const std::vector<MatchedPair>& pairs, std::uint64_t seed);

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 6;
    int batch_size = 8; // must be even: batches hold equal cases and controls
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    void validate() const;
};

// Loads volumes from .nta files and caches them; `put` preloads in-memory
// volumes (synthetic data, tests). Thread-safe.
class VolumeStore {
  public:
    const Volume& get(const std::string& path);
    void put(const std::string& path, Volume v);

  private:
    std::mutex mu_;
    std::map<std::string, Volume> cache_;
};

struct TrainHistory {
    std::vector<double> epoch_mean_loss;
};

// Mini-batch AdamW (beta1 0.9, beta2 0.999, eps 1e-8, decoupled weight decay)
// over the binary cross-entropy loss. Batches are pair-balanced: each batch
// holds whole pairs, so cases and controls appear in equal numbers.
// Deterministic given (params, pairs, config). Non-finite loss raises a
// numeric error naming the epoch and batch.
TrainHistory train(ModelParams& params, const std::vector<Subject>& subjects,
                   const std::vector<MatchedPair>& pairs, const TrainConfig& cfg,
                   VolumeStore& store);

// Scores of one fold's held-out subjects, id-aligned with the cohort entries.
struct FoldResult {
    ModelParams params;
    ScoredCohort validation;
    std::vector<std::string> subject_ids;
    TrainHistory history;
};

// For each fold: import the pretrained 2D archive fresh (head seed =
// cfg.seed + fold), train on the other five folds, score the held-out fold.
// Folds run in parallel up to `threads` (>= 1).
std::vector<FoldResult> cross_validate(const NamedTensors& pretrained,
                                       const std::vector<Subject>& subjects,
                                       const std::vector<MatchedPair>& pairs,
                                       const FoldSplit& split, const TrainConfig& cfg,
                                       const ViTConfig& vit, VolumeStore& store,
                                       int threads = 1);

// Ellipsoidal region annotation carried by synthetic volumes: the lesion for
// cases, the phantom region a lesion would have occupied for controls.
struct RegionInfo {
    std::array<double, 3> center{}; // z, y, x in voxel coordinates
    std::array<double, 3> radii{};  // rz, ry, rx in voxels
    bool applied = false;           // true when the intensity delta was added
};

// Dataset manifest: subjects plus optional per-subject region annotations.
struct Manifest {
    std::vector<Subject> subjects;
    std::map<std::string, RegionInfo> regions; // keyed by subject id
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

const Subject& find_subject(const std::vector<Subject>& subjects, const std::string& id);

} // namespace volformer
