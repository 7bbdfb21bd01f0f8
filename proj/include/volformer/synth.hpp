#pragma once

#include "volformer/cohort.hpp"
#include "volformer/tokenizer.hpp"

#include <cstdint>
#include <vector>

namespace volformer {

// Synthetic stand-in for a matched MRI cohort: demographically matched
// case/control pairs whose volumes are a smooth random background plus
// Gaussian noise; case volumes carry an ellipsoidal lesion of intensity
// +lesion_delta at a random joint-region location. Controls record the same
// randomly drawn region without the intensity change (the "phantom" region the
// closed-form detector thresholds on). Deterministic per seed.
struct SynthConfig {
    int n_pairs = 200;
    std::int64_t depth = 8, height = 64, width = 64;
    double lesion_delta = 0.4;
    double noise_sd = 0.1;
    std::uint64_t seed = 0;
    void validate() const;
};

// volumes[i] belongs to manifest.subjects[i]; subject volume paths are set to
// "volumes/<id>.nta" relative to a dataset root the caller chooses.
struct SynthDataset {
    Manifest manifest;
    std::vector<Volume> volumes;
};

SynthDataset synthesize_cohort(const SynthConfig& cfg);

// Mean intensity over the voxels inside a subject's (possibly phantom)
// ellipsoidal region — the closed-form detector statistic.
double region_mean(const Volume& v, const RegionInfo& region);

} // namespace volformer
