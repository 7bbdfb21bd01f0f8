#pragma once

#include "volformer/tensor.hpp"

#include <cstdint>

namespace volformer {

// A D x H x W grid of voxel intensities normalized to [0,1].
struct Volume {
    std::int64_t depth = 0, height = 0, width = 0;
    Tensor voxels; // shape {D, H, W}
};

// Builds a Volume and validates the [0,1] intensity invariant.
Volume make_volume(std::int64_t depth, std::int64_t height, std::int64_t width,
                   std::vector<float> values);

constexpr std::int64_t kPatchSize = 16;

struct PatchGeometry {
    std::int64_t patch = kPatchSize;
    std::int64_t depth = 0;   // slices
    std::int64_t grid_h = 0;  // H / 16
    std::int64_t grid_w = 0;  // W / 16
    std::int64_t tokens() const { return depth * grid_h * grid_w; }
};

// Geometry of a padded volume; height/width must be multiples of 16.
PatchGeometry patch_geometry(std::int64_t depth, std::int64_t height, std::int64_t width);

// Token count after padding, for arbitrary sizes: D * ceil(H/16) * ceil(W/16).
std::int64_t padded_token_count(std::int64_t depth, std::int64_t height, std::int64_t width);

// (N+1) x E token matrix with the class token at row 0.
struct TokenSequence {
    Tensor tokens;
    PatchGeometry geometry;
};

// Per-slice position embeddings plus the class-token embedding. At
// initialization from a 2D source all depth slices are identical copies.
struct PositionTable {
    Tensor class_pe; // {1, E}
    Tensor patch_pe; // {D, Gh, Gw, E}
};

// out[d,c,:,:] = voxels[d,:,:] for each of the three channels.
Tensor replicate_channels(const Volume& v);

// Zero-pads bottom/right so H and W become multiples of 16. Already-divisible
// volumes are returned unchanged.
Volume pad_to_patch_multiple(const Volume& v);

// D x 3 x H x W -> N x 768 patch matrix; channel-major then row-major within a
// patch, slice-major then row then column across patches.
Tensor patchify(const Tensor& x);

// patches . proj_w + proj_b.
Tensor project_patches(const Tensor& patches, const Tensor& proj_w, const Tensor& proj_b);

// Adapts a 2D-pretrained position grid to (D, Gh, Gw): bicubic resize when the
// grid size changes, then D independent copies of the resulting slice.
PositionTable build_position_table(const Tensor& pe2d_class, const Tensor& pe2d_grid,
                                   std::int64_t depth, std::int64_t grid_h, std::int64_t grid_w);

// Row 0 = class_token + class_pe; row i>=1 = embeddings[i-1] + flattened patch_pe.
TokenSequence assemble_sequence(const Tensor& embeddings, const Tensor& class_token,
                                const PositionTable& pt);

} // namespace volformer
