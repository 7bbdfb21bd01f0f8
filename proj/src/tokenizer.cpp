#include "volformer/tokenizer.hpp"

#include "volformer/error.hpp"
#include "volformer/kernels.hpp"

#include <cstring>

namespace volformer {

Volume make_volume(std::int64_t depth, std::int64_t height, std::int64_t width,
                   std::vector<float> values) {
    if (depth < 1 || height < 1 || width < 1) {
        fail(ErrorKind::shape, "volume dimensions must be positive");
    }
    Tensor vox({depth, height, width}, std::move(values));
    for (float v : vox.data) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            fail(ErrorKind::value, "volume intensities must lie in [0,1]");
        }
    }
    return Volume{depth, height, width, std::move(vox)};
}

PatchGeometry patch_geometry(std::int64_t depth, std::int64_t height, std::int64_t width) {
    if (height % kPatchSize != 0 || width % kPatchSize != 0) {
        fail(ErrorKind::shape, "patch_geometry: H and W must be multiples of 16; "
                               "run pad_to_patch_multiple first");
    }
    PatchGeometry g;
    g.depth = depth;
    g.grid_h = height / kPatchSize;
    g.grid_w = width / kPatchSize;
    return g;
}

std::int64_t padded_token_count(std::int64_t depth, std::int64_t height, std::int64_t width) {
    const auto ceil_div = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
    return depth * ceil_div(height, kPatchSize) * ceil_div(width, kPatchSize);
}

Tensor replicate_channels(const Volume& v) {
    Tensor out({v.depth, 3, v.height, v.width});
    const std::int64_t plane = v.height * v.width;
    for (std::int64_t d = 0; d < v.depth; ++d) {
        const float* src = v.voxels.data.data() + d * plane;
        for (std::int64_t c = 0; c < 3; ++c) {
            std::memcpy(out.data.data() + (d * 3 + c) * plane, src,
                        static_cast<std::size_t>(plane) * sizeof(float));
        }
    }
    return out;
}

Volume pad_to_patch_multiple(const Volume& v) {
    const std::int64_t ph = (v.height + kPatchSize - 1) / kPatchSize * kPatchSize;
    const std::int64_t pw = (v.width + kPatchSize - 1) / kPatchSize * kPatchSize;
    if (ph == v.height && pw == v.width) return v;
    Volume out;
    out.depth = v.depth;
    out.height = ph;
    out.width = pw;
    out.voxels = Tensor({v.depth, ph, pw});
    for (std::int64_t d = 0; d < v.depth; ++d) {
        for (std::int64_t y = 0; y < v.height; ++y) {
            std::memcpy(out.voxels.data.data() + (d * ph + y) * pw,
                        v.voxels.data.data() + (d * v.height + y) * v.width,
                        static_cast<std::size_t>(v.width) * sizeof(float));
        }
    }
    return out;
}

Tensor patchify(const Tensor& x) {
    if (x.rank() != 4 || x.shape[1] != 3) {
        fail(ErrorKind::shape, "patchify expects a D x 3 x H x W tensor, got " + shape_str(x.shape));
    }
    const std::int64_t d = x.shape[0], h = x.shape[2], w = x.shape[3];
    if (h % kPatchSize != 0 || w % kPatchSize != 0) {
        fail(ErrorKind::shape, "patchify: H and W must be multiples of 16; "
                               "run pad_to_patch_multiple first");
    }
    const std::int64_t n = d * (h / kPatchSize) * (w / kPatchSize);
    Tensor out({n, 3 * kPatchSize * kPatchSize});
    kern::patchify(x.data.data(), d, h, w, out.data.data());
    return out;
}

Tensor project_patches(const Tensor& patches, const Tensor& proj_w, const Tensor& proj_b) {
    if (patches.rank() != 2 || proj_w.rank() != 2 || patches.shape[1] != proj_w.shape[0] ||
        proj_b.numel() != proj_w.shape[1]) {
        fail(ErrorKind::shape, "project_patches shape mismatch: patches " + shape_str(patches.shape) +
                                   ", proj_w " + shape_str(proj_w.shape) + ", proj_b " +
                                   shape_str(proj_b.shape));
    }
    Tensor out = matmul(patches, proj_w);
    kern::add_row_vector(out.data.data(), proj_b.data.data(), out.shape[0], out.shape[1]);
    return out;
}

PositionTable build_position_table(const Tensor& pe2d_class, const Tensor& pe2d_grid,
                                   std::int64_t depth, std::int64_t grid_h, std::int64_t grid_w) {
    if (pe2d_grid.rank() != 3) {
        fail(ErrorKind::shape, "build_position_table: pe2d_grid must be Gh0 x Gw0 x E, got " +
                                   shape_str(pe2d_grid.shape));
    }
    const std::int64_t gh0 = pe2d_grid.shape[0], gw0 = pe2d_grid.shape[1], e = pe2d_grid.shape[2];
    if (pe2d_class.numel() != e) {
        fail(ErrorKind::shape, "build_position_table: class embedding width must match grid width");
    }
    if (depth < 1 || grid_h < 1 || grid_w < 1) {
        fail(ErrorKind::shape, "build_position_table: target geometry must be positive");
    }
    Tensor slice = (grid_h == gh0 && grid_w == gw0) ? pe2d_grid
                                                    : bicubic_resize_2d(pe2d_grid, grid_h, grid_w);
    PositionTable pt;
    pt.class_pe = Tensor({1, e}, pe2d_class.data);
    pt.patch_pe = Tensor({depth, grid_h, grid_w, e});
    const std::int64_t slice_len = grid_h * grid_w * e;
    for (std::int64_t d = 0; d < depth; ++d) {
        std::memcpy(pt.patch_pe.data.data() + d * slice_len, slice.data.data(),
                    static_cast<std::size_t>(slice_len) * sizeof(float));
    }
    return pt;
}

TokenSequence assemble_sequence(const Tensor& embeddings, const Tensor& class_token,
                                const PositionTable& pt) {
    const std::int64_t e = pt.patch_pe.shape[3];
    const std::int64_t n = pt.patch_pe.shape[0] * pt.patch_pe.shape[1] * pt.patch_pe.shape[2];
    if (embeddings.rank() != 2 || embeddings.shape[0] != n || embeddings.shape[1] != e ||
        class_token.numel() != e || pt.class_pe.numel() != e) {
        fail(ErrorKind::shape, "assemble_sequence: geometry mismatch between embeddings " +
                                   shape_str(embeddings.shape) + " and position table " +
                                   shape_str(pt.patch_pe.shape));
    }
    TokenSequence seq;
    seq.geometry.depth = pt.patch_pe.shape[0];
    seq.geometry.grid_h = pt.patch_pe.shape[1];
    seq.geometry.grid_w = pt.patch_pe.shape[2];
    seq.tokens = Tensor({n + 1, e});
    for (std::int64_t j = 0; j < e; ++j) {
        seq.tokens.at(0, j) = static_cast<float>(static_cast<double>(class_token.at(j)) +
                                                 static_cast<double>(pt.class_pe.at(j)));
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const float* emb = embeddings.data.data() + i * e;
        const float* pe = pt.patch_pe.data.data() + i * e;
        float* dst = seq.tokens.data.data() + (i + 1) * e;
        for (std::int64_t j = 0; j < e; ++j) {
            dst[j] = static_cast<float>(static_cast<double>(emb[j]) + static_cast<double>(pe[j]));
        }
    }
    return seq;
}

} // namespace volformer
