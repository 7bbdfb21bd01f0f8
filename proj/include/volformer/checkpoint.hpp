#pragma once

#include "volformer/encoder.hpp"
#include "volformer/tensor.hpp"
#include "volformer/tokenizer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

// NTA v1: a canonical named-tensor archive.
//
//   bytes 0..3   magic "NTA1"
//   bytes 4..11  header length, unsigned 64-bit little-endian
//   header       UTF-8 JSON object: name -> {dtype:"f32", shape:[...],
//                offset, nbytes}; offsets are relative to the payload start
//   payload      contiguous little-endian IEEE-754 32-bit floats
//
// Writes are canonical: names sorted lexicographically, offsets assigned in
// that order, compact JSON with sorted keys — equal content yields equal bytes.
namespace volformer {

using NamedTensors = std::map<std::string, Tensor>;
using NamedTensorList = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> serialize_archive(const NamedTensorList& tensors);
std::vector<std::uint8_t> serialize_archive(const NamedTensors& tensors);
NamedTensors deserialize_archive(const std::uint8_t* bytes, std::size_t size);

void write_archive(const std::string& path, const NamedTensorList& tensors);
void write_archive(const std::string& path, const NamedTensors& tensors);
NamedTensors read_archive(const std::string& path);

// Which pretrained tensors were copied, adapted, or re-initialized, plus the
// source/target position-table geometries. copied + adapted + reinitialized
// partition the target parameter names; adapted_with_resize is the subset of
// adapted whose grid was interpolated.
struct ImportReport {
    std::vector<std::string> copied;
    std::vector<std::string> adapted;
    std::vector<std::string> adapted_with_resize;
    std::vector<std::string> reinitialized;
    std::int64_t src_grid_h = 0, src_grid_w = 0;
    std::int64_t dst_depth = 0, dst_grid_h = 0, dst_grid_w = 0;
};

// Builds 3D model parameters from a 2D-pretrained archive: encoder, projection
// and class tensors copied verbatim; the position grid replicated per slice
// (bicubic-resized first if the patch grid differs); the head re-initialized
// from `seed` (truncated normal, std 0.02, zero bias).
std::pair<ModelParams, ImportReport> import_2d_vit(const NamedTensors& archive,
                                                   std::int64_t depth, std::int64_t grid_h,
                                                   std::int64_t grid_w, const ViTConfig& cfg,
                                                   std::uint64_t seed);

// Deterministic stand-in for a public 2D checkpoint: DeiT-style initialization
// (truncated normal std 0.02, unit layer-norm gains) over a Gh0 x Gw0 grid.
NamedTensors synthetic_pretrained_2d(const ViTConfig& cfg, std::int64_t grid_h0,
                                     std::int64_t grid_w0, std::uint64_t seed);

// Full model <-> archive under the documented name schema. Loading infers the
// position geometry from the pos.grid shape and validates against cfg.
NamedTensorList params_to_tensors(const ModelParams& params);
ModelParams tensors_to_params(const NamedTensors& tensors, const ViTConfig& cfg);
void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path, const ViTConfig& cfg);

// Volumes travel as one-tensor archives under the name "volume".
void save_volume(const std::string& path, const Volume& v);
Volume load_volume(const std::string& path);

} // namespace volformer
