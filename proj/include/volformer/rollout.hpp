#pragma once

#include "volformer/encoder.hpp"
#include "volformer/tensor.hpp"
#include "volformer/tokenizer.hpp"

#include <string>

namespace volformer {

// Attention Rollout: per layer, average the heads, mix in the residual path
// (A' = (A + I)/2), row-renormalize, and left-multiply the running product:
// rollout = A'_L * ... * A'_1. Input rows must be stochastic within 1e-3.
Tensor attention_rollout(const AttentionStack& stack);

// Projects rollout row 0 (the class token) back onto the volume: drop the
// class column, reshape the N patch weights to D x Gh x Gw, upscale each slice
// bilinearly to out_h x out_w, min-max normalize to [0,1] over the whole
// volume (a constant map normalizes to all zeros).
Tensor class_heatmap(const Tensor& rollout, const PatchGeometry& geometry, std::int64_t out_h,
                     std::int64_t out_w);

// Writes <prefix>.nta (tensor "heatmap") and one binary PGM (P5, maxval 255,
// value = round(255 * v)) per slice as <prefix>_s<index>.pgm.
// Returns the paths written, the archive first.
std::vector<std::string> export_heatmap(const Tensor& heatmap, const std::string& prefix);

// The PGM bytes for one slice; exposed for bit-exact format tests.
std::vector<std::uint8_t> pgm_slice_bytes(const Tensor& heatmap, std::int64_t slice);

} // namespace volformer
