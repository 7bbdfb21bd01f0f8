#pragma once

#include "volformer/tensor.hpp"
#include "volformer/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace volformer {

// DeiT-Ti-shaped encoder configuration. Defaults are the published DeiT-Ti
// shape; tests and the synthetic pipeline run reduced (dim, heads, depth).
struct ViTConfig {
    int dim = 192;
    int heads = 3;
    int depth = 12;
    int mlp_ratio = 4;
    int patch = 16;
    int out_logits = 1;

    int head_dim() const { return dim / heads; }
    int mlp_hidden() const { return dim * mlp_ratio; }
    void validate() const;
};

template <class Real>
struct BlockParamsT {
    std::vector<Real> ln1_g, ln1_b;          // dim
    std::vector<Real> qkv_w, qkv_b;          // dim x 3dim, 3dim
    std::vector<Real> attn_out_w, attn_out_b; // dim x dim, dim
    std::vector<Real> ln2_g, ln2_b;          // dim
    std::vector<Real> mlp_fc1_w, mlp_fc1_b;  // dim x hidden, hidden
    std::vector<Real> mlp_fc2_w, mlp_fc2_b;  // hidden x dim, dim
};

// All learnable tensors of the model, stored as flat row-major buffers. The
// position grid is depth x grid_h x grid_w x dim.
template <class Real>
struct ParamsT {
    ViTConfig cfg;
    std::int64_t pos_depth = 1, pos_grid_h = 0, pos_grid_w = 0;
    std::vector<Real> proj_w, proj_b;        // 768 x dim, dim
    std::vector<Real> class_token;           // dim
    std::vector<Real> pos_cls;               // dim
    std::vector<Real> pos_grid;              // D*Gh*Gw*dim
    std::vector<BlockParamsT<Real>> blocks;
    std::vector<Real> final_ln_g, final_ln_b; // dim
    std::vector<Real> head_w, head_b;        // dim, 1
};

using ModelParams = ParamsT<float>;
using BlockParams = BlockParamsT<float>;

// Zero-filled parameter set for the given config and position-table geometry.
template <class Real>
ParamsT<Real> make_zero_params(const ViTConfig& cfg, std::int64_t pos_depth,
                               std::int64_t pos_grid_h, std::int64_t pos_grid_w);

// Calls fn(name, buffer, shape) for every parameter tensor, in the canonical
// checkpoint order ("proj.w", "proj.b", "cls", "pos.cls", "pos.grid",
// "blk{i}...", "final_ln.g", "final_ln.b", "head.w", "head.b").
template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
    const std::int64_t dim = p.cfg.dim;
    const std::int64_t hidden = p.cfg.mlp_hidden();
    using Shape = std::vector<std::int64_t>;
    fn("proj.w", p.proj_w, Shape{768, dim});
    fn("proj.b", p.proj_b, Shape{dim});
    fn("cls", p.class_token, Shape{1, dim});
    fn("pos.cls", p.pos_cls, Shape{1, dim});
    fn("pos.grid", p.pos_grid, Shape{p.pos_depth, p.pos_grid_h, p.pos_grid_w, dim});
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "blk" + std::to_string(i) + ".";
        fn(pre + "ln1.g", b.ln1_g, Shape{dim});
        fn(pre + "ln1.b", b.ln1_b, Shape{dim});
        fn(pre + "qkv.w", b.qkv_w, Shape{dim, 3 * dim});
        fn(pre + "qkv.b", b.qkv_b, Shape{3 * dim});
        fn(pre + "attn_out.w", b.attn_out_w, Shape{dim, dim});
        fn(pre + "attn_out.b", b.attn_out_b, Shape{dim});
        fn(pre + "ln2.g", b.ln2_g, Shape{dim});
        fn(pre + "ln2.b", b.ln2_b, Shape{dim});
        fn(pre + "mlp.fc1.w", b.mlp_fc1_w, Shape{dim, hidden});
        fn(pre + "mlp.fc1.b", b.mlp_fc1_b, Shape{hidden});
        fn(pre + "mlp.fc2.w", b.mlp_fc2_w, Shape{hidden, dim});
        fn(pre + "mlp.fc2.b", b.mlp_fc2_b, Shape{dim});
    }
    fn("final_ln.g", p.final_ln_g, Shape{dim});
    fn("final_ln.b", p.final_ln_b, Shape{dim});
    fn("head.w", p.head_w, Shape{dim, 1});
    fn("head.b", p.head_b, Shape{1});
}

// Post-softmax attention matrices: per layer a {heads, T, T} tensor.
struct AttentionStack {
    std::int64_t heads = 0, tokens = 0;
    std::vector<Tensor> per_layer;
};

// Multi-head self-attention on an already-normalized T x dim input: the
// attention branch only, no residual. Returns (output, attention {heads,T,T}).
std::pair<Tensor, Tensor> mhsa_forward(const Tensor& x_norm, const BlockParams& bp, int heads);

// Runs the block stack plus final layer norm on an assembled sequence and
// returns row 0 (the encoded class embedding).
Tensor encoder_forward(const TokenSequence& seq, const ModelParams& params,
                       AttentionStack* attn_out = nullptr);

double classify(const Tensor& class_embedding, const ModelParams& params); // logit
double sigmoid(double logit);

// Full pipeline: pad -> replicate -> patchify -> project -> assemble ->
// encoder -> classify -> sigmoid.
std::pair<double, AttentionStack> forward(const Volume& v, const ModelParams& params);

struct LossGrads {
    double loss = 0.0;
    double prob = 0.0;
    ModelParams grads;
};

// Binary cross-entropy loss and hand-derived gradients for every parameter.
LossGrads loss_and_grads(const Volume& v, int label, const ModelParams& params);

// Throws a numeric error naming the first non-finite parameter tensor.
void check_params_finite(const ModelParams& p, const std::string& what);

extern template ParamsT<float> make_zero_params<float>(const ViTConfig&, std::int64_t, std::int64_t,
                                                       std::int64_t);
extern template ParamsT<double> make_zero_params<double>(const ViTConfig&, std::int64_t, std::int64_t,
                                                         std::int64_t);

// float <-> double parameter conversion (the double path backs the
// finite-difference gradient check).
ParamsT<double> to_f64(const ModelParams& p);
ModelParams to_f32(const ParamsT<double>& p);

} // namespace volformer
