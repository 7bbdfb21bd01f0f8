#pragma once

#include "volformer/encoder.hpp"
#include "volformer/error.hpp"
#include "volformer/kernels.hpp"
#include "volformer/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Templated forward/backward over the storage scalar. The float instantiation
// is the production path; the double instantiation backs the gradient check.
namespace volformer::enc {

constexpr double kProbClamp = 1e-7;

inline double sigmoid_stable(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <class Real>
struct BlockCache {
    std::vector<Real> x_in;      // T x d
    std::vector<Real> h1, h1_xhat; // T x d
    std::vector<double> h1_rstd; // T
    std::vector<Real> qkv;       // T x 3d
    std::vector<Real> attn;      // heads x T x T, post softmax
    std::vector<Real> ctx;       // T x d
    std::vector<Real> x2;        // T x d
    std::vector<Real> h2, h2_xhat;
    std::vector<double> h2_rstd;
    std::vector<Real> m1, g;     // T x hidden
};

template <class Real>
struct Workspace {
    std::int64_t tokens = 0; // T = N + 1
    PatchGeometry geom;
    std::vector<Real> patches;  // N x 768
    std::vector<Real> x0;       // T x d
    std::vector<BlockCache<Real>> blocks;
    std::vector<Real> x_final, f, f_xhat;
    std::vector<double> f_rstd;
    double logit = 0.0, prob = 0.0;
};

// Replication + patchify fused: each patch row holds the same 16x16 block
// three times (channel-major). Equivalent to patchify(replicate_channels(v)).
template <class Real>
void patchify_volume(const float* vox, std::int64_t d, std::int64_t h, std::int64_t w, Real* out) {
    const std::int64_t p = kPatchSize;
    const std::int64_t gh = h / p, gw = w / p;
    std::int64_t row = 0;
    for (std::int64_t s = 0; s < d; ++s) {
        for (std::int64_t by = 0; by < gh; ++by) {
            for (std::int64_t bx = 0; bx < gw; ++bx, ++row) {
                Real* dst = out + row * (3 * p * p);
                for (std::int64_t py = 0; py < p; ++py) {
                    const float* src = vox + (s * h + by * p + py) * w + bx * p;
                    for (std::int64_t px = 0; px < p; ++px) dst[py * p + px] = static_cast<Real>(src[px]);
                }
                std::memcpy(dst + p * p, dst, static_cast<std::size_t>(p * p) * sizeof(Real));
                std::memcpy(dst + 2 * p * p, dst, static_cast<std::size_t>(p * p) * sizeof(Real));
            }
        }
    }
}

template <class Real>
void tokenize(const Volume& padded, const ParamsT<Real>& p, Workspace<Real>& ws) {
    const std::int64_t dim = p.cfg.dim;
    ws.geom = patch_geometry(padded.depth, padded.height, padded.width);
    if (ws.geom.depth != p.pos_depth || ws.geom.grid_h != p.pos_grid_h ||
        ws.geom.grid_w != p.pos_grid_w) {
        fail(ErrorKind::data, "volume geometry " + std::to_string(ws.geom.depth) + "x" +
                                  std::to_string(ws.geom.grid_h) + "x" + std::to_string(ws.geom.grid_w) +
                                  " (slices x patch grid) does not match the model position table " +
                                  std::to_string(p.pos_depth) + "x" + std::to_string(p.pos_grid_h) + "x" +
                                  std::to_string(p.pos_grid_w));
    }
    const std::int64_t n = ws.geom.tokens();
    ws.tokens = n + 1;
    ws.patches.resize(static_cast<std::size_t>(n * 768));
    patchify_volume(padded.voxels.data.data(), padded.depth, padded.height, padded.width,
                    ws.patches.data());
    // project + assemble
    ws.x0.assign(static_cast<std::size_t>(ws.tokens * dim), Real(0));
    kern::matmul(ws.patches.data(), p.proj_w.data(), ws.x0.data() + dim, n, 768, dim);
    kern::add_row_vector(ws.x0.data() + dim, p.proj_b.data(), n, dim);
    for (std::int64_t j = 0; j < dim; ++j) {
        ws.x0[static_cast<std::size_t>(j)] =
            static_cast<Real>(static_cast<double>(p.class_token[static_cast<std::size_t>(j)]) +
                              static_cast<double>(p.pos_cls[static_cast<std::size_t>(j)]));
    }
    Real* rows = ws.x0.data() + dim;
    for (std::int64_t i = 0; i < n * dim; ++i) {
        rows[i] = static_cast<Real>(static_cast<double>(rows[i]) +
                                    static_cast<double>(p.pos_grid[static_cast<std::size_t>(i)]));
    }
}

// Attention sublayer on normalized input h1; fills qkv/attn/ctx caches.
template <class Real>
void attention_forward(std::int64_t dim, std::int64_t heads, const BlockParamsT<Real>& bp,
                       const Real* h1, std::int64_t t, std::vector<Real>& qkv,
                       std::vector<Real>& attn, std::vector<Real>& ctx) {
    const std::int64_t dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    qkv.resize(static_cast<std::size_t>(t * 3 * dim));
    kern::matmul(h1, bp.qkv_w.data(), qkv.data(), t, dim, 3 * dim);
    kern::add_row_vector(qkv.data(), bp.qkv_b.data(), t, 3 * dim);
    attn.resize(static_cast<std::size_t>(heads * t * t));
    ctx.assign(static_cast<std::size_t>(t * dim), Real(0));
    std::vector<Real> qh(static_cast<std::size_t>(t * dh)), kh(qh.size()), vh(qh.size()),
        ch(qh.size());
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < t; ++i) {
            const Real* row = qkv.data() + i * 3 * dim;
            std::memcpy(qh.data() + i * dh, row + h * dh, static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(kh.data() + i * dh, row + dim + h * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(vh.data() + i * dh, row + 2 * dim + h * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
        }
        Real* a = attn.data() + h * t * t;
        kern::matmul_nt(qh.data(), kh.data(), a, t, dh, t);
        for (std::int64_t i = 0; i < t * t; ++i) {
            a[i] = static_cast<Real>(static_cast<double>(a[i]) * scale);
        }
        kern::softmax_rows(a, t, t);
        kern::matmul(a, vh.data(), ch.data(), t, t, dh);
        for (std::int64_t i = 0; i < t; ++i) {
            std::memcpy(ctx.data() + i * dim + h * dh, ch.data() + i * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
        }
    }
}

// One pre-norm block: x += MHSA(LN1(x)); x += MLP(LN2(x)). Returns x3.
template <class Real>
std::vector<Real> block_forward(const ParamsT<Real>& p, const BlockParamsT<Real>& bp,
                                std::vector<Real> x, std::int64_t t, BlockCache<Real>& c) {
    const std::int64_t dim = p.cfg.dim;
    const std::int64_t hidden = p.cfg.mlp_hidden();
    c.x_in = std::move(x);
    c.h1.resize(c.x_in.size());
    c.h1_xhat.resize(c.x_in.size());
    c.h1_rstd.resize(static_cast<std::size_t>(t));
    kern::layer_norm_rows(c.x_in.data(), bp.ln1_g.data(), bp.ln1_b.data(), 1e-6, c.h1.data(),
                          c.h1_xhat.data(), c.h1_rstd.data(), t, dim);
    attention_forward<Real>(dim, p.cfg.heads, bp, c.h1.data(), t, c.qkv, c.attn, c.ctx);
    std::vector<Real> attn_out(c.x_in.size());
    kern::matmul(c.ctx.data(), bp.attn_out_w.data(), attn_out.data(), t, dim, dim);
    kern::add_row_vector(attn_out.data(), bp.attn_out_b.data(), t, dim);
    c.x2.resize(c.x_in.size());
    for (std::size_t i = 0; i < c.x2.size(); ++i) {
        c.x2[i] = static_cast<Real>(static_cast<double>(c.x_in[i]) + static_cast<double>(attn_out[i]));
    }
    c.h2.resize(c.x2.size());
    c.h2_xhat.resize(c.x2.size());
    c.h2_rstd.resize(static_cast<std::size_t>(t));
    kern::layer_norm_rows(c.x2.data(), bp.ln2_g.data(), bp.ln2_b.data(), 1e-6, c.h2.data(),
                          c.h2_xhat.data(), c.h2_rstd.data(), t, dim);
    c.m1.resize(static_cast<std::size_t>(t * hidden));
    kern::matmul(c.h2.data(), bp.mlp_fc1_w.data(), c.m1.data(), t, dim, hidden);
    kern::add_row_vector(c.m1.data(), bp.mlp_fc1_b.data(), t, hidden);
    c.g.resize(c.m1.size());
    kern::gelu(c.m1.data(), c.g.data(), static_cast<std::int64_t>(c.m1.size()));
    std::vector<Real> m2(c.x2.size());
    kern::matmul(c.g.data(), bp.mlp_fc2_w.data(), m2.data(), t, hidden, dim);
    kern::add_row_vector(m2.data(), bp.mlp_fc2_b.data(), t, dim);
    std::vector<Real> x3(c.x2.size());
    for (std::size_t i = 0; i < x3.size(); ++i) {
        x3[i] = static_cast<Real>(static_cast<double>(c.x2[i]) + static_cast<double>(m2[i]));
    }
    return x3;
}

// Block stack + final LN + linear head; ws.x0 must already be assembled.
template <class Real>
void encode_and_classify(const ParamsT<Real>& p, Workspace<Real>& ws) {
    const std::int64_t t = ws.tokens;
    const std::int64_t dim = p.cfg.dim;
    ws.blocks.resize(p.blocks.size());
    std::vector<Real> x = ws.x0;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        x = block_forward(p, p.blocks[b], std::move(x), t, ws.blocks[b]);
        if (!kern::all_finite(x.data(), static_cast<std::int64_t>(x.size()))) {
            fail(ErrorKind::numeric, "non-finite activation after block " + std::to_string(b));
        }
    }
    ws.x_final = std::move(x);
    ws.f.resize(ws.x_final.size());
    ws.f_xhat.resize(ws.x_final.size());
    ws.f_rstd.resize(static_cast<std::size_t>(t));
    kern::layer_norm_rows(ws.x_final.data(), p.final_ln_g.data(), p.final_ln_b.data(), 1e-6,
                          ws.f.data(), ws.f_xhat.data(), ws.f_rstd.data(), t, dim);
    double logit = static_cast<double>(p.head_b[0]);
    for (std::int64_t j = 0; j < dim; ++j) {
        logit += static_cast<double>(ws.f[static_cast<std::size_t>(j)]) *
                 static_cast<double>(p.head_w[static_cast<std::size_t>(j)]);
    }
    ws.logit = logit;
    ws.prob = sigmoid_stable(logit);
}

template <class Real>
void forward_volume(const Volume& v, const ParamsT<Real>& p, Workspace<Real>& ws) {
    const Volume padded = pad_to_patch_multiple(v);
    tokenize(padded, p, ws);
    encode_and_classify(p, ws);
}

inline double bce_loss(double prob, int label) {
    const double pc = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
    return label ? -std::log(pc) : -std::log(1.0 - pc);
}

// dL/dlogit; zero where the probability clamp is active.
inline double bce_dlogit(double prob, int label) {
    if (prob < kProbClamp || prob > 1.0 - kProbClamp) return 0.0;
    return prob - static_cast<double>(label);
}

template <class Real>
void add_scaled(std::vector<Real>& dst, const Real* src, std::size_t n, double s = 1.0) {
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] = static_cast<Real>(static_cast<double>(dst[i]) + s * static_cast<double>(src[i]));
    }
}

template <class Real>
void attention_backward(std::int64_t dim, std::int64_t heads, const BlockParamsT<Real>& bp,
                        const BlockCache<Real>& c, std::int64_t t, const Real* dctx,
                        BlockParamsT<Real>& gb, std::vector<Real>& dh1) {
    const std::int64_t dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Real> dqkv(static_cast<std::size_t>(t * 3 * dim), Real(0));
    std::vector<Real> qh(static_cast<std::size_t>(t * dh)), kh(qh.size()), vh(qh.size());
    std::vector<Real> dch(qh.size()), da(static_cast<std::size_t>(t * t)), ds(da.size());
    std::vector<Real> dqh(qh.size()), dkh(qh.size()), dvh(qh.size());
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < t; ++i) {
            const Real* row = c.qkv.data() + i * 3 * dim;
            std::memcpy(qh.data() + i * dh, row + h * dh, static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(kh.data() + i * dh, row + dim + h * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(vh.data() + i * dh, row + 2 * dim + h * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(dch.data() + i * dh, dctx + i * dim + h * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
        }
        const Real* a = c.attn.data() + h * t * t;
        kern::matmul_nt(dch.data(), vh.data(), da.data(), t, dh, t); // dA = dctx . v^T
        kern::matmul_tn(a, dch.data(), dvh.data(), t, t, dh);        // dv = A^T . dctx
        kern::softmax_backward_rows(a, da.data(), ds.data(), t, t);
        for (auto& v : ds) v = static_cast<Real>(static_cast<double>(v) * scale);
        kern::matmul(ds.data(), kh.data(), dqh.data(), t, t, dh);    // dq = scale*dS . k
        kern::matmul_tn(ds.data(), qh.data(), dkh.data(), t, t, dh); // dk = scale*dS^T . q
        for (std::int64_t i = 0; i < t; ++i) {
            Real* row = dqkv.data() + i * 3 * dim;
            std::memcpy(row + h * dh, dqh.data() + i * dh, static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(row + dim + h * dh, dkh.data() + i * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
            std::memcpy(row + 2 * dim + h * dh, dvh.data() + i * dh,
                        static_cast<std::size_t>(dh) * sizeof(Real));
        }
    }
    // qkv = h1 . Wqkv + b
    std::vector<Real> dw(bp.qkv_w.size());
    kern::matmul_tn(c.h1.data(), dqkv.data(), dw.data(), t, dim, 3 * dim);
    add_scaled(gb.qkv_w, dw.data(), dw.size());
    kern::add_col_sums(dqkv.data(), gb.qkv_b.data(), t, 3 * dim);
    dh1.resize(static_cast<std::size_t>(t * dim));
    kern::matmul_nt(dqkv.data(), bp.qkv_w.data(), dh1.data(), t, 3 * dim, dim);
}

// Backward through one block; dx3 is the gradient of the block output. Returns
// the gradient of the block input.
template <class Real>
std::vector<Real> block_backward(const ParamsT<Real>& p, const BlockParamsT<Real>& bp,
                                 const BlockCache<Real>& c, std::int64_t t,
                                 const std::vector<Real>& dx3, BlockParamsT<Real>& gb) {
    const std::int64_t dim = p.cfg.dim;
    const std::int64_t hidden = p.cfg.mlp_hidden();
    // x3 = x2 + m2; m2 = g . W2 + b2
    std::vector<Real> dg(static_cast<std::size_t>(t * hidden));
    kern::matmul_nt(dx3.data(), bp.mlp_fc2_w.data(), dg.data(), t, dim, hidden);
    {
        std::vector<Real> dw(bp.mlp_fc2_w.size());
        kern::matmul_tn(c.g.data(), dx3.data(), dw.data(), t, hidden, dim);
        add_scaled(gb.mlp_fc2_w, dw.data(), dw.size());
        kern::add_col_sums(dx3.data(), gb.mlp_fc2_b.data(), t, dim);
    }
    std::vector<Real> dm1(dg.size());
    kern::gelu_backward(c.m1.data(), dg.data(), dm1.data(), static_cast<std::int64_t>(dg.size()));
    // m1 = h2 . W1 + b1
    std::vector<Real> dh2(static_cast<std::size_t>(t * dim));
    kern::matmul_nt(dm1.data(), bp.mlp_fc1_w.data(), dh2.data(), t, hidden, dim);
    {
        std::vector<Real> dw(bp.mlp_fc1_w.size());
        kern::matmul_tn(c.h2.data(), dm1.data(), dw.data(), t, dim, hidden);
        add_scaled(gb.mlp_fc1_w, dw.data(), dw.size());
        kern::add_col_sums(dm1.data(), gb.mlp_fc1_b.data(), t, hidden);
    }
    // dx2 = dx3 (residual) + LN2 backward
    std::vector<Real> dx2 = dx3;
    {
        std::vector<Real> dx2_ln(dx2.size());
        kern::layer_norm_backward(c.h2_xhat.data(), c.h2_rstd.data(), bp.ln2_g.data(), dh2.data(),
                                  dx2_ln.data(), gb.ln2_g.data(), gb.ln2_b.data(), t, dim);
        add_scaled(dx2, dx2_ln.data(), dx2_ln.size());
    }
    // x2 = x_in + ctx . Wo + bo
    std::vector<Real> dctx(static_cast<std::size_t>(t * dim));
    kern::matmul_nt(dx2.data(), bp.attn_out_w.data(), dctx.data(), t, dim, dim);
    {
        std::vector<Real> dw(bp.attn_out_w.size());
        kern::matmul_tn(c.ctx.data(), dx2.data(), dw.data(), t, dim, dim);
        add_scaled(gb.attn_out_w, dw.data(), dw.size());
        kern::add_col_sums(dx2.data(), gb.attn_out_b.data(), t, dim);
    }
    std::vector<Real> dh1;
    attention_backward<Real>(dim, p.cfg.heads, bp, c, t, dctx.data(), gb, dh1);
    std::vector<Real> dx_in = dx2;
    {
        std::vector<Real> dx_ln(dx_in.size());
        kern::layer_norm_backward(c.h1_xhat.data(), c.h1_rstd.data(), bp.ln1_g.data(), dh1.data(),
                                  dx_ln.data(), gb.ln1_g.data(), gb.ln1_b.data(), t, dim);
        add_scaled(dx_in, dx_ln.data(), dx_ln.size());
    }
    return dx_in;
}

template <class Real>
void backward_volume(const ParamsT<Real>& p, const Workspace<Real>& ws, int label,
                     ParamsT<Real>& grads) {
    const std::int64_t t = ws.tokens;
    const std::int64_t dim = p.cfg.dim;
    const double dlogit = bce_dlogit(ws.prob, label);
    // head
    grads.head_b[0] = static_cast<Real>(static_cast<double>(grads.head_b[0]) + dlogit);
    std::vector<Real> df(static_cast<std::size_t>(t * dim), Real(0));
    for (std::int64_t j = 0; j < dim; ++j) {
        grads.head_w[static_cast<std::size_t>(j)] = static_cast<Real>(
            static_cast<double>(grads.head_w[static_cast<std::size_t>(j)]) +
            dlogit * static_cast<double>(ws.f[static_cast<std::size_t>(j)]));
        df[static_cast<std::size_t>(j)] =
            static_cast<Real>(dlogit * static_cast<double>(p.head_w[static_cast<std::size_t>(j)]));
    }
    std::vector<Real> dx(static_cast<std::size_t>(t * dim));
    kern::layer_norm_backward(ws.f_xhat.data(), ws.f_rstd.data(), p.final_ln_g.data(), df.data(),
                              dx.data(), grads.final_ln_g.data(), grads.final_ln_b.data(), t, dim);
    for (std::size_t b = p.blocks.size(); b-- > 0;) {
        dx = block_backward(p, p.blocks[b], ws.blocks[b], t, dx, grads.blocks[b]);
    }
    // x0 row 0 = cls + pos.cls; rows 1.. = projected patches + pos.grid
    add_scaled(grads.class_token, dx.data(), static_cast<std::size_t>(dim));
    add_scaled(grads.pos_cls, dx.data(), static_cast<std::size_t>(dim));
    const Real* dpatch_rows = dx.data() + dim;
    const std::int64_t n = t - 1;
    add_scaled(grads.pos_grid, dpatch_rows, static_cast<std::size_t>(n * dim));
    {
        std::vector<Real> dw(grads.proj_w.size());
        kern::matmul_tn(ws.patches.data(), dpatch_rows, dw.data(), n, 768, dim);
        add_scaled(grads.proj_w, dw.data(), dw.size());
        kern::add_col_sums(dpatch_rows, grads.proj_b.data(), n, dim);
    }
}

template <class Real>
double loss_from_volume(const Volume& v, int label, const ParamsT<Real>& p) {
    Workspace<Real> ws;
    forward_volume(v, p, ws);
    return bce_loss(ws.prob, label);
}

} // namespace volformer::enc
