#include "volformer/encoder.hpp"

#include "volformer/encoder_impl.hpp"
#include "volformer/error.hpp"

#include <string>

namespace volformer {

void ViTConfig::validate() const {
    if (dim <= 0 || heads <= 0 || depth <= 0 || mlp_ratio <= 0) {
        fail(ErrorKind::config, "encoder config fields must be positive");
    }
    if (dim % heads != 0) {
        fail(ErrorKind::config, "encoder dim " + std::to_string(dim) +
                                    " is not divisible by heads " + std::to_string(heads));
    }
    if (patch != 16) {
        fail(ErrorKind::config, "patch size must be 16, got " + std::to_string(patch));
    }
    if (out_logits != 1) {
        fail(ErrorKind::config, "the classification head emits a single logit");
    }
}

template <class Real>
ParamsT<Real> make_zero_params(const ViTConfig& cfg, std::int64_t pos_depth,
                               std::int64_t pos_grid_h, std::int64_t pos_grid_w) {
    cfg.validate();
    if (pos_depth < 1 || pos_grid_h < 1 || pos_grid_w < 1) {
        fail(ErrorKind::config, "position-table geometry must be at least 1x1x1");
    }
    ParamsT<Real> p;
    p.cfg = cfg;
    p.pos_depth = pos_depth;
    p.pos_grid_h = pos_grid_h;
    p.pos_grid_w = pos_grid_w;
    p.blocks.resize(static_cast<std::size_t>(cfg.depth));
    visit_params(p, [](const std::string&, std::vector<Real>& buf,
                       const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto s : shape) n *= s;
        buf.assign(static_cast<std::size_t>(n), Real(0));
    });
    return p;
}

template ParamsT<float> make_zero_params<float>(const ViTConfig&, std::int64_t, std::int64_t,
                                                std::int64_t);
template ParamsT<double> make_zero_params<double>(const ViTConfig&, std::int64_t, std::int64_t,
                                                  std::int64_t);

std::pair<Tensor, Tensor> mhsa_forward(const Tensor& x_norm, const BlockParams& bp, int heads) {
    if (x_norm.rank() != 2) {
        fail(ErrorKind::shape, "mhsa input must be a T x dim matrix, got " + shape_str(x_norm.shape));
    }
    const std::int64_t t = x_norm.shape[0];
    const std::int64_t dim = x_norm.shape[1];
    if (heads < 1 || dim % heads != 0) {
        fail(ErrorKind::config, "dim " + std::to_string(dim) + " is not divisible by heads " +
                                    std::to_string(heads));
    }
    if (bp.qkv_w.size() != static_cast<std::size_t>(dim * 3 * dim) ||
        bp.qkv_b.size() != static_cast<std::size_t>(3 * dim) ||
        bp.attn_out_w.size() != static_cast<std::size_t>(dim * dim) ||
        bp.attn_out_b.size() != static_cast<std::size_t>(dim)) {
        fail(ErrorKind::shape, "attention weights do not match dim " + std::to_string(dim));
    }
    std::vector<float> qkv, attn, ctx;
    enc::attention_forward<float>(dim, heads, bp, x_norm.data.data(), t, qkv, attn, ctx);
    Tensor out;
    out.shape = {t, dim};
    out.data.resize(static_cast<std::size_t>(t * dim));
    kern::matmul(ctx.data(), bp.attn_out_w.data(), out.data.data(), t, dim, dim);
    kern::add_row_vector(out.data.data(), bp.attn_out_b.data(), t, dim);
    Tensor a;
    a.shape = {heads, t, t};
    a.data = std::move(attn);
    return {std::move(out), std::move(a)};
}

namespace {

void collect_attention(const enc::Workspace<float>& ws, const ViTConfig& cfg,
                       AttentionStack& out) {
    out.heads = cfg.heads;
    out.tokens = ws.tokens;
    out.per_layer.clear();
    out.per_layer.reserve(ws.blocks.size());
    for (const auto& c : ws.blocks) {
        Tensor a;
        a.shape = {cfg.heads, ws.tokens, ws.tokens};
        a.data = c.attn;
        out.per_layer.push_back(std::move(a));
    }
}

} // namespace

Tensor encoder_forward(const TokenSequence& seq, const ModelParams& params,
                       AttentionStack* attn_out) {
    params.cfg.validate();
    if (seq.tokens.rank() != 2 || seq.tokens.shape[1] != params.cfg.dim) {
        fail(ErrorKind::shape, "token sequence " + shape_str(seq.tokens.shape) +
                                   " does not match encoder dim " + std::to_string(params.cfg.dim));
    }
    const std::int64_t t = seq.tokens.shape[0];
    enc::Workspace<float> ws;
    ws.tokens = t;
    ws.x0 = seq.tokens.data;
    enc::encode_and_classify(params, ws);
    if (attn_out) collect_attention(ws, params.cfg, *attn_out);
    Tensor cls;
    cls.shape = {params.cfg.dim};
    cls.data.assign(ws.f.begin(), ws.f.begin() + params.cfg.dim);
    return cls;
}

double classify(const Tensor& class_embedding, const ModelParams& params) {
    if (class_embedding.numel() != params.cfg.dim) {
        fail(ErrorKind::shape, "class embedding " + shape_str(class_embedding.shape) +
                                   " does not match encoder dim " + std::to_string(params.cfg.dim));
    }
    double logit = static_cast<double>(params.head_b[0]);
    for (int j = 0; j < params.cfg.dim; ++j) {
        logit += static_cast<double>(class_embedding.data[static_cast<std::size_t>(j)]) *
                 static_cast<double>(params.head_w[static_cast<std::size_t>(j)]);
    }
    return logit;
}

double sigmoid(double logit) { return enc::sigmoid_stable(logit); }

std::pair<double, AttentionStack> forward(const Volume& v, const ModelParams& params) {
    params.cfg.validate();
    enc::Workspace<float> ws;
    enc::forward_volume(v, params, ws);
    AttentionStack stack;
    collect_attention(ws, params.cfg, stack);
    return {ws.prob, std::move(stack)};
}

LossGrads loss_and_grads(const Volume& v, int label, const ModelParams& params) {
    params.cfg.validate();
    if (label != 0 && label != 1) {
        fail(ErrorKind::value, "label must be 0 or 1, got " + std::to_string(label));
    }
    enc::Workspace<float> ws;
    enc::forward_volume(v, params, ws);
    LossGrads out;
    out.prob = ws.prob;
    out.loss = enc::bce_loss(ws.prob, label);
    out.grads = make_zero_params<float>(params.cfg, params.pos_depth, params.pos_grid_h,
                                        params.pos_grid_w);
    enc::backward_volume(params, ws, label, out.grads);
    check_params_finite(out.grads, "gradients");
    return out;
}

void check_params_finite(const ModelParams& p, const std::string& what) {
    visit_params(p, [&](const std::string& name, const std::vector<float>& buf,
                        const std::vector<std::int64_t>&) {
        if (!kern::all_finite(buf.data(), static_cast<std::int64_t>(buf.size()))) {
            fail(ErrorKind::numeric, "non-finite values in " + what + " tensor '" + name + "'");
        }
    });
}

namespace {

template <class To, class From>
ParamsT<To> convert_params(const ParamsT<From>& p) {
    ParamsT<To> out = make_zero_params<To>(p.cfg, p.pos_depth, p.pos_grid_h, p.pos_grid_w);
    std::vector<std::vector<To>*> dst;
    visit_params(out, [&](const std::string&, std::vector<To>& buf,
                          const std::vector<std::int64_t>&) { dst.push_back(&buf); });
    std::size_t i = 0;
    visit_params(p, [&](const std::string&, const std::vector<From>& buf,
                        const std::vector<std::int64_t>&) {
        std::vector<To>& d = *dst[i++];
        for (std::size_t j = 0; j < buf.size(); ++j) d[j] = static_cast<To>(buf[j]);
    });
    return out;
}

} // namespace

ParamsT<double> to_f64(const ModelParams& p) { return convert_params<double, float>(p); }
ModelParams to_f32(const ParamsT<double>& p) { return convert_params<float, double>(p); }

} // namespace volformer
