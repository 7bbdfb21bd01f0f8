#include "volformer/rollout.hpp"

#include "volformer/checkpoint.hpp"
#include "volformer/error.hpp"
#include "volformer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace volformer {

Tensor attention_rollout(const AttentionStack& stack) {
    if (stack.per_layer.empty()) fail(ErrorKind::value, "attention stack is empty");
    const std::int64_t t = stack.tokens;
    const std::int64_t heads = stack.heads;
    if (t < 1 || heads < 1) fail(ErrorKind::value, "attention stack geometry must be positive");

    std::vector<double> rollout(static_cast<std::size_t>(t * t), 0.0);
    for (std::int64_t i = 0; i < t; ++i) rollout[static_cast<std::size_t>(i * t + i)] = 1.0;
    std::vector<double> mixed(rollout.size());
    std::vector<double> next(rollout.size());

    for (std::size_t layer = 0; layer < stack.per_layer.size(); ++layer) {
        const Tensor& a = stack.per_layer[layer];
        if (a.shape != std::vector<std::int64_t>{heads, t, t}) {
            fail(ErrorKind::shape, "layer " + std::to_string(layer) + " attention has shape " +
                                       shape_str(a.shape) + ", expected " +
                                       shape_str({heads, t, t}));
        }
        // Head mean with the residual mixed in, then row renormalization.
        for (std::int64_t i = 0; i < t; ++i) {
            double* row = mixed.data() + i * t;
            for (std::int64_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::int64_t h = 0; h < heads; ++h) {
                    const double v = static_cast<double>(a.data[static_cast<std::size_t>((h * t + i) * t + j)]);
                    if (!(v >= 0.0)) {
                        fail(ErrorKind::value, "layer " + std::to_string(layer) + " head " +
                                                   std::to_string(h) + " has a negative or NaN entry");
                    }
                    s += v;
                }
                row[j] = 0.5 * s / static_cast<double>(heads) + (i == j ? 0.5 : 0.0);
            }
        }
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t i = 0; i < t; ++i) {
                double sum = 0.0;
                const float* row = a.data.data() + (h * t + i) * t;
                for (std::int64_t j = 0; j < t; ++j) sum += static_cast<double>(row[j]);
                if (std::fabs(sum - 1.0) > 1e-3) {
                    fail(ErrorKind::value, "layer " + std::to_string(layer) + " head " +
                                               std::to_string(h) + " row " + std::to_string(i) +
                                               " is not stochastic (sum " + std::to_string(sum) + ")");
                }
            }
        }
        for (std::int64_t i = 0; i < t; ++i) {
            double* row = mixed.data() + i * t;
            double sum = 0.0;
            for (std::int64_t j = 0; j < t; ++j) sum += row[j];
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < t; ++j) row[j] *= inv;
        }
        // rollout = mixed . rollout
        for (std::int64_t i = 0; i < t; ++i) {
            double* out = next.data() + i * t;
            std::fill(out, out + t, 0.0);
            const double* mrow = mixed.data() + i * t;
            for (std::int64_t k = 0; k < t; ++k) {
                const double m = mrow[k];
                const double* rrow = rollout.data() + k * t;
                for (std::int64_t j = 0; j < t; ++j) out[j] += m * rrow[j];
            }
        }
        rollout.swap(next);
    }

    Tensor out({t, t});
    for (std::size_t i = 0; i < rollout.size(); ++i) out.data[i] = static_cast<float>(rollout[i]);
    return out;
}

Tensor class_heatmap(const Tensor& rollout, const PatchGeometry& geometry, std::int64_t out_h,
                     std::int64_t out_w) {
    const std::int64_t n = geometry.tokens();
    if (rollout.rank() != 2 || rollout.shape[0] != rollout.shape[1] || rollout.shape[0] != n + 1) {
        fail(ErrorKind::shape, "rollout " + shape_str(rollout.shape) +
                                   " does not match geometry with " + std::to_string(n) +
                                   " patch tokens");
    }
    if (out_h < geometry.grid_h || out_w < geometry.grid_w || out_h < 1 || out_w < 1) {
        fail(ErrorKind::value, "heatmap output size must be at least the patch grid");
    }
    const std::int64_t d = geometry.depth, gh = geometry.grid_h, gw = geometry.grid_w;
    // Row 0 minus its class-column entry, in patchify order.
    const float* row0 = rollout.data.data() + 1;
    Tensor heat({d, out_h, out_w});
    std::vector<float> slice(static_cast<std::size_t>(gh * gw));
    for (std::int64_t s = 0; s < d; ++s) {
        std::copy(row0 + s * gh * gw, row0 + (s + 1) * gh * gw, slice.begin());
        kern::bilinear_resize_plane(slice.data(), gh, gw,
                                    heat.data.data() + s * out_h * out_w, out_h, out_w);
    }
    float lo = heat.data[0], hi = heat.data[0];
    for (float v : heat.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (float& v : heat.data) v = (v - lo) * inv;
    } else {
        std::fill(heat.data.begin(), heat.data.end(), 0.0f);
    }
    return heat;
}

std::vector<std::uint8_t> pgm_slice_bytes(const Tensor& heatmap, std::int64_t slice) {
    if (heatmap.rank() != 3) {
        fail(ErrorKind::shape, "heatmap must be D x H x W, got " + shape_str(heatmap.shape));
    }
    const std::int64_t d = heatmap.shape[0], h = heatmap.shape[1], w = heatmap.shape[2];
    if (slice < 0 || slice >= d) fail(ErrorKind::value, "slice index out of range");
    char header[64];
    const int hlen = std::snprintf(header, sizeof(header), "P5\n%lld %lld\n255\n",
                                   static_cast<long long>(w), static_cast<long long>(h));
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(hlen) +
                                    static_cast<std::size_t>(h * w));
    std::copy(header, header + hlen, bytes.begin());
    const float* plane = heatmap.data.data() + slice * h * w;
    for (std::int64_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(static_cast<double>(plane[i]), 0.0, 1.0);
        bytes[static_cast<std::size_t>(hlen + i)] =
            static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    return bytes;
}

std::vector<std::string> export_heatmap(const Tensor& heatmap, const std::string& prefix) {
    if (heatmap.rank() != 3) {
        fail(ErrorKind::shape, "heatmap must be D x H x W, got " + shape_str(heatmap.shape));
    }
    std::vector<std::string> written;
    const std::string nta_path = prefix + ".nta";
    NamedTensorList list;
    list.emplace_back("heatmap", heatmap);
    write_archive(nta_path, list);
    written.push_back(nta_path);
    for (std::int64_t s = 0; s < heatmap.shape[0]; ++s) {
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "_s%03lld.pgm", static_cast<long long>(s));
        const std::string path = prefix + suffix;
        const auto bytes = pgm_slice_bytes(heatmap, s);
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) fail(ErrorKind::io, "write to '" + path + "' failed");
        written.push_back(path);
    }
    return written;
}

} // namespace volformer
