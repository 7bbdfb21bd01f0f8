#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

// Dense numeric kernels over flat row-major buffers, templated on the storage
// scalar. Production code instantiates float; the gradient-check path
// instantiates double. Reductions always accumulate in double.
namespace volformer::kern {

// c[i,j] = sum_t a[i,t] * b[t,j].  a: m x k, b: k x n, c: m x n. No aliasing.
template <class Real>
void matmul(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const Real* arow = a + i * k;
        for (std::int64_t t = 0; t < k; ++t) {
            const double av = static_cast<double>(arow[t]);
            const Real* brow = b + t * n;
            for (std::int64_t j = 0; j < n; ++j) {
                acc[static_cast<std::size_t>(j)] += av * static_cast<double>(brow[j]);
            }
        }
        Real* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<Real>(acc[static_cast<std::size_t>(j)]);
    }
}

// c[i,t] = sum_j a[i,j] * b[t,j]  (a times b-transposed). a: m x n, b: k x n, c: m x k.
template <class Real>
void matmul_nt(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* arow = a + i * n;
        Real* crow = c + i * k;
        for (std::int64_t t = 0; t < k; ++t) {
            const Real* brow = b + t * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                acc += static_cast<double>(arow[j]) * static_cast<double>(brow[j]);
            }
            crow[t] = static_cast<Real>(acc);
        }
    }
}

// c[t,j] = sum_i a[i,t] * b[i,j]  (a-transposed times b). a: m x k, b: m x n, c: k x n.
template <class Real>
void matmul_tn(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(k * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        const Real* brow = b + i * n;
        for (std::int64_t t = 0; t < k; ++t) {
            const double av = static_cast<double>(arow[t]);
            double* accrow = acc.data() + t * n;
            for (std::int64_t j = 0; j < n; ++j) {
                accrow[j] += av * static_cast<double>(brow[j]);
            }
        }
    }
    for (std::int64_t t = 0; t < k * n; ++t) c[t] = static_cast<Real>(acc[static_cast<std::size_t>(t)]);
}

template <class Real>
void add_row_vector(Real* x, const Real* b, std::int64_t rows, std::int64_t n) {
    for (std::int64_t i = 0; i < rows; ++i) {
        Real* row = x + i * n;
        for (std::int64_t j = 0; j < n; ++j) row[j] = static_cast<Real>(static_cast<double>(row[j]) + static_cast<double>(b[j]));
    }
}

// out[j] += sum_i x[i,j]; used for bias gradients.
template <class Real>
void add_col_sums(const Real* x, Real* out, std::int64_t rows, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < rows; ++i) {
        const Real* row = x + i * n;
        for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += static_cast<double>(row[j]);
    }
    for (std::int64_t j = 0; j < n; ++j) {
        out[j] = static_cast<Real>(static_cast<double>(out[j]) + acc[static_cast<std::size_t>(j)]);
    }
}

// In-place row softmax with max subtraction; rows are length n.
template <class Real>
void softmax_rows(Real* x, std::int64_t rows, std::int64_t n) {
    for (std::int64_t i = 0; i < rows; ++i) {
        Real* row = x + i * n;
        double m = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < n; ++j) m = std::max(m, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - m);
            row[j] = static_cast<Real>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < n; ++j) row[j] = static_cast<Real>(static_cast<double>(row[j]) * inv);
    }
}

// Softmax backward per row: ds = a * (da - sum(da * a)).
template <class Real>
void softmax_backward_rows(const Real* a, const Real* da, Real* ds, std::int64_t rows, std::int64_t n) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const Real* arow = a + i * n;
        const Real* darow = da + i * n;
        Real* dsrow = ds + i * n;
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) dot += static_cast<double>(arow[j]) * static_cast<double>(darow[j]);
        for (std::int64_t j = 0; j < n; ++j) {
            dsrow[j] = static_cast<Real>(static_cast<double>(arow[j]) * (static_cast<double>(darow[j]) - dot));
        }
    }
}

// y = gamma * (x - mean)/sqrt(var + eps) + beta per row. Caches the normalized
// rows and reciprocal stddev for the backward pass (pass nullptr to skip).
template <class Real>
void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, double eps, Real* y,
                     Real* xhat_cache, double* rstd_cache, std::int64_t rows, std::int64_t d) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const Real* row = x + i * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(row[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + eps);
        if (rstd_cache) rstd_cache[i] = rstd;
        Real* yrow = y + i * d;
        for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (static_cast<double>(row[j]) - mean) * rstd;
            if (xhat_cache) xhat_cache[i * d + j] = static_cast<Real>(xh);
            yrow[j] = static_cast<Real>(xh * static_cast<double>(gamma[j]) + static_cast<double>(beta[j]));
        }
    }
}

// Backward of layer_norm_rows. dgamma/dbeta are accumulated into.
template <class Real>
void layer_norm_backward(const Real* xhat, const double* rstd, const Real* gamma, const Real* dy,
                         Real* dx, Real* dgamma, Real* dbeta, std::int64_t rows, std::int64_t d) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const Real* xh = xhat + i * d;
        const Real* dyr = dy + i * d;
        Real* dxr = dx + i * d;
        double sum_dyh = 0.0, sum_dyh_xh = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double dyh = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            sum_dyh += dyh;
            sum_dyh_xh += dyh * static_cast<double>(xh[j]);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
            const double dyh = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            const double v = dyh - sum_dyh * inv_d - static_cast<double>(xh[j]) * sum_dyh_xh * inv_d;
            dxr[j] = static_cast<Real>(v * rstd[i]);
        }
        for (std::int64_t j = 0; j < d; ++j) {
            dgamma[j] = static_cast<Real>(static_cast<double>(dgamma[j]) +
                                          static_cast<double>(dyr[j]) * static_cast<double>(xh[j]));
            dbeta[j] = static_cast<Real>(static_cast<double>(dbeta[j]) + static_cast<double>(dyr[j]));
        }
    }
}

inline double gelu_scalar(double x) {
    const double c = 0.7978845608028653558798921198687; // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_scalar(double x) {
    const double c = 0.7978845608028653558798921198687;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

template <class Real>
void gelu(const Real* x, Real* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = static_cast<Real>(gelu_scalar(static_cast<double>(x[i])));
}

template <class Real>
void gelu_backward(const Real* x, const Real* dy, Real* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        dx[i] = static_cast<Real>(static_cast<double>(dy[i]) * gelu_grad_scalar(static_cast<double>(x[i])));
    }
}

// Catmull-Rom cubic weight (a = -0.5), support |t| < 2.
inline double catmull_rom(double t) {
    const double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return a * (((t - 5.0) * t + 8.0) * t - 4.0);
    return 0.0;
}

namespace detail {

// src coordinate for align-corners sampling; out == 1 samples index 0.
inline double align_corners_src(std::int64_t i, std::int64_t in, std::int64_t out) {
    if (out == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

} // namespace detail

// Channelwise bicubic resize of an h x w x d grid (align-corners, Catmull-Rom).
// Separable: vertical pass into a double buffer, then horizontal. Resizing to
// the same h and w reproduces the input bit for bit.
template <class Real>
void bicubic_resize_2d(const Real* in, std::int64_t h, std::int64_t w, std::int64_t d,
                       Real* out, std::int64_t oh, std::int64_t ow) {
    std::vector<double> tmp(static_cast<std::size_t>(oh * w * d));
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        const double src = detail::align_corners_src(oy, h, oh);
        const std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        const double frac = src - static_cast<double>(i0);
        double wt[4];
        std::int64_t idx[4];
        for (int t = 0; t < 4; ++t) {
            wt[t] = catmull_rom(frac - static_cast<double>(t - 1));
            idx[t] = std::clamp<std::int64_t>(i0 + t - 1, 0, h - 1);
        }
        double* trow = tmp.data() + oy * w * d;
        for (std::int64_t c = 0; c < w * d; ++c) {
            double acc = 0.0;
            for (int t = 0; t < 4; ++t) acc += wt[t] * static_cast<double>(in[idx[t] * w * d + c]);
            trow[c] = acc;
        }
    }
    for (std::int64_t ox = 0; ox < ow; ++ox) {
        const double src = detail::align_corners_src(ox, w, ow);
        const std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        const double frac = src - static_cast<double>(i0);
        double wt[4];
        std::int64_t idx[4];
        for (int t = 0; t < 4; ++t) {
            wt[t] = catmull_rom(frac - static_cast<double>(t - 1));
            idx[t] = std::clamp<std::int64_t>(i0 + t - 1, 0, w - 1);
        }
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const double* trow = tmp.data() + oy * w * d;
            Real* orow = out + (oy * ow + ox) * d;
            for (std::int64_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (int t = 0; t < 4; ++t) acc += wt[t] * trow[idx[t] * d + c];
                orow[c] = static_cast<Real>(acc);
            }
        }
    }
}

// Bilinear align-corners resize of a single h x w plane.
template <class Real>
void bilinear_resize_plane(const Real* in, std::int64_t h, std::int64_t w, Real* out,
                           std::int64_t oh, std::int64_t ow) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        const double sy = detail::align_corners_src(oy, h, oh);
        const std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(sy)), 0, h - 1);
        const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            const double sx = detail::align_corners_src(ox, w, ow);
            const std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(sx)), 0, w - 1);
            const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            const double v00 = static_cast<double>(in[y0 * w + x0]);
            const double v01 = static_cast<double>(in[y0 * w + x1]);
            const double v10 = static_cast<double>(in[y1 * w + x0]);
            const double v11 = static_cast<double>(in[y1 * w + x1]);
            const double top = v00 + (v01 - v00) * fx;
            const double bot = v10 + (v11 - v10) * fx;
            out[oy * ow + ox] = static_cast<Real>(top + (bot - top) * fy);
        }
    }
}

// Splits a D x 3 x H x W stack into 16x16 patches flattened channel-major then
// row-major; patch order is slice-major, then patch-row, then patch-column.
template <class Real>
void patchify(const Real* x, std::int64_t d, std::int64_t h, std::int64_t w, Real* out) {
    const std::int64_t p = 16;
    const std::int64_t gh = h / p, gw = w / p;
    std::int64_t row = 0;
    for (std::int64_t s = 0; s < d; ++s) {
        for (std::int64_t by = 0; by < gh; ++by) {
            for (std::int64_t bx = 0; bx < gw; ++bx, ++row) {
                Real* dst = out + row * (3 * p * p);
                for (std::int64_t c = 0; c < 3; ++c) {
                    const Real* plane = x + ((s * 3 + c) * h + by * p) * w + bx * p;
                    for (std::int64_t py = 0; py < p; ++py) {
                        const Real* srcrow = plane + py * w;
                        for (std::int64_t px = 0; px < p; ++px) *dst++ = srcrow[px];
                    }
                }
            }
        }
    }
}

template <class Real>
bool all_finite(const Real* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(x[i]))) return false;
    }
    return true;
}

} // namespace volformer::kern
