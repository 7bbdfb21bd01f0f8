#include "volformer/tensor.hpp"

#include "volformer/error.hpp"
#include "volformer/kernels.hpp"

#include <cmath>
#include <sstream>

namespace volformer {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void check_shape(const std::vector<std::int64_t>& shape) {
    if (shape.empty()) fail(ErrorKind::shape, "tensor shape must have at least one dimension");
    for (auto s : shape) {
        if (s < 1) fail(ErrorKind::shape, "tensor shape entries must be >= 1, got " + shape_str(shape));
    }
}

} // namespace

Tensor::Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<float> values)
    : shape(std::move(s)), data(std::move(values)) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        fail(ErrorKind::shape, "tensor data length " + std::to_string(data.size()) +
                                   " does not match shape " + shape_str(shape));
    }
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        fail(ErrorKind::shape,
             "matmul shape mismatch: " + shape_str(a.shape) + " . " + shape_str(b.shape));
    }
    Tensor c({a.shape[0], b.shape[1]});
    kern::matmul(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
    if (!kern::all_finite(c.data.data(), c.numel())) {
        fail(ErrorKind::numeric, "matmul produced non-finite values");
    }
    return c;
}

Tensor softmax_lastdim(const Tensor& x) {
    const std::int64_t n = x.shape.back();
    const std::int64_t rows = x.numel() / n;
    for (float v : x.data) {
        if (std::isnan(v)) fail(ErrorKind::numeric, "softmax_lastdim: NaN in input");
    }
    Tensor y = x;
    kern::softmax_rows(y.data.data(), rows, n);
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::int64_t d = x.shape.back();
    if (gamma.numel() != d || beta.numel() != d) {
        fail(ErrorKind::shape, "layer_norm: gamma/beta length must match last dimension " +
                                   std::to_string(d));
    }
    if (eps <= 0.0) fail(ErrorKind::value, "layer_norm: eps must be positive");
    const std::int64_t rows = x.numel() / d;
    Tensor y(x.shape);
    kern::layer_norm_rows(x.data.data(), gamma.data.data(), beta.data.data(), eps, y.data.data(),
                          static_cast<float*>(nullptr), static_cast<double*>(nullptr), rows, d);
    return y;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape);
    kern::gelu(x.data.data(), y.data.data(), x.numel());
    return y;
}

Tensor bicubic_resize_2d(const Tensor& grid, std::int64_t out_h, std::int64_t out_w) {
    if (grid.rank() != 3) {
        fail(ErrorKind::shape, "bicubic_resize_2d expects an h x w x d grid, got " + shape_str(grid.shape));
    }
    const std::int64_t h = grid.shape[0], w = grid.shape[1], d = grid.shape[2];
    if (h < 2 || w < 2) {
        fail(ErrorKind::value, "bicubic_resize_2d: source grid " + shape_str(grid.shape) +
                                   " is degenerate (h,w must be >= 2); replicate instead of resizing");
    }
    if (out_h < 1 || out_w < 1) fail(ErrorKind::value, "bicubic_resize_2d: output sizes must be >= 1");
    Tensor out({out_h, out_w, d});
    kern::bicubic_resize_2d(grid.data.data(), h, w, d, out.data.data(), out_h, out_w);
    return out;
}

} // namespace volformer
