#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace volformer {

// Dense row-major 32-bit float tensor. Reductions inside the public ops
// accumulate in double and round to float on store.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s);                          // zero-filled
    Tensor(std::vector<std::int64_t> s, std::vector<float> values);

    std::int64_t numel() const;
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    float& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    float at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    float& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    float at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// c = a . b with 64-bit accumulation; throws a shape error naming both shapes
// when the inner dimensions disagree.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row softmax over the last dimension, max-subtracted. NaN input is an error.
Tensor softmax_lastdim(const Tensor& x);

// Per-row layer norm over the last dimension with affine parameters.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Elementwise tanh-approximation GELU.
Tensor gelu(const Tensor& x);

// Channelwise bicubic resize of an h x w x d grid (Catmull-Rom, align-corners).
// Identity sizes return the input bit for bit; h or w < 2 is an error.
Tensor bicubic_resize_2d(const Tensor& grid, std::int64_t out_h, std::int64_t out_w);

} // namespace volformer
