#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "scformer/ops.hpp"
#include "scformer/random.hpp"
#include "scformer/tensor.hpp"

namespace scformer {

// Dense d x d map whose weight support is frozen to the upper triangle
// {(i,j): i <= j}: output position i reads only input positions >= i.
// With `constrained` off (ablation) the full square is free.
template <typename T>
struct MaskedLinear {
    std::size_t dim = 0;
    bool constrained = true;
    Tensor<T> weight;  // [dim, dim]
    Tensor<T> bias;    // [dim]
};

template <typename T>
MaskedLinear<T> make_masked_linear(std::size_t dim, Rng& rng, bool constrained = true) {
    MaskedLinear<T> layer;
    layer.dim = dim;
    layer.constrained = constrained;
    std::vector<T> w(dim * dim, T(0));
    for (std::size_t i = 0; i < dim; ++i) {
        const std::size_t fan_in = constrained ? dim - i : dim;
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        const std::size_t j0 = constrained ? i : 0;
        for (std::size_t j = j0; j < dim; ++j)
            w[i * dim + j] = static_cast<T>(rng.uniform(-s, s));
    }
    layer.weight = Tensor<T>::matrix(dim, dim, std::move(w), true);
    layer.bias = Tensor<T>::zeros({dim}, true);
    return layer;
}

template <typename T>
void mask_weights_inplace(MaskedLinear<T>& layer) {
    if (!layer.constrained) return;
    for (std::size_t i = 0; i < layer.dim; ++i)
        for (std::size_t j = 0; j < i; ++j) layer.weight.at(i, j) = T(0);
}

template <typename T>
void mask_weight_grad_inplace(MaskedLinear<T>& layer) {
    if (!layer.constrained) return;
    auto& g = layer.weight.grad();
    for (std::size_t i = 0; i < layer.dim; ++i)
        for (std::size_t j = 0; j < i; ++j) g[i * layer.dim + j] = T(0);
}

template <typename T>
std::size_t free_weight_count(const MaskedLinear<T>& layer) {
    return layer.constrained ? layer.dim * (layer.dim + 1) / 2 : layer.dim * layer.dim;
}

// out[c] = weight * Z[c] + bias, rows of Z being channels.
template <typename T>
Tensor<T> apply_masked(const MaskedLinear<T>& layer, const Tensor<T>& z) {
    if (z.rank() != 2 || z.cols() != layer.dim) {
        throw ScfError(errc::shape_mismatch,
                       "apply_masked: input " + shape_str(z.shape()) + " vs dim " +
                           std::to_string(layer.dim));
    }
    return add_rows(matmul_nt(z, layer.weight), layer.bias);
}

// Stack of causal correlation kernels, stride 1, far-end truncation.
template <typename T>
struct ConvKernelStack {
    std::size_t dim = 0;
    std::vector<Tensor<T>> kernels;  // each [k_i], 1 <= k_i <= dim
    Tensor<T> bias;                  // [dim]
};

template <typename T>
void validate_stack(const ConvKernelStack<T>& stack) {
    if (stack.dim == 0 || stack.kernels.empty()) {
        throw ScfError(errc::shape_mismatch, "conv stack: needs a positive dim and at least one kernel");
    }
    for (const auto& k : stack.kernels) {
        if (k.rank() != 1 || k.numel() == 0 || k.numel() > stack.dim) {
            throw ScfError(errc::shape_mismatch,
                           "conv stack: kernel size must lie in [1, dim], got " +
                               shape_str(k.shape()) + " for dim " + std::to_string(stack.dim));
        }
    }
}

template <typename T>
ConvKernelStack<T> make_conv_stack(std::size_t dim, const std::vector<std::size_t>& kernel_sizes,
                                   Rng& rng) {
    ConvKernelStack<T> stack;
    stack.dim = dim;
    for (std::size_t ks : kernel_sizes) {
        const double s = 1.0 / std::sqrt(static_cast<double>(ks));
        std::vector<T> w(ks);
        for (auto& v : w) v = static_cast<T>(rng.uniform(-s, s));
        stack.kernels.push_back(Tensor<T>::vector(std::move(w), true));
    }
    stack.bias = Tensor<T>::zeros({dim}, true);
    validate_stack(stack);
    return stack;
}

template <typename T>
Tensor<T> apply_conv_stack(const ConvKernelStack<T>& stack, const Tensor<T>& z) {
    validate_stack(stack);
    if (z.rank() != 2 || z.cols() != stack.dim) {
        throw ScfError(errc::shape_mismatch,
                       "apply_conv_stack: input " + shape_str(z.shape()) + " vs dim " +
                           std::to_string(stack.dim));
    }
    Tensor<T> out = z;
    for (const auto& k : stack.kernels) out = conv1d_rows(out, k);
    return add_rows(out, stack.bias);
}

// Row i carries kernel taps w_1..w_k starting at column i, truncated at the
// last column; equivalently sum_j w[j] * S^j for the upshift matrix S.
inline std::vector<double> toeplitz_from_kernel(const std::vector<double>& kernel,
                                                std::size_t dim) {
    if (kernel.empty() || kernel.size() > dim) {
        throw ScfError(errc::shape_mismatch,
                       "toeplitz_from_kernel: kernel size must lie in [1, dim]");
    }
    std::vector<double> m(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < kernel.size() && i + j < dim; ++j)
            m[i * dim + (i + j)] = kernel[j];
    return m;
}

// Verification path for the conv stack: multiplies out the per-kernel
// Toeplitz matrices with plain dense products, no shared code with
// apply_conv_stack. Always float64.
template <typename T>
std::vector<double> materialize_stack(const ConvKernelStack<T>& stack) {
    validate_stack(stack);
    const std::size_t d = stack.dim;
    std::vector<double> acc;
    for (const auto& kt : stack.kernels) {
        std::vector<double> kernel(kt.value().begin(), kt.value().end());
        auto layer = toeplitz_from_kernel(kernel, d);
        if (acc.empty()) {
            acc = std::move(layer);
            continue;
        }
        std::vector<double> next(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t t = 0; t < d; ++t) {
                const double l = layer[i * d + t];
                if (l == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) next[i * d + j] += l * acc[t * d + j];
            }
        acc = std::move(next);
    }
    return acc;
}

// Smallest number of size-k layers whose product has full upper-triangular
// support on a d x d map.
inline std::size_t min_layers_full_triangle(std::size_t d, std::size_t k) {
    if (k < 2) {
        throw ScfError(errc::shape_mismatch,
                       "min_layers_full_triangle: size-" + std::to_string(k) +
                           " kernels never widen the band");
    }
    if (d < k) {
        throw ScfError(errc::shape_mismatch, "min_layers_full_triangle: requires d >= k");
    }
    return (d - k + (k - 2)) / (k - 1) + 1;
}

inline std::size_t upper_band_width(const std::vector<double>& m, std::size_t d) {
    std::size_t band = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (m[i * d + j] != 0.0 && j >= i) band = std::max(band, j - i + 1);
    return band;
}

inline bool strictly_lower_is_zero(const std::vector<double>& m, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (m[i * d + j] != 0.0) return false;
    return true;
}

inline bool has_full_upper_support(const std::vector<double>& m, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j)
            if (m[i * d + j] == 0.0) return false;
    return true;
}

// Either flavor of temporally constrained map; the attention block treats
// them interchangeably.
template <typename T>
using StructuredTransform = std::variant<MaskedLinear<T>, ConvKernelStack<T>>;

template <typename T>
Tensor<T> apply_layer(const MaskedLinear<T>& layer, const Tensor<T>& z) {
    return apply_masked(layer, z);
}

template <typename T>
Tensor<T> apply_layer(const ConvKernelStack<T>& stack, const Tensor<T>& z) {
    return apply_conv_stack(stack, z);
}

template <typename T>
Tensor<T> apply_transform(const StructuredTransform<T>& tr, const Tensor<T>& z) {
    return std::visit([&](const auto& layer) { return apply_layer(layer, z); }, tr);
}

// Named handle to one parameter tensor; `masked` marks weights whose
// strictly-lower gradient entries must be zeroed before optimizer steps.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    bool masked = false;
};

template <typename T, typename Fn>
void visit_params(MaskedLinear<T>& layer, const std::string& prefix, Fn&& fn) {
    fn(ParamRef<T>{prefix + ".weight", layer.weight, layer.constrained});
    fn(ParamRef<T>{prefix + ".bias", layer.bias, false});
}

template <typename T, typename Fn>
void visit_params(ConvKernelStack<T>& stack, const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < stack.kernels.size(); ++i)
        fn(ParamRef<T>{prefix + ".kernel" + std::to_string(i), stack.kernels[i], false});
    fn(ParamRef<T>{prefix + ".bias", stack.bias, false});
}

template <typename T, typename Fn>
void visit_params(StructuredTransform<T>& tr, const std::string& prefix, Fn&& fn) {
    std::visit([&](auto& layer) { visit_params(layer, prefix, fn); }, tr);
}

// Free parameters of the linear part (weights/kernels, excluding bias).
template <typename T>
std::size_t transform_weight_count(const StructuredTransform<T>& tr) {
    if (std::holds_alternative<MaskedLinear<T>>(tr)) {
        return free_weight_count(std::get<MaskedLinear<T>>(tr));
    }
    const auto& stack = std::get<ConvKernelStack<T>>(tr);
    std::size_t n = 0;
    for (const auto& k : stack.kernels) n += k.numel();
    return n;
}

}  // namespace scformer
