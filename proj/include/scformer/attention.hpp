#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "scformer/ops.hpp"
#include "scformer/structured.hpp"

namespace scformer {

enum class Variant { triangular, conv };

inline const char* variant_name(Variant v) {
    return v == Variant::triangular ? "triangular" : "conv";
}

// Channel-wise multi-head block: channels are the tokens, every linear map
// inside is temporally constrained along the embedding axis.
template <typename T>
struct EncoderBlockParams {
    std::size_t dim = 0;
    std::size_t heads = 1;
    bool softmax_enabled = true;
    bool residual = true;
    bool layer_norm = false;
    StructuredTransform<T> q, k, v, f;
    std::optional<StructuredTransform<T>> f2;
};

template <typename T>
void validate_block(const EncoderBlockParams<T>& block) {
    if (block.dim == 0 || block.heads == 0 || block.dim % block.heads != 0) {
        throw ScfError(errc::config_invalid,
                       "encoder block: heads " + std::to_string(block.heads) +
                           " must divide dim " + std::to_string(block.dim));
    }
}

template <typename T>
EncoderBlockParams<T> make_encoder_block(std::size_t dim, std::size_t heads, Variant variant,
                                         const std::vector<std::size_t>& kernel_sizes,
                                         Rng& rng, bool softmax_enabled, bool residual,
                                         bool layer_norm, bool constrained, bool extra_ffn) {
    EncoderBlockParams<T> block;
    block.dim = dim;
    block.heads = heads;
    block.softmax_enabled = softmax_enabled;
    block.residual = residual;
    block.layer_norm = layer_norm;
    auto make_one = [&]() -> StructuredTransform<T> {
        if (variant == Variant::conv && constrained)
            return make_conv_stack<T>(dim, kernel_sizes, rng);
        return make_masked_linear<T>(dim, rng, constrained);
    };
    block.q = make_one();
    block.k = make_one();
    block.v = make_one();
    block.f = make_one();
    if (extra_ffn) block.f2 = make_one();
    validate_block(block);
    return block;
}

template <typename T>
struct Qkv {
    Tensor<T> q, k, v;
};

template <typename T>
Qkv<T> compute_qkv(const Tensor<T>& z, const EncoderBlockParams<T>& block) {
    return {relu(apply_transform(block.q, z)), relu(apply_transform(block.k, z)),
            relu(apply_transform(block.v, z))};
}

// Per-head scores Q^h (K^h)^T / sqrt(d/H); row-softmax when enabled.
template <typename T>
std::vector<Tensor<T>> attention_scores(const Tensor<T>& q, const Tensor<T>& k,
                                        std::size_t heads, bool softmax_enabled) {
    if (q.rank() != 2 || q.shape() != k.shape()) {
        throw ScfError(errc::shape_mismatch, "attention_scores: Q and K must be equal-shape matrices");
    }
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) {
        throw ScfError(errc::shape_mismatch,
                       "attention_scores: heads " + std::to_string(heads) +
                           " do not divide dim " + std::to_string(d));
    }
    const std::size_t dh = d / heads;
    const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<T>> scores;
    scores.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto raw = scale(matmul_nt(qh, kh), inv_scale);
        scores.push_back(softmax_enabled ? softmax_rows(raw) : raw);
    }
    return scores;
}

template <typename T>
Tensor<T> attend(const std::vector<Tensor<T>>& scores, const Tensor<T>& v,
                 std::size_t heads) {
    if (scores.size() != heads || heads == 0 || v.rank() != 2 || v.cols() % heads != 0) {
        throw ScfError(errc::shape_mismatch, "attend: scores/V head split mismatch");
    }
    const std::size_t dh = v.cols() / heads;
    std::vector<Tensor<T>> parts;
    parts.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        parts.push_back(matmul(scores[h], vh));
    }
    return concat_cols(parts);
}

template <typename T>
Tensor<T> output_projection(const Tensor<T>& x_cat, const EncoderBlockParams<T>& block) {
    return relu(apply_transform(block.f, x_cat));
}

// Raw per-head score values captured for inspection dumps.
template <typename T>
using ScoreTrace = std::vector<std::vector<T>>;

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& z, const EncoderBlockParams<T>& block,
                        ScoreTrace<T>* trace = nullptr) {
    validate_block(block);
    auto qkv = compute_qkv(z, block);
    auto scores = attention_scores(qkv.q, qkv.k, block.heads, block.softmax_enabled);
    if (trace) {
        trace->clear();
        for (const auto& s : scores) trace->push_back(s.value());
    }
    auto out = output_projection(attend(scores, qkv.v, block.heads), block);
    if (block.f2) out = relu(apply_transform(*block.f2, out));
    if (block.residual) out = add(z, out);
    if (block.layer_norm) out = layernorm_rows(out, static_cast<T>(1e-5));
    return out;
}

template <typename T, typename Fn>
void visit_params(EncoderBlockParams<T>& block, const std::string& prefix, Fn&& fn) {
    visit_params(block.q, prefix + ".q", fn);
    visit_params(block.k, prefix + ".k", fn);
    visit_params(block.v, prefix + ".v", fn);
    visit_params(block.f, prefix + ".f", fn);
    if (block.f2) visit_params(*block.f2, prefix + ".f2", fn);
}

}  // namespace scformer
