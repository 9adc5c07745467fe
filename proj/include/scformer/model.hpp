#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scformer/attention.hpp"
#include "scformer/ops.hpp"
#include "scformer/structured.hpp"

namespace scformer {

struct ModelConfig {
    std::size_t lookback = 96;
    std::size_t horizon = 96;
    std::size_t channels = 0;
    std::size_t embed_dim = 128;
    std::size_t hippo_order = 64;
    std::size_t depth = 2;
    std::size_t heads = 8;
    Variant variant = Variant::triangular;
    std::vector<std::size_t> kernel_sizes{32, 32, 32};
    bool softmax = true;
    bool residual = true;
    bool layer_norm = false;
    bool extra_ffn = false;
    bool use_hippo = true;
    bool use_lookback = true;
    bool constrained = true;
    std::string precision = "f64";
};

inline void validate_config(const ModelConfig& cfg) {
    auto positive = [](std::size_t v, const char* field) {
        if (v == 0) {
            throw ScfError(errc::config_invalid,
                           std::string("config field '") + field + "' must be >= 1");
        }
    };
    positive(cfg.lookback, "lookback");
    positive(cfg.horizon, "horizon");
    positive(cfg.channels, "channels");
    positive(cfg.embed_dim, "embed_dim");
    positive(cfg.hippo_order, "hippo_order");
    positive(cfg.depth, "depth");
    positive(cfg.heads, "heads");
    if (cfg.embed_dim % cfg.heads != 0) {
        throw ScfError(errc::config_invalid, "config field 'heads' must divide 'embed_dim'");
    }
    if (cfg.variant == Variant::conv && cfg.constrained) {
        if (cfg.kernel_sizes.empty()) {
            throw ScfError(errc::config_invalid, "config field 'kernel_sizes' must be nonempty");
        }
        for (std::size_t k : cfg.kernel_sizes) {
            if (k == 0 || k > cfg.embed_dim) {
                throw ScfError(errc::config_invalid,
                               "config field 'kernel_sizes' entries must lie in [1, embed_dim]");
            }
        }
    }
    if (!cfg.use_hippo && !cfg.use_lookback) {
        throw ScfError(errc::config_invalid,
                       "config: at least one of the lookback and hippo paths must be enabled");
    }
    if (cfg.precision != "f32" && cfg.precision != "f64") {
        throw ScfError(errc::config_invalid, "config field 'precision' must be 'f32' or 'f64'");
    }
}

inline std::size_t fusion_input_dim(const ModelConfig& cfg) {
    return (cfg.use_lookback ? cfg.embed_dim : 0) + (cfg.use_hippo ? cfg.hippo_order : 0);
}

// Embedding fusion weights. The inner MLP embeds the look-back per channel,
// the outer MLP fuses it with the historical-state coefficients; both are
// plain dense maps with one hidden ReLU layer (temporal constraints only
// apply inside the encoder blocks).
template <typename T>
struct EmbedParams {
    Tensor<T> inner_w1, inner_b1, inner_w2, inner_b2;  // L -> d -> d
    Tensor<T> outer_w1, outer_b1, outer_w2, outer_b2;  // fusion_input -> d -> d
};

template <typename T>
struct ModelParams {
    EmbedParams<T> embed;
    std::vector<EncoderBlockParams<T>> blocks;
    Tensor<T> decoder_w;  // [horizon, d], channel-shared
    Tensor<T> decoder_b;  // [horizon]
};

namespace detail {

template <typename T>
Tensor<T> make_dense(std::size_t rows, std::size_t cols, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    std::vector<T> w(rows * cols);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-s, s));
    return Tensor<T>::matrix(rows, cols, std::move(w), true);
}

}  // namespace detail

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    Rng rng(seed);
    ModelParams<T> p;
    const std::size_t d = cfg.embed_dim;

    if (cfg.use_lookback) {
        p.embed.inner_w1 = detail::make_dense<T>(d, cfg.lookback, rng);
        p.embed.inner_b1 = Tensor<T>::zeros({d}, true);
        p.embed.inner_w2 = detail::make_dense<T>(d, d, rng);
        p.embed.inner_b2 = Tensor<T>::zeros({d}, true);
    }
    p.embed.outer_w1 = detail::make_dense<T>(d, fusion_input_dim(cfg), rng);
    p.embed.outer_b1 = Tensor<T>::zeros({d}, true);
    p.embed.outer_w2 = detail::make_dense<T>(d, d, rng);
    p.embed.outer_b2 = Tensor<T>::zeros({d}, true);

    for (std::size_t b = 0; b < cfg.depth; ++b) {
        p.blocks.push_back(make_encoder_block<T>(d, cfg.heads, cfg.variant, cfg.kernel_sizes,
                                                 rng, cfg.softmax, cfg.residual,
                                                 cfg.layer_norm, cfg.constrained,
                                                 cfg.extra_ffn));
    }

    p.decoder_w = detail::make_dense<T>(cfg.horizon, d, rng);
    p.decoder_b = Tensor<T>::zeros({cfg.horizon}, true);
    return p;
}

template <typename T, typename Fn>
void visit_params(ModelParams<T>& p, Fn&& fn) {
    auto dense = [&](const char* name, Tensor<T>& t) {
        if (t.defined()) fn(ParamRef<T>{name, t, false});
    };
    dense("embed.inner.w1", p.embed.inner_w1);
    dense("embed.inner.b1", p.embed.inner_b1);
    dense("embed.inner.w2", p.embed.inner_w2);
    dense("embed.inner.b2", p.embed.inner_b2);
    dense("embed.outer.w1", p.embed.outer_w1);
    dense("embed.outer.b1", p.embed.outer_b1);
    dense("embed.outer.w2", p.embed.outer_w2);
    dense("embed.outer.b2", p.embed.outer_b2);
    for (std::size_t b = 0; b < p.blocks.size(); ++b)
        visit_params(p.blocks[b], "block" + std::to_string(b), fn);
    dense("decoder.w", p.decoder_w);
    dense("decoder.b", p.decoder_b);
}

// Per-channel window statistics; std is stored already clamped so that
// normalize and denormalize always use the same divisor.
template <typename T>
struct InstanceNormStats {
    std::vector<T> mean;
    std::vector<T> std_clamped;
};

inline constexpr double kInstanceNormEps = 1e-5;

template <typename T>
struct NormalizedWindow {
    std::vector<T> values;  // L x C row-major
    InstanceNormStats<T> stats;
};

template <typename T>
NormalizedWindow<T> instance_normalize(const std::vector<T>& window, std::size_t lookback,
                                       std::size_t channels) {
    if (lookback < 2) {
        throw ScfError(errc::shape_mismatch, "instance_normalize: needs a window of length >= 2");
    }
    if (window.size() != lookback * channels) {
        throw ScfError(errc::shape_mismatch, "instance_normalize: window buffer does not match dims");
    }
    NormalizedWindow<T> out;
    out.values.resize(window.size());
    out.stats.mean.resize(channels);
    out.stats.std_clamped.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < lookback; ++t) mean += window[t * channels + c];
        mean /= static_cast<double>(lookback);
        double var = 0.0;
        for (std::size_t t = 0; t < lookback; ++t) {
            const double dv = window[t * channels + c] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(lookback);
        const double sd = std::max(std::sqrt(var), kInstanceNormEps);
        out.stats.mean[c] = static_cast<T>(mean);
        out.stats.std_clamped[c] = static_cast<T>(sd);
        for (std::size_t t = 0; t < lookback; ++t)
            out.values[t * channels + c] =
                static_cast<T>((window[t * channels + c] - mean) / sd);
    }
    return out;
}

template <typename T>
std::vector<T> instance_denormalize(const std::vector<T>& values, std::size_t rows,
                                    std::size_t channels, const InstanceNormStats<T>& stats) {
    if (stats.mean.size() != channels || stats.std_clamped.size() != channels ||
        values.size() != rows * channels) {
        throw ScfError(errc::shape_mismatch, "instance_denormalize: stats/channel mismatch");
    }
    std::vector<T> out(values.size());
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t c = 0; c < channels; ++c)
            out[t * channels + c] =
                values[t * channels + c] * stats.std_clamped[c] + stats.mean[c];
    return out;
}

namespace detail {

template <typename T>
Tensor<T> mlp_two_layer(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                        const Tensor<T>& w2, const Tensor<T>& b2) {
    auto hidden = relu(add_rows(matmul_nt(x, w1), b1));
    return add_rows(matmul_nt(hidden, w2), b2);
}

}  // namespace detail

// lookback_rows: [C, L] normalized look-back, one row per channel (empty
// tensor when the lookback path is ablated); state_rows: [C, N] historical
// state (empty when ablated). Returns channel-token embeddings [C, d].
template <typename T>
Tensor<T> embed_fuse(const Tensor<T>& lookback_rows, const Tensor<T>& state_rows,
                     const ModelParams<T>& p, const ModelConfig& cfg) {
    std::vector<Tensor<T>> parts;
    if (cfg.use_lookback) {
        if (!lookback_rows.defined() || lookback_rows.cols() != cfg.lookback) {
            throw ScfError(errc::shape_mismatch, "embed_fuse: lookback input does not match config");
        }
        parts.push_back(detail::mlp_two_layer(lookback_rows, p.embed.inner_w1,
                                              p.embed.inner_b1, p.embed.inner_w2,
                                              p.embed.inner_b2));
    }
    if (cfg.use_hippo) {
        if (!state_rows.defined() || state_rows.cols() != cfg.hippo_order) {
            throw ScfError(errc::shape_mismatch, "embed_fuse: state input does not match config");
        }
        parts.push_back(state_rows);
    }
    auto fused = parts.size() == 1 ? parts[0] : concat_cols(parts);
    return detail::mlp_two_layer(fused, p.embed.outer_w1, p.embed.outer_b1, p.embed.outer_w2,
                                 p.embed.outer_b2);
}

// Full forward pass over one sample. `window` is the L x C look-back in the
// globally scaled space; `state_coeffs` is the C x N state of the history
// strictly before the window's first step, entering as a constant feature
// (no gradient flows back into the scan).
template <typename T>
Tensor<T> forward(const std::vector<T>& window, const std::vector<double>& state_coeffs,
                  const ModelParams<T>& params, const ModelConfig& cfg,
                  ScoreTrace<T>* trace = nullptr,
                  InstanceNormStats<T>* stats_out = nullptr) {
    validate_config(cfg);
    const std::size_t L = cfg.lookback, C = cfg.channels, d = cfg.embed_dim;

    auto norm = instance_normalize<T>(window, L, C);
    if (stats_out) *stats_out = norm.stats;

    Tensor<T> lookback_rows;
    if (cfg.use_lookback) {
        std::vector<T> rows(C * L);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < L; ++t) rows[c * L + t] = norm.values[t * C + c];
        lookback_rows = Tensor<T>::matrix(C, L, std::move(rows));
    }
    Tensor<T> state_rows;
    if (cfg.use_hippo) {
        if (state_coeffs.size() != C * cfg.hippo_order) {
            throw ScfError(errc::shape_mismatch, "forward: state coefficients do not match config");
        }
        std::vector<T> rows(state_coeffs.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<T>(state_coeffs[i]);
        state_rows = Tensor<T>::matrix(C, cfg.hippo_order, std::move(rows));
    }

    Tensor<T> z = embed_fuse(lookback_rows, state_rows, params, cfg);
    if (z.cols() != d) {
        throw ScfError(errc::internal, "forward: embedding width drifted from config");
    }
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const bool last = b + 1 == params.blocks.size();
        z = encoder_block(z, params.blocks[b], last ? trace : nullptr);
    }

    auto decoded = add_rows(matmul_nt(z, params.decoder_w), params.decoder_b);  // [C, H]
    auto forecast_norm = transpose(decoded);                                    // [H, C]
    std::vector<T> col_scale = norm.stats.std_clamped;
    std::vector<T> col_shift = norm.stats.mean;
    return affine_cols(forecast_norm, std::move(col_scale), std::move(col_shift));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const std::vector<T>& target) {
    if (pred.numel() != target.size()) {
        throw ScfError(errc::shape_mismatch, "mse_loss: prediction/target size mismatch");
    }
    auto t = Tensor<T>::from_data(pred.shape(), target);
    auto diff = sub(pred, t);
    return mean_all(mul(diff, diff));
}

template <typename T>
double mse_metric(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw ScfError(errc::shape_mismatch, "mse_metric: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename T>
double mae_metric(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw ScfError(errc::shape_mismatch, "mae_metric: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return acc / static_cast<double>(a.size());
}

// Free-parameter accounting used by the CLI report and the audit tests.
struct ParamReport {
    std::size_t structured_weights = 0;   // masked/conv weights, mask-aware
    std::size_t dense_equivalent = 0;     // d*d per structured transform
    std::size_t total_free = 0;           // all trainable params, mask-aware
};

template <typename T>
ParamReport param_report(ModelParams<T>& p, const ModelConfig& cfg) {
    ParamReport r;
    const std::size_t d = cfg.embed_dim;
    for (auto& block : p.blocks) {
        std::vector<StructuredTransform<T>*> transforms{&block.q, &block.k, &block.v, &block.f};
        if (block.f2) transforms.push_back(&*block.f2);
        for (auto* tr : transforms) {
            r.structured_weights += transform_weight_count(*tr);
            r.dense_equivalent += d * d;
        }
    }
    visit_params(p, [&](const ParamRef<T>& ref) {
        if (ref.masked) {
            const std::size_t dim = ref.tensor.rows();
            r.total_free += dim * (dim + 1) / 2;
        } else {
            r.total_free += ref.tensor.numel();
        }
    });
    return r;
}

}  // namespace scformer
