#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scformer/data.hpp"
#include "scformer/model.hpp"
#include "scformer/random.hpp"

namespace scformer {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 3;
    std::uint64_t seed = 1;
    std::string precision = "f64";
};

inline void validate_train_config(const TrainConfig& tc) {
    if (!(tc.lr > 0.0)) throw ScfError(errc::config_invalid, "train config: lr must be > 0");
    if (!(tc.beta1 > 0.0 && tc.beta1 < 1.0) || !(tc.beta2 > 0.0 && tc.beta2 < 1.0))
        throw ScfError(errc::config_invalid, "train config: betas must lie in (0, 1)");
    if (tc.batch_size == 0) throw ScfError(errc::config_invalid, "train config: batch_size must be >= 1");
    if (tc.max_epochs == 0) throw ScfError(errc::config_invalid, "train config: max_epochs must be >= 1");
    if (tc.patience == 0) throw ScfError(errc::config_invalid, "train config: patience must be >= 1");
    if (tc.patience > tc.max_epochs)
        throw ScfError(errc::config_invalid, "train config: patience must not exceed max_epochs");
    if (tc.grad_clip < 0.0) throw ScfError(errc::config_invalid, "train config: grad_clip must be >= 0");
    if (tc.precision != "f32" && tc.precision != "f64")
        throw ScfError(errc::config_invalid, "train config: precision must be 'f32' or 'f64'");
}

// First/second moments per parameter tensor, kept in double regardless of the
// parameter precision. Masked coordinates receive zero gradients before every
// step, so their moments stay exactly zero and masked weights are fixed
// points of the optimizer.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t t = 0;
};

// Bias-corrected update of one flat tensor; values round-trip through double.
template <typename T>
void adam_update_tensor(std::vector<T>& values, const T* grads, std::vector<double>& m,
                        std::vector<double>& v, std::size_t t, const TrainConfig& tc) {
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads ? static_cast<double>(grads[i]) : 0.0;
        m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g;
        v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                   tc.lr * m_hat / (std::sqrt(v_hat) + tc.eps));
    }
}

namespace detail {

// Strictly-lower-triangular zeroing for a square buffer; the triangular
// weight support lives on and above the diagonal.
template <typename T>
void zero_strict_lower(std::vector<T>& buf, std::size_t dim) {
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < i; ++j) buf[i * dim + j] = T(0);
}

template <typename T>
std::vector<ParamRef<T>> collect_params(ModelParams<T>& params) {
    std::vector<ParamRef<T>> refs;
    visit_params(params, [&](const ParamRef<T>& r) { refs.push_back(r); });
    return refs;
}

}  // namespace detail

// One optimizer step over every model parameter: gradients on masked supports
// are zeroed first, the update runs, then masked weights are re-zeroed so no
// rounding residue can accumulate off-support.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState& st, const TrainConfig& tc) {
    auto refs = detail::collect_params(params);
    if (st.m.empty()) {
        st.m.resize(refs.size());
        st.v.resize(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            st.m[i].assign(refs[i].tensor.numel(), 0.0);
            st.v[i].assign(refs[i].tensor.numel(), 0.0);
        }
    }
    if (st.m.size() != refs.size())
        throw ScfError(errc::shape_mismatch, "adam_step: optimizer state does not match the model");

    for (auto& r : refs) {
        auto& g = r.tensor.node()->grad;
        if (g.empty()) continue;
        if (r.masked) detail::zero_strict_lower(g, r.tensor.rows());
        for (T gv : g) {
            if (!std::isfinite(static_cast<double>(gv)))
                throw ScfError(errc::non_finite, "adam_step: non-finite gradient in " + r.name);
        }
    }

    if (tc.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto& r : refs)
            for (T gv : r.tensor.node()->grad) sq += static_cast<double>(gv) * static_cast<double>(gv);
        const double norm = std::sqrt(sq);
        if (norm > tc.grad_clip) {
            const T s = static_cast<T>(tc.grad_clip / norm);
            for (auto& r : refs)
                for (T& gv : r.tensor.node()->grad) gv *= s;
        }
    }

    ++st.t;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        auto& node = *refs[i].tensor.node();
        if (st.m[i].size() != node.value.size())
            throw ScfError(errc::shape_mismatch, "adam_step: moment size mismatch in " + refs[i].name);
        adam_update_tensor(node.value, node.grad.empty() ? nullptr : node.grad.data(), st.m[i],
                           st.v[i], st.t, tc);
        if (refs[i].masked) detail::zero_strict_lower(node.value, refs[i].tensor.rows());
    }
}

// Flat copies of every parameter tensor in visitation order; used for
// best-on-validation snapshots and checkpointing.
template <typename T>
using ParamSnapshot = std::vector<std::vector<T>>;

template <typename T>
ParamSnapshot<T> export_values(ModelParams<T>& params) {
    ParamSnapshot<T> snap;
    visit_params(params, [&](const ParamRef<T>& r) { snap.push_back(r.tensor.value()); });
    return snap;
}

template <typename T>
void import_values(ModelParams<T>& params, const ParamSnapshot<T>& snap) {
    auto refs = detail::collect_params(params);
    if (refs.size() != snap.size())
        throw ScfError(errc::shape_mismatch, "import_values: snapshot has " + std::to_string(snap.size()) +
                                                 " tensors, model has " + std::to_string(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (snap[i].size() != refs[i].tensor.numel())
            throw ScfError(errc::shape_mismatch, "import_values: size mismatch in " + refs[i].name);
        refs[i].tensor.node()->value = snap[i];
    }
}

template <typename T>
double validation_mse(ModelParams<T>& params, const ModelConfig& cfg,
                      const std::vector<Sample>& samples) {
    if (samples.empty()) throw ScfError(errc::bad_args, "validation_mse: empty sample set");
    double acc = 0.0;
    std::vector<T> window(cfg.lookback * cfg.channels);
    std::vector<T> target(cfg.horizon * cfg.channels);
    for (const auto& s : samples) {
        for (std::size_t j = 0; j < window.size(); ++j) window[j] = static_cast<T>(s.lookback[j]);
        for (std::size_t j = 0; j < target.size(); ++j) target[j] = static_cast<T>(s.target[j]);
        acc += mse_metric(forward<T>(window, s.state, params, cfg).value(), target);
    }
    return acc / static_cast<double>(samples.size());
}

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_mse = 0.0;
    double best_val_so_far = 0.0;
    bool improved = false;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
    bool stopped_early = false;
    bool diverged = false;
};

// Seeded shuffle, minibatch MSE descent, best-on-validation selection.
// On return `params` hold the best validated weights. A non-finite loss or
// gradient aborts the loop and restores the last best snapshot instead of
// propagating garbage weights.
template <typename T>
TrainHistory train(ModelParams<T>& params, const ModelConfig& cfg,
                   const std::vector<Sample>& train_samples, const std::vector<Sample>& val_samples,
                   const TrainConfig& tc) {
    validate_train_config(tc);
    if (train_samples.empty()) throw ScfError(errc::bad_args, "train: empty training sample set");
    if (val_samples.empty()) throw ScfError(errc::bad_args, "train: empty validation sample set");

    TrainHistory hist;
    AdamState adam;
    Rng rng(tc.seed);
    ParamSnapshot<T> best = export_values(params);
    std::size_t bad_streak = 0;

    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto refs = detail::collect_params(params);
    std::vector<T> window(cfg.lookback * cfg.channels);
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        try {
            rng.shuffle(order);
            double epoch_loss = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
                const std::size_t stop = std::min(order.size(), start + tc.batch_size);
                const double inv_b = 1.0 / static_cast<double>(stop - start);
                for (auto& r : refs) r.tensor.zero_grad();
                double batch_loss = 0.0;
                for (std::size_t i = start; i < stop; ++i) {
                    const Sample& s = train_samples[order[i]];
                    for (std::size_t j = 0; j < window.size(); ++j)
                        window[j] = static_cast<T>(s.lookback[j]);
                    std::vector<T> target(s.target.size());
                    for (std::size_t j = 0; j < target.size(); ++j)
                        target[j] = static_cast<T>(s.target[j]);
                    auto loss = mse_loss(forward<T>(window, s.state, params, cfg), target);
                    batch_loss += static_cast<double>(loss.item()) * inv_b;
                    backward(scale(loss, static_cast<T>(inv_b)));
                }
                adam_step(params, adam, tc);
                ++hist.steps;
                epoch_loss += batch_loss;
                ++batches;
            }

            EpochStats es;
            es.epoch = epoch;
            es.train_loss = epoch_loss / static_cast<double>(batches);
            es.val_mse = validation_mse(params, cfg, val_samples);
            es.improved = es.val_mse < hist.best_val;
            if (es.improved) {
                hist.best_val = es.val_mse;
                hist.best_epoch = epoch;
                best = export_values(params);
                bad_streak = 0;
            } else {
                ++bad_streak;
            }
            es.best_val_so_far = hist.best_val;
            hist.epochs.push_back(es);
            if (bad_streak >= tc.patience) {
                hist.stopped_early = true;
                break;
            }
        } catch (const ScfError& e) {
            if (e.code() != errc::non_finite) throw;
            hist.diverged = true;
            break;
        }
    }

    import_values(params, best);
    return hist;
}

}  // namespace scformer
