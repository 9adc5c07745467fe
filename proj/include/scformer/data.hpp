#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <exception>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "scformer/hippo.hpp"
#include "scformer/model.hpp"

namespace scformer {

// A fully ingested series: strictly increasing timestamps, dense numeric
// values, no gaps. values is rows x channels, row-major.
struct MultivariateSeries {
    std::vector<std::string> timestamps;
    std::vector<std::string> channel_names;
    std::vector<double> values;

    std::size_t rows() const { return timestamps.size(); }
    std::size_t channels() const { return channel_names.size(); }
    double at(std::size_t row, std::size_t ch) const { return values[row * channels() + ch]; }
};

namespace detail {

inline std::string trim_cell(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim_cell(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline bool parse_double_cell(const std::string& cell, double& out) {
    const char* first = cell.data();
    const char* last = first + cell.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && !cell.empty();
}

}  // namespace detail

// Reads a benchmark-style CSV: one header row, a date column, numeric channel
// columns. An empty channel list selects every non-date column in header
// order. Missing values, non-numeric cells, and out-of-order timestamps are
// hard errors that name the offending row and column.
inline MultivariateSeries load_csv(const std::string& path, const std::string& date_column = "date",
                                   const std::vector<std::string>& channel_columns = {}) {
    std::ifstream in(path);
    if (!in) throw ScfError(errc::io_error, "load_csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ScfError(errc::csv_invalid, "load_csv: '" + path + "' has no header row");
    const auto header = detail::split_csv_line(line);

    auto column_index = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ScfError(errc::csv_invalid, "load_csv: column '" + name + "' not found in header of '" + path + "'");
    };

    const std::size_t date_idx = column_index(date_column);

    MultivariateSeries series;
    std::vector<std::size_t> channel_idx;
    if (channel_columns.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i == date_idx) continue;
            channel_idx.push_back(i);
            series.channel_names.push_back(header[i]);
        }
    } else {
        for (const auto& name : channel_columns) {
            channel_idx.push_back(column_index(name));
            series.channel_names.push_back(name);
        }
    }
    if (series.channel_names.empty())
        throw ScfError(errc::csv_invalid, "load_csv: no channel columns selected from '" + path + "'");

    std::size_t data_row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        ++data_row;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ScfError(errc::csv_invalid, "load_csv: data row " + std::to_string(data_row) + " has " +
                                                  std::to_string(cells.size()) + " cells, header has " +
                                                  std::to_string(header.size()));
        }
        const std::string& stamp = cells[date_idx];
        if (!series.timestamps.empty() && !(series.timestamps.back() < stamp)) {
            throw ScfError(errc::csv_invalid, "load_csv: timestamp at data row " + std::to_string(data_row) +
                                                  " ('" + stamp + "') does not increase over '" +
                                                  series.timestamps.back() + "'");
        }
        series.timestamps.push_back(stamp);
        for (std::size_t c = 0; c < channel_idx.size(); ++c) {
            const std::string& cell = cells[channel_idx[c]];
            double v = 0.0;
            if (!detail::parse_double_cell(cell, v)) {
                throw ScfError(errc::csv_invalid, "load_csv: non-numeric cell at data row " +
                                                      std::to_string(data_row) + ", column '" +
                                                      series.channel_names[c] + "'");
            }
            if (!std::isfinite(v)) {
                throw ScfError(errc::csv_invalid, "load_csv: missing or non-finite value at data row " +
                                                      std::to_string(data_row) + ", column '" +
                                                      series.channel_names[c] + "'");
            }
            series.values.push_back(v);
        }
    }
    if (series.rows() == 0) throw ScfError(errc::csv_invalid, "load_csv: '" + path + "' has no data rows");
    return series;
}

// Contiguous, ordered, non-overlapping [begin, end) segments. A tail beyond
// test_end is simply unused.
struct SplitBounds {
    std::size_t train_begin = 0;
    std::size_t train_end = 0;
    std::size_t val_begin = 0;
    std::size_t val_end = 0;
    std::size_t test_begin = 0;
    std::size_t test_end = 0;
};

inline SplitBounds chronological_split(const MultivariateSeries& series,
                                       const std::array<std::size_t, 3>& sizes) {
    for (std::size_t s : sizes) {
        if (s == 0) throw ScfError(errc::split_invalid, "chronological_split: each split size must be >= 1");
    }
    const std::size_t total = sizes[0] + sizes[1] + sizes[2];
    if (total > series.rows()) {
        throw ScfError(errc::split_invalid, "chronological_split: sizes sum to " + std::to_string(total) +
                                                " but the series has " + std::to_string(series.rows()) + " rows");
    }
    SplitBounds b;
    b.train_begin = 0;
    b.train_end = sizes[0];
    b.val_begin = b.train_end;
    b.val_end = b.val_begin + sizes[1];
    b.test_begin = b.val_end;
    b.test_end = b.test_begin + sizes[2];
    return b;
}

// Integer split sizes for a ratio like 7:1:2; train and val round down, test
// takes the remainder so the three parts always cover the series.
inline std::array<std::size_t, 3> ratio_sizes(std::size_t rows, const std::array<std::size_t, 3>& ratio) {
    const std::size_t denom = ratio[0] + ratio[1] + ratio[2];
    if (denom == 0) throw ScfError(errc::split_invalid, "ratio_sizes: ratio must not be all zero");
    std::array<std::size_t, 3> sizes{};
    sizes[0] = rows * ratio[0] / denom;
    sizes[1] = rows * ratio[1] / denom;
    sizes[2] = rows - sizes[0] - sizes[1];
    return sizes;
}

// Per-channel z-score statistics fitted on the training segment only.
struct ScalerStats {
    std::vector<double> mean;
    std::vector<double> std;
};

inline ScalerStats identity_stats(std::size_t channels) {
    ScalerStats s;
    s.mean.assign(channels, 0.0);
    s.std.assign(channels, 1.0);
    return s;
}

inline ScalerStats fit_scaler(const MultivariateSeries& series, std::size_t begin, std::size_t end) {
    const std::size_t C = series.channels();
    if (begin >= end || end > series.rows())
        throw ScfError(errc::split_invalid, "fit_scaler: empty or out-of-range training segment");
    const double n = static_cast<double>(end - begin);
    ScalerStats stats;
    stats.mean.assign(C, 0.0);
    stats.std.assign(C, 0.0);
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < C; ++c) stats.mean[c] += series.at(r, c);
    for (std::size_t c = 0; c < C; ++c) stats.mean[c] /= n;
    for (std::size_t r = begin; r < end; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            const double d = series.at(r, c) - stats.mean[c];
            stats.std[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        stats.std[c] = std::sqrt(stats.std[c] / n);
        // relative threshold: summing n copies of the same value leaves the
        // mean off by a few ulps, so an exactly-constant channel can still
        // show a ~1e-15 std
        if (!(stats.std[c] > 1e-10 * std::max(1.0, std::abs(stats.mean[c])))) {
            throw ScfError(errc::split_invalid, "fit_scaler: channel '" + series.channel_names[c] +
                                                    "' is constant over the training segment");
        }
    }
    return stats;
}

inline MultivariateSeries apply_scaler(const MultivariateSeries& series, const ScalerStats& stats) {
    if (stats.mean.size() != series.channels())
        throw ScfError(errc::shape_mismatch, "apply_scaler: stats do not match the series channel count");
    MultivariateSeries out = series;
    const std::size_t C = series.channels();
    for (std::size_t r = 0; r < series.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c)
            out.values[r * C + c] = (series.at(r, c) - stats.mean[c]) / stats.std[c];
    return out;
}

inline MultivariateSeries invert_scaler(const MultivariateSeries& series, const ScalerStats& stats) {
    if (stats.mean.size() != series.channels())
        throw ScfError(errc::shape_mismatch, "invert_scaler: stats do not match the series channel count");
    MultivariateSeries out = series;
    const std::size_t C = series.channels();
    for (std::size_t r = 0; r < series.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c)
            out.values[r * C + c] = series.at(r, c) * stats.std[c] + stats.mean[c];
    return out;
}

// One training or evaluation example. All three buffers are copies, so later
// mutation of the source series cannot reach a materialized sample. state is
// channels x order, the cumulative coefficients for the prefix strictly
// before position (zero state at position 0).
struct Sample {
    std::size_t position = 0;
    std::vector<double> lookback;  // L x C
    std::vector<double> state;     // C x N
    std::vector<double> target;    // H x C
};

namespace detail {

template <typename StateAt>
std::vector<Sample> make_samples_impl(const MultivariateSeries& series, std::size_t lookback,
                                      std::size_t horizon, std::size_t begin, std::size_t end,
                                      StateAt&& state_at) {
    const std::size_t C = series.channels();
    if (lookback == 0 || horizon == 0)
        throw ScfError(errc::split_invalid, "make_samples: lookback and horizon must be >= 1");
    if (end > series.rows() || begin >= end)
        throw ScfError(errc::split_invalid, "make_samples: split bounds out of range");
    if (begin + lookback + horizon > end) {
        throw ScfError(errc::split_invalid, "make_samples: lookback+horizon (" +
                                                std::to_string(lookback + horizon) +
                                                ") exceeds the split length (" + std::to_string(end - begin) + ")");
    }
    const std::size_t last = end - lookback - horizon;
    std::vector<Sample> samples;
    samples.reserve(last - begin + 1);
    for (std::size_t t = begin; t <= last; ++t) {
        Sample s;
        s.position = t;
        s.lookback.assign(series.values.begin() + static_cast<std::ptrdiff_t>(t * C),
                          series.values.begin() + static_cast<std::ptrdiff_t>((t + lookback) * C));
        s.target.assign(series.values.begin() + static_cast<std::ptrdiff_t>((t + lookback) * C),
                        series.values.begin() + static_cast<std::ptrdiff_t>((t + lookback + horizon) * C));
        s.state = state_at(t);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace detail

// Samples whose whole window (lookback then target) lies inside [begin, end).
// states must be the stride-1 scan of the same series: states[i] holds the
// coefficients after consuming rows 0..i, so sample position t uses
// states[t-1].
inline std::vector<Sample> make_samples(const MultivariateSeries& series,
                                        const std::vector<HippoState>& states, std::size_t lookback,
                                        std::size_t horizon, std::size_t begin, std::size_t end) {
    if (states.size() != series.rows())
        throw ScfError(errc::shape_mismatch, "make_samples: need one scanned state per series row");
    const std::size_t order = states.empty() ? 0 : states.front().order;
    return detail::make_samples_impl(series, lookback, horizon, begin, end, [&](std::size_t t) {
        if (t == 0) return std::vector<double>(series.channels() * order, 0.0);
        return states[t - 1].coeffs;
    });
}

// The scan rows a split's samples actually need (position t reads row t-1);
// feed these to the sparse scan to avoid storing every prefix state.
inline std::vector<std::size_t> window_start_state_rows(std::size_t lookback, std::size_t horizon,
                                                        std::size_t begin, std::size_t end) {
    std::vector<std::size_t> rows;
    if (begin + lookback + horizon > end) return rows;
    const std::size_t last = end - lookback - horizon;
    for (std::size_t t = std::max<std::size_t>(begin, 1); t <= last; ++t) rows.push_back(t - 1);
    return rows;
}

inline std::vector<Sample> make_samples_sparse(const MultivariateSeries& series,
                                               const std::vector<std::size_t>& kept_rows,
                                               const std::vector<HippoState>& kept_states,
                                               std::size_t lookback, std::size_t horizon,
                                               std::size_t begin, std::size_t end) {
    if (kept_rows.size() != kept_states.size())
        throw ScfError(errc::shape_mismatch, "make_samples_sparse: rows/states size mismatch");
    const std::size_t order = kept_states.empty() ? 0 : kept_states.front().order;
    return detail::make_samples_impl(series, lookback, horizon, begin, end, [&](std::size_t t) {
        if (t == 0) return std::vector<double>(series.channels() * order, 0.0);
        auto it = std::lower_bound(kept_rows.begin(), kept_rows.end(), t - 1);
        if (it == kept_rows.end() || *it != t - 1)
            throw ScfError(errc::shape_mismatch, "make_samples_sparse: no scanned state for row " +
                                                     std::to_string(t - 1));
        return kept_states[static_cast<std::size_t>(it - kept_rows.begin())].coeffs;
    });
}

// mse/mae follow the long-horizon benchmark convention: computed in globally
// scaled space. raw_mse/raw_mae undo the train z-score for reporting in
// original units. per_horizon_* average each forecast step separately
// (scaled space).
struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    double raw_mse = 0.0;
    double raw_mae = 0.0;
    std::vector<double> per_horizon_mse;
    std::vector<double> per_horizon_mae;
    std::size_t samples = 0;
};

// predictions is samples x (H x C), scaled space, aligned with `samples`.
inline Metrics metrics_from_predictions(const std::vector<Sample>& samples,
                                        const std::vector<double>& predictions, std::size_t horizon,
                                        std::size_t channels, const ScalerStats& stats) {
    if (samples.empty()) throw ScfError(errc::bad_args, "metrics_from_predictions: empty sample set");
    const std::size_t per_sample = horizon * channels;
    if (predictions.size() != samples.size() * per_sample)
        throw ScfError(errc::shape_mismatch, "metrics_from_predictions: prediction buffer size mismatch");
    if (stats.std.size() != channels)
        throw ScfError(errc::shape_mismatch, "metrics_from_predictions: stats do not match channel count");

    Metrics m;
    m.per_horizon_mse.assign(horizon, 0.0);
    m.per_horizon_mae.assign(horizon, 0.0);
    m.samples = samples.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double* pred = predictions.data() + i * per_sample;
        const double* truth = samples[i].target.data();
        for (std::size_t h = 0; h < horizon; ++h) {
            for (std::size_t c = 0; c < channels; ++c) {
                const double err = pred[h * channels + c] - truth[h * channels + c];
                const double raw_err = err * stats.std[c];
                m.mse += err * err;
                m.mae += std::abs(err);
                m.raw_mse += raw_err * raw_err;
                m.raw_mae += std::abs(raw_err);
                m.per_horizon_mse[h] += err * err;
                m.per_horizon_mae[h] += std::abs(err);
            }
        }
    }
    const double count = static_cast<double>(samples.size() * per_sample);
    m.mse /= count;
    m.mae /= count;
    m.raw_mse /= count;
    m.raw_mae /= count;
    const double per_step = static_cast<double>(samples.size() * channels);
    for (std::size_t h = 0; h < horizon; ++h) {
        m.per_horizon_mse[h] /= per_step;
        m.per_horizon_mae[h] /= per_step;
    }
    return m;
}

// Runs the model over every sample and reduces to metrics. Threaded forward
// passes write into disjoint slots of one prediction buffer and the reduction
// is a single serial pass, so the result does not depend on thread count.
template <typename T>
Metrics evaluate(const ModelParams<T>& params, const ModelConfig& cfg,
                 const std::vector<Sample>& samples, const ScalerStats& stats,
                 std::size_t threads = 1, std::vector<double>* predictions_out = nullptr) {
    if (samples.empty()) throw ScfError(errc::bad_args, "evaluate: empty sample set");
    const std::size_t per_sample = cfg.horizon * cfg.channels;
    std::vector<double> predictions(samples.size() * per_sample, 0.0);

    auto run_range = [&](std::size_t lo, std::size_t hi) {
        std::vector<T> window(cfg.lookback * cfg.channels);
        for (std::size_t i = lo; i < hi; ++i) {
            for (std::size_t j = 0; j < window.size(); ++j)
                window[j] = static_cast<T>(samples[i].lookback[j]);
            auto pred = forward<T>(window, samples[i].state, params, cfg);
            const auto& v = pred.value();
            for (std::size_t j = 0; j < per_sample; ++j)
                predictions[i * per_sample + j] = static_cast<double>(v[j]);
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
    if (threads == 1) {
        run_range(0, samples.size());
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        const std::size_t chunk = (samples.size() + threads - 1) / threads;
        for (std::size_t w = 0; w < threads; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(samples.size(), lo + chunk);
            pool.emplace_back([&, w, lo, hi] {
                try {
                    if (lo < hi) run_range(lo, hi);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    if (predictions_out) *predictions_out = predictions;
    return metrics_from_predictions(samples, predictions, cfg.horizon, cfg.channels, stats);
}

}  // namespace scformer
