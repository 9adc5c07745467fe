#pragma once

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scformer/checkpoint.hpp"
#include "scformer/data.hpp"
#include "scformer/trainer.hpp"
#include "scformer/verify.hpp"

namespace scformer {

struct SplitSpec {
    bool by_sizes = false;
    std::array<std::size_t, 3> sizes{0, 0, 0};
    std::array<std::size_t, 3> ratio{7, 1, 2};
};

struct DataConfig {
    std::string path;
    std::string date_column = "date";
    std::vector<std::string> channels;  // empty selects every non-date column
    SplitSpec split;
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    std::string out = "run_out";
    std::uint64_t seed = 0;  // parameter init; copied to the shuffle seed unless train.seed is given
};

namespace cli_detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || it.key() == k;
        if (!ok)
            throw ScfError(errc::config_invalid,
                           "unknown " + where + " key '" + it.key() + "'");
    }
}

}  // namespace cli_detail

inline SplitSpec split_spec_from_json(const nlohmann::json& j) {
    cli_detail::reject_unknown(j, {"sizes", "ratio"}, "split config");
    SplitSpec s;
    try {
        if (j.contains("sizes") && j.contains("ratio"))
            throw ScfError(errc::config_invalid, "split config: give either 'sizes' or 'ratio', not both");
        if (j.contains("sizes")) {
            auto v = j["sizes"].get<std::vector<std::size_t>>();
            if (v.size() != 3)
                throw ScfError(errc::config_invalid, "split config: 'sizes' needs 3 entries");
            s.by_sizes = true;
            s.sizes = {v[0], v[1], v[2]};
        } else if (j.contains("ratio")) {
            auto v = j["ratio"].get<std::vector<std::size_t>>();
            if (v.size() != 3)
                throw ScfError(errc::config_invalid, "split config: 'ratio' needs 3 whole-number parts");
            s.ratio = {v[0], v[1], v[2]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, std::string("split config: ") + e.what());
    }
    return s;
}

inline DataConfig data_config_from_json(const nlohmann::json& j) {
    cli_detail::reject_unknown(j, {"path", "date_column", "channels", "split"}, "data config");
    DataConfig dc;
    try {
        if (!j.contains("path"))
            throw ScfError(errc::config_invalid, "data config: 'path' is required");
        dc.path = j["path"].get<std::string>();
        if (j.contains("date_column")) dc.date_column = j["date_column"].get<std::string>();
        if (j.contains("channels")) dc.channels = j["channels"].get<std::vector<std::string>>();
        if (j.contains("split")) dc.split = split_spec_from_json(j["split"]);
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, std::string("data config: ") + e.what());
    }
    return dc;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, bool* seed_given = nullptr) {
    cli_detail::reject_unknown(j,
                               {"lr", "beta1", "beta2", "eps", "grad_clip", "batch_size",
                                "max_epochs", "patience", "seed", "precision"},
                               "train config");
    TrainConfig tc;
    try {
        if (j.contains("lr")) tc.lr = j["lr"].get<double>();
        if (j.contains("beta1")) tc.beta1 = j["beta1"].get<double>();
        if (j.contains("beta2")) tc.beta2 = j["beta2"].get<double>();
        if (j.contains("eps")) tc.eps = j["eps"].get<double>();
        if (j.contains("grad_clip")) tc.grad_clip = j["grad_clip"].get<double>();
        if (j.contains("batch_size")) tc.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("max_epochs")) tc.max_epochs = j["max_epochs"].get<std::size_t>();
        if (j.contains("patience")) tc.patience = j["patience"].get<std::size_t>();
        if (j.contains("seed")) tc.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("precision")) tc.precision = j["precision"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, std::string("train config: ") + e.what());
    }
    if (seed_given) *seed_given = j.contains("seed");
    return tc;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    cli_detail::reject_unknown(j, {"data", "model", "train", "out", "seed"}, "run config");
    RunConfig run;
    try {
        if (!j.contains("data"))
            throw ScfError(errc::config_invalid, "run config: 'data' section is required");
        run.data = data_config_from_json(j["data"]);
        if (j.contains("model")) run.model = model_config_from_json(j["model"]);
        bool train_seed_given = false;
        if (j.contains("train")) run.train = train_config_from_json(j["train"], &train_seed_given);
        if (j.contains("out")) run.out = j["out"].get<std::string>();
        if (j.contains("seed")) run.seed = j["seed"].get<std::uint64_t>();
        if (!train_seed_given) run.train.seed = run.seed;
        if (j.contains("train") && j["train"].contains("precision") &&
            run.train.precision != run.model.precision) {
            throw ScfError(errc::config_invalid,
                           "train precision '" + run.train.precision +
                               "' conflicts with model precision '" + run.model.precision + "'");
        }
        run.train.precision = run.model.precision;
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, std::string("run config: ") + e.what());
    }
    return run;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScfError(errc::io_error, "cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ScfError(errc::config_invalid, "config file '" + path + "': " + e.what());
    }
    if (!j.is_object())
        throw ScfError(errc::config_invalid, "config file '" + path + "' is not a JSON object");
    return run_config_from_json(j);
}

// Everything downstream commands share: the raw series, its split, the
// training-segment scaler, the scaled series, and the per-row scan states.
struct Pipeline {
    MultivariateSeries raw;
    SplitBounds bounds;
    ScalerStats stats;
    MultivariateSeries scaled;
    std::vector<HippoState> states;
};

inline Pipeline build_pipeline(const DataConfig& dc, ModelConfig& cfg) {
    Pipeline p;
    p.raw = load_csv(dc.path, dc.date_column, dc.channels);
    if (cfg.channels == 0) {
        cfg.channels = p.raw.channels();
    } else if (cfg.channels != p.raw.channels()) {
        throw ScfError(errc::config_invalid,
                       "model config expects " + std::to_string(cfg.channels) + " channels but '" +
                           dc.path + "' has " + std::to_string(p.raw.channels()));
    }
    const auto sizes = dc.split.by_sizes ? dc.split.sizes : ratio_sizes(p.raw.rows(), dc.split.ratio);
    p.bounds = chronological_split(p.raw, sizes);
    p.stats = fit_scaler(p.raw, p.bounds.train_begin, p.bounds.train_end);
    p.scaled = apply_scaler(p.raw, p.stats);
    p.states = cfg.use_hippo
                   ? hippo_scan(p.scaled.values, p.scaled.rows(), p.scaled.channels(),
                                legs_matrices(cfg.hippo_order))
                   : std::vector<HippoState>(p.scaled.rows(),
                                             hippo_initial(cfg.hippo_order, cfg.channels));
    return p;
}

inline std::pair<std::size_t, std::size_t> split_range(const SplitBounds& b, const std::string& name) {
    if (name == "train") return {b.train_begin, b.train_end};
    if (name == "val") return {b.val_begin, b.val_end};
    if (name == "test") return {b.test_begin, b.test_end};
    throw ScfError(errc::bad_args, "unknown split '" + name + "' (use train, val, test)");
}

inline std::size_t effective_threads(std::size_t flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("SCFORMER_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    return nlohmann::json{{"mse", m.mse},
                          {"mae", m.mae},
                          {"raw_mse", m.raw_mse},
                          {"raw_mae", m.raw_mae},
                          {"per_horizon_mse", m.per_horizon_mse},
                          {"per_horizon_mae", m.per_horizon_mae},
                          {"samples", m.samples}};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ScfError(errc::io_error, "cannot write '" + path.string() + "'");
    out << body;
    if (!out) throw ScfError(errc::io_error, "short write to '" + path.string() + "'");
}

namespace cli_detail {

template <typename T>
int run_train(RunConfig run) {
    validate_train_config(run.train);
    Pipeline p = build_pipeline(run.data, run.model);
    validate_config(run.model);

    auto train_s = make_samples(p.scaled, p.states, run.model.lookback, run.model.horizon,
                                p.bounds.train_begin, p.bounds.train_end);
    auto val_s = make_samples(p.scaled, p.states, run.model.lookback, run.model.horizon,
                              p.bounds.val_begin, p.bounds.val_end);
    auto test_s = make_samples(p.scaled, p.states, run.model.lookback, run.model.horizon,
                               p.bounds.test_begin, p.bounds.test_end);

    auto params = init_params<T>(run.model, run.seed);
    auto history = train(params, run.model, train_s, val_s, run.train);

    const std::size_t threads = effective_threads(0);
    auto val_metrics = evaluate(params, run.model, val_s, p.stats, threads);
    auto test_metrics = evaluate(params, run.model, test_s, p.stats, threads);

    std::filesystem::create_directories(run.out);
    const auto out_dir = std::filesystem::path(run.out);
    checkpoint_save((out_dir / "checkpoint.bin").string(), params, run.model, run.seed);

    nlohmann::json hist_json{{"seed", run.seed},
                             {"train_seed", run.train.seed},
                             {"best_val", history.best_val},
                             {"best_epoch", history.best_epoch},
                             {"steps", history.steps},
                             {"stopped_early", history.stopped_early},
                             {"diverged", history.diverged},
                             {"epochs", nlohmann::json::array()}};
    for (const auto& e : history.epochs) {
        hist_json["epochs"].push_back({{"epoch", e.epoch},
                                       {"train_loss", e.train_loss},
                                       {"val_mse", e.val_mse},
                                       {"best_val_so_far", e.best_val_so_far},
                                       {"improved", e.improved}});
    }
    write_text_file(out_dir / "history.json", hist_json.dump(2) + "\n");

    nlohmann::json metrics{{"seed", run.seed},
                           {"train_seed", run.train.seed},
                           {"precision", run.model.precision},
                           {"val", metrics_to_json(val_metrics)},
                           {"test", metrics_to_json(test_metrics)}};
    write_text_file(out_dir / "metrics.json", metrics.dump(2) + "\n");

    std::cout << "trained " << history.steps << " steps over " << history.epochs.size()
              << " epochs (best val MSE " << history.best_val << " at epoch " << history.best_epoch
              << (history.diverged ? ", diverged" : history.stopped_early ? ", stopped early" : "")
              << ")\n"
              << "test MSE " << test_metrics.mse << "  MAE " << test_metrics.mae << "\n"
              << "wrote " << (out_dir / "checkpoint.bin").string() << ", history.json, metrics.json\n";
    return history.diverged ? 1 : 0;
}

// Reads the model config and value precision out of a checkpoint so commands
// never need the model section repeated on the command line.
inline std::pair<ModelConfig, std::string> checkpoint_header(const std::string& path) {
    auto manifest = checkpoint_manifest(path);
    auto cfg = model_config_from_json(manifest.at("model"));
    return {cfg, cfg.precision};
}

template <typename T>
int run_eval(const std::string& ckpt_path, RunConfig run, const std::string& split,
             std::size_t threads_flag, const std::string& out_path) {
    auto [cfg, precision] = checkpoint_header(ckpt_path);
    Pipeline p = build_pipeline(run.data, cfg);
    auto params = checkpoint_load<T>(ckpt_path, cfg);

    auto [begin, end] = split_range(p.bounds, split);
    auto samples = make_samples(p.scaled, p.states, cfg.lookback, cfg.horizon, begin, end);
    auto metrics = evaluate(params, cfg, samples, p.stats, effective_threads(threads_flag));

    nlohmann::json j{{"split", split}, {"checkpoint", ckpt_path}, {"metrics", metrics_to_json(metrics)}};
    const std::string body = j.dump(2) + "\n";
    if (!out_path.empty()) write_text_file(out_path, body);
    std::cout << body;
    return 0;
}

template <typename T>
int run_predict(const std::string& ckpt_path, RunConfig run, const std::string& split,
                std::size_t threads_flag, std::size_t limit, const std::string& out_path) {
    auto [cfg, precision] = checkpoint_header(ckpt_path);
    Pipeline p = build_pipeline(run.data, cfg);
    auto params = checkpoint_load<T>(ckpt_path, cfg);

    auto [begin, end] = split_range(p.bounds, split);
    auto samples = make_samples(p.scaled, p.states, cfg.lookback, cfg.horizon, begin, end);
    if (limit > 0 && samples.size() > limit) samples.resize(limit);

    std::vector<double> predictions;
    evaluate(params, cfg, samples, p.stats, effective_threads(threads_flag), &predictions);

    const std::size_t H = cfg.horizon, C = cfg.channels;
    std::string csv = "timestamp,channel,horizon_step,y_true,y_pred\n";
    char line[256];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t t0 = samples[i].position;
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t row = t0 + cfg.lookback + h;
            for (std::size_t c = 0; c < C; ++c) {
                const double y_pred =
                    predictions[(i * H + h) * C + c] * p.stats.std[c] + p.stats.mean[c];
                std::snprintf(line, sizeof(line), "%s,%s,%zu,%.10g,%.10g\n",
                              p.raw.timestamps[row].c_str(), p.raw.channel_names[c].c_str(), h + 1,
                              p.raw.at(row, c), y_pred);
                csv += line;
            }
        }
    }
    if (!out_path.empty()) {
        write_text_file(out_path, csv);
        std::cout << "wrote " << samples.size() * H * C << " prediction rows to " << out_path << "\n";
    } else {
        std::cout << csv;
    }
    return 0;
}

inline int run_inspect_hippo(RunConfig run, std::size_t limit, const std::string& out_path) {
    run.model.use_hippo = true;
    Pipeline p = build_pipeline(run.data, run.model);
    const std::size_t N = run.model.hippo_order, C = run.model.channels;

    std::string csv = "t,channel";
    for (std::size_t n = 0; n < N; ++n) csv += ",c_" + std::to_string(n);
    csv += "\n";
    const std::size_t rows = (limit > 0 && limit < p.raw.rows()) ? limit : p.raw.rows();
    char cell[48];
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
            csv += p.raw.timestamps[t] + "," + p.raw.channel_names[c];
            for (std::size_t n = 0; n < N; ++n) {
                std::snprintf(cell, sizeof(cell), ",%.10g", p.states[t].coeffs[c * N + n]);
                csv += cell;
            }
            csv += "\n";
        }
    }
    if (!out_path.empty()) {
        write_text_file(out_path, csv);
        std::cout << "wrote " << rows * C << " state rows to " << out_path << "\n";
    } else {
        std::cout << csv;
    }
    return 0;
}

template <typename T>
int run_inspect_attention(const std::string& ckpt_path, RunConfig run, const std::string& split,
                          std::size_t sample_idx, const std::string& out_path) {
    auto [cfg, precision] = checkpoint_header(ckpt_path);
    Pipeline p = build_pipeline(run.data, cfg);
    auto params = checkpoint_load<T>(ckpt_path, cfg);

    auto [begin, end] = split_range(p.bounds, split);
    auto samples = make_samples(p.scaled, p.states, cfg.lookback, cfg.horizon, begin, end);
    if (sample_idx >= samples.size())
        throw ScfError(errc::bad_args, "sample index " + std::to_string(sample_idx) +
                                           " out of range (split has " +
                                           std::to_string(samples.size()) + " samples)");

    const auto& s = samples[sample_idx];
    std::vector<T> window(s.lookback.begin(), s.lookback.end());
    ScoreTrace<T> trace;
    forward<T>(window, s.state, params, cfg, &trace);

    const std::size_t C = cfg.channels;
    nlohmann::json j{{"split", split},
                     {"sample", sample_idx},
                     {"timestamp", p.raw.timestamps[s.position]},
                     {"layer", cfg.depth - 1},
                     {"channels", p.raw.channel_names},
                     {"heads", nlohmann::json::array()}};
    for (std::size_t h = 0; h < trace.size(); ++h) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < C; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < C; ++c)
                row.push_back(static_cast<double>(trace[h][r * C + c]));
            rows.push_back(std::move(row));
        }
        j["heads"].push_back({{"head", h}, {"scores", std::move(rows)}});
    }
    const std::string body = j.dump(2) + "\n";
    if (!out_path.empty()) write_text_file(out_path, body);
    std::cout << body;
    return 0;
}

template <typename T>
int run_inspect_params(ModelConfig cfg) {
    validate_config(cfg);
    auto params = init_params<T>(cfg, 0);
    auto report = param_report(params, cfg);

    nlohmann::json per = nlohmann::json::array();
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        auto& block = params.blocks[b];
        const std::string prefix = "block" + std::to_string(b);
        std::vector<std::pair<std::string, StructuredTransform<T>*>> transforms{
            {prefix + ".q", &block.q}, {prefix + ".k", &block.k},
            {prefix + ".v", &block.v}, {prefix + ".f", &block.f}};
        if (block.f2) transforms.push_back({prefix + ".f2", &*block.f2});
        for (auto& [name, tr] : transforms)
            per.push_back({{"name", name},
                           {"free_weights", transform_weight_count(*tr)},
                           {"dense_equivalent", cfg.embed_dim * cfg.embed_dim}});
    }
    nlohmann::json j{{"variant", variant_name(cfg.variant)},
                     {"embed_dim", cfg.embed_dim},
                     {"structured_weights", report.structured_weights},
                     {"dense_equivalent", report.dense_equivalent},
                     {"structured_fraction",
                      static_cast<double>(report.structured_weights) /
                          static_cast<double>(report.dense_equivalent)},
                     {"total_free", report.total_free},
                     {"transforms", std::move(per)}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

inline int run_verify(const std::string& suite, const std::string& out_path) {
    auto suites = verify_suites(suite);
    bool all_ok = true;
    nlohmann::json j{{"suites", nlohmann::json::array()}};
    for (const auto& s : suites) {
        nlohmann::json props = nlohmann::json::array();
        for (const auto& prop : s.properties) {
            std::cout << (prop.passed ? "[PASS] " : "[FAIL] ") << s.name << "/" << prop.name << ": "
                      << prop.detail << "\n";
            props.push_back({{"name", prop.name}, {"passed", prop.passed}, {"detail", prop.detail}});
            all_ok = all_ok && prop.passed;
        }
        j["suites"].push_back({{"name", s.name}, {"passed", s.passed()}, {"properties", std::move(props)}});
    }
    j["passed"] = all_ok;
    if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
    std::cout << (all_ok ? "all properties passed" : "FAILURES above") << "\n";
    return all_ok ? 0 : 1;
}

}  // namespace cli_detail

// Precision-dispatched entry points used by main().

inline int cmd_train(const RunConfig& run) {
    if (run.model.precision == "f32") return cli_detail::run_train<float>(run);
    return cli_detail::run_train<double>(run);
}

inline int cmd_eval(const std::string& ckpt, const RunConfig& run, const std::string& split,
                    std::size_t threads, const std::string& out) {
    if (cli_detail::checkpoint_header(ckpt).second == "f32")
        return cli_detail::run_eval<float>(ckpt, run, split, threads, out);
    return cli_detail::run_eval<double>(ckpt, run, split, threads, out);
}

inline int cmd_predict(const std::string& ckpt, const RunConfig& run, const std::string& split,
                       std::size_t threads, std::size_t limit, const std::string& out) {
    if (cli_detail::checkpoint_header(ckpt).second == "f32")
        return cli_detail::run_predict<float>(ckpt, run, split, threads, limit, out);
    return cli_detail::run_predict<double>(ckpt, run, split, threads, limit, out);
}

inline int cmd_inspect_hippo(const RunConfig& run, std::size_t limit, const std::string& out) {
    return cli_detail::run_inspect_hippo(run, limit, out);
}

inline int cmd_inspect_attention(const std::string& ckpt, const RunConfig& run,
                                 const std::string& split, std::size_t sample,
                                 const std::string& out) {
    if (cli_detail::checkpoint_header(ckpt).second == "f32")
        return cli_detail::run_inspect_attention<float>(ckpt, run, split, sample, out);
    return cli_detail::run_inspect_attention<double>(ckpt, run, split, sample, out);
}

inline int cmd_inspect_params(const ModelConfig& cfg) {
    if (cfg.precision == "f32") return cli_detail::run_inspect_params<float>(cfg);
    return cli_detail::run_inspect_params<double>(cfg);
}

inline int cmd_verify(const std::string& suite, const std::string& out) {
    return cli_detail::run_verify(suite, out);
}

}  // namespace scformer
