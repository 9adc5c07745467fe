#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <scformer/cli.hpp>

using namespace scformer;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    std::string precision;
    std::string variant;
    bool no_hippo = false;
    bool no_lookback = false;
    bool no_constraints = false;

    CLI::Option* out_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* precision_opt = nullptr;
    CLI::Option* variant_opt = nullptr;
};

void add_model_flags(CLI::App* sub, CommonFlags& f) {
    f.seed_opt = sub->add_option("--seed", f.seed, "master seed for parameter init and shuffling");
    f.precision_opt =
        sub->add_option("--precision", f.precision, "value precision, f32 or f64")
            ->check(CLI::IsMember({"f32", "f64"}));
    f.variant_opt = sub->add_option("--variant", f.variant,
                                    "temporally constrained map family, triangular or conv")
                        ->check(CLI::IsMember({"triangular", "conv"}));
    sub->add_flag("--no-hippo", f.no_hippo, "drop the cumulative historical state input");
    sub->add_flag("--no-lookback", f.no_lookback, "drop the look-back window input");
    sub->add_flag("--no-constraints", f.no_constraints, "lift the temporal constraint (dense maps)");
}

RunConfig load_with_overrides(const CommonFlags& f) {
    RunConfig run = load_run_config(f.config_path);
    if (f.out_opt && *f.out_opt) run.out = f.out;
    if (f.seed_opt && *f.seed_opt) {
        run.seed = f.seed;
        run.train.seed = f.seed;
    }
    if (f.precision_opt && *f.precision_opt) {
        run.model.precision = f.precision;
        run.train.precision = f.precision;
    }
    if (f.variant_opt && *f.variant_opt) run.model.variant = parse_variant(f.variant);
    if (f.no_hippo) run.model.use_hippo = false;
    if (f.no_lookback) run.model.use_lookback = false;
    if (f.no_constraints) run.model.constrained = false;
    return run;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"channel-attention forecaster with temporally constrained maps"};
    app.require_subcommand(1);

    CommonFlags train_f;
    auto* train_cmd = app.add_subcommand("train", "fit a model and write checkpoint + metrics");
    train_cmd->add_option("--config", train_f.config_path, "run config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    train_f.out_opt = train_cmd->add_option("--out", train_f.out, "output directory");
    add_model_flags(train_cmd, train_f);

    std::string eval_ckpt, eval_split = "test", eval_out;
    std::size_t eval_threads = 0;
    CommonFlags eval_f;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--config", eval_f.config_path, "run config JSON (data section is used)")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--split", eval_split, "train, val or test");
    eval_cmd->add_option("--threads", eval_threads, "worker threads (0 = SCFORMER_THREADS or 1)");
    eval_cmd->add_option("--out", eval_out, "also write metrics JSON here");

    std::string pred_ckpt, pred_split = "test", pred_out;
    std::size_t pred_threads = 0, pred_limit = 0;
    CommonFlags pred_f;
    auto* pred_cmd = app.add_subcommand("predict", "write per-step forecasts as CSV");
    pred_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    pred_cmd->add_option("--config", pred_f.config_path, "run config JSON (data section is used)")
        ->required()
        ->check(CLI::ExistingFile);
    pred_cmd->add_option("--split", pred_split, "train, val or test");
    pred_cmd->add_option("--threads", pred_threads, "worker threads (0 = SCFORMER_THREADS or 1)");
    pred_cmd->add_option("--limit", pred_limit, "cap the number of forecast windows (0 = all)");
    pred_cmd->add_option("--out", pred_out, "CSV path (stdout when omitted)");

    std::string ins_what, ins_ckpt, ins_split = "test", ins_out;
    std::size_t ins_sample = 0, ins_limit = 0;
    CommonFlags ins_f;
    auto* ins_cmd = app.add_subcommand("inspect", "dump model internals");
    ins_cmd->add_option("what", ins_what, "hippo, attention or params")
        ->required()
        ->check(CLI::IsMember({"hippo", "attention", "params"}));
    ins_cmd->add_option("--config", ins_f.config_path, "run config JSON")->check(CLI::ExistingFile);
    ins_cmd->add_option("--checkpoint", ins_ckpt, "checkpoint file")->check(CLI::ExistingFile);
    ins_cmd->add_option("--split", ins_split, "split for attention sampling");
    ins_cmd->add_option("--sample", ins_sample, "which forecast window to trace");
    ins_cmd->add_option("--limit", ins_limit, "cap the number of dumped state rows (0 = all)");
    ins_cmd->add_option("--out", ins_out, "write here instead of stdout");

    std::string ver_suite = "all", ver_out;
    auto* ver_cmd = app.add_subcommand("verify", "run the property checks");
    ver_cmd->add_option("suite", ver_suite, "all, hippo, structured, grad or model")
        ->check(CLI::IsMember({"all", "hippo", "structured", "grad", "model"}));
    ver_cmd->add_option("--out", ver_out, "write a JSON report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return cmd_train(load_with_overrides(train_f));
        if (*eval_cmd)
            return cmd_eval(eval_ckpt, load_with_overrides(eval_f), eval_split, eval_threads,
                            eval_out);
        if (*pred_cmd)
            return cmd_predict(pred_ckpt, load_with_overrides(pred_f), pred_split, pred_threads,
                               pred_limit, pred_out);
        if (*ins_cmd) {
            if (ins_what == "hippo") {
                if (ins_f.config_path.empty())
                    throw ScfError(errc::bad_args, "inspect hippo needs --config");
                return cmd_inspect_hippo(load_with_overrides(ins_f), ins_limit, ins_out);
            }
            if (ins_what == "attention") {
                if (ins_ckpt.empty() || ins_f.config_path.empty())
                    throw ScfError(errc::bad_args, "inspect attention needs --checkpoint and --config");
                return cmd_inspect_attention(ins_ckpt, load_with_overrides(ins_f), ins_split,
                                             ins_sample, ins_out);
            }
            ModelConfig cfg;
            if (!ins_ckpt.empty()) {
                cfg = cli_detail::checkpoint_header(ins_ckpt).first;
            } else if (!ins_f.config_path.empty()) {
                RunConfig run = load_with_overrides(ins_f);
                cfg = run.model;
                if (cfg.channels == 0)
                    cfg.channels =
                        load_csv(run.data.path, run.data.date_column, run.data.channels).channels();
            } else {
                throw ScfError(errc::bad_args, "inspect params needs --checkpoint or --config");
            }
            return cmd_inspect_params(cfg);
        }
        if (*ver_cmd) return cmd_verify(ver_suite, ver_out);
    } catch (const ScfError& e) {
        std::cerr << nlohmann::json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    }
    return 0;
}
