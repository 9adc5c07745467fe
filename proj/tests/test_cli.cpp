#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include <scformer/cli.hpp>

using namespace scformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("scf_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    out << body;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tiny_csv(std::size_t rows) {
    std::string csv = "date,alpha,beta\n";
    char line[96];
    for (std::size_t r = 0; r < rows; ++r) {
        const double x = static_cast<double>(r) / 8.0;
        std::snprintf(line, sizeof(line), "2020-01-01 %02zu:%02zu:00,%.6f,%.6f\n", r / 60, r % 60,
                      std::sin(x), 0.5 * std::cos(1.7 * x));
        csv += line;
    }
    return csv;
}

json tiny_run_json(const fs::path& dir) {
    return json{
        {"data", {{"path", (dir / "series.csv").string()}, {"split", {{"sizes", {50, 14, 16}}}}}},
        {"model",
         {{"lookback", 8}, {"horizon", 4}, {"embed_dim", 8}, {"hippo_order", 4}, {"depth", 1},
          {"heads", 2}}},
        {"train", {{"lr", 3e-3}, {"batch_size", 8}, {"max_epochs", 3}, {"patience", 3}}},
        {"out", (dir / "out_run").string()},
        {"seed", 3}};
}

// quoted so paths with spaces survive the shell
std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

int run_cli(const std::string& args, const fs::path& stdout_to = {},
            const fs::path& stderr_to = {}) {
    std::string cmd = std::string(SCFORMER_BIN) + " " + args;
    if (!stdout_to.empty()) cmd += " > " + q(stdout_to);
    if (!stderr_to.empty()) cmd += " 2> " + q(stderr_to);
    const int status = std::system(cmd.c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("run config defaults and seed propagation") {
    auto run = run_config_from_json(json{{"data", {{"path", "x.csv"}}}});
    REQUIRE(run.data.path == "x.csv");
    REQUIRE(run.data.date_column == "date");
    REQUIRE_FALSE(run.data.split.by_sizes);
    REQUIRE(run.data.split.ratio == std::array<std::size_t, 3>{7, 1, 2});
    REQUIRE(run.seed == 0);
    REQUIRE(run.train.seed == 0);
    REQUIRE(run.model.precision == run.train.precision);

    auto seeded = run_config_from_json(json{{"data", {{"path", "x.csv"}}}, {"seed", 42}});
    REQUIRE(seeded.seed == 42);
    REQUIRE(seeded.train.seed == 42);

    auto split_seed = run_config_from_json(
        json{{"data", {{"path", "x.csv"}}}, {"seed", 42}, {"train", {{"seed", 7}}}});
    REQUIRE(split_seed.seed == 42);
    REQUIRE(split_seed.train.seed == 7);
}

TEST_CASE("run config rejects unknown keys at every level") {
    auto expect = [](const json& j, const std::string& needle) {
        REQUIRE_THROWS_MATCHES(run_config_from_json(j), ScfError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring(needle)));
    };
    expect(json{{"data", {{"path", "x"}}}, {"outt", "y"}}, "unknown run config key 'outt'");
    expect(json{{"data", {{"path", "x"}, {"pathh", "y"}}}}, "unknown data config key 'pathh'");
    expect(json{{"data", {{"path", "x"}, {"split", {{"size", {1, 2, 3}}}}}}},
           "unknown split config key 'size'");
    expect(json{{"data", {{"path", "x"}}}, {"train", {{"lrr", 0.1}}}},
           "unknown train config key 'lrr'");
    expect(json{{"data", {{"path", "x"}}}, {"model", {{"embed", 8}}}},
           "unknown model config key 'embed'");
    expect(json{{"data", {{"path", "x"}, {"split", {{"sizes", {1, 2, 3}}, {"ratio", {7, 1, 2}}}}}}},
           "either 'sizes' or 'ratio'");
    expect(json{{"model", {{"embed_dim", 8}}}}, "'data' section is required");
}

TEST_CASE("precision must agree between model and train sections") {
    REQUIRE_THROWS_MATCHES(
        run_config_from_json(json{{"data", {{"path", "x"}}},
                                  {"model", {{"precision", "f32"}}},
                                  {"train", {{"precision", "f64"}}}}),
        ScfError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("conflicts")));

    auto run = run_config_from_json(
        json{{"data", {{"path", "x"}}}, {"model", {{"precision", "f32"}}}});
    REQUIRE(run.train.precision == "f32");
}

TEST_CASE("effective thread count prefers the flag, then the environment") {
    unsetenv("SCFORMER_THREADS");
    REQUIRE(effective_threads(0) == 1);
    REQUIRE(effective_threads(5) == 5);
    setenv("SCFORMER_THREADS", "3", 1);
    REQUIRE(effective_threads(0) == 3);
    REQUIRE(effective_threads(2) == 2);
    setenv("SCFORMER_THREADS", "junk", 1);
    REQUIRE(effective_threads(0) == 1);
    unsetenv("SCFORMER_THREADS");
}

TEST_CASE("train subcommand writes checkpoint, history and metrics") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));

    REQUIRE(run_cli("train --config " + q(dir.path / "run.json"), dir.path / "train.out") == 0);
    REQUIRE(fs::exists(dir.path / "out_run" / "checkpoint.bin"));
    REQUIRE(fs::exists(dir.path / "out_run" / "history.json"));
    REQUIRE(fs::exists(dir.path / "out_run" / "metrics.json"));

    auto metrics = json::parse(read_file(dir.path / "out_run" / "metrics.json"));
    REQUIRE(metrics["seed"] == 3);
    REQUIRE(metrics["train_seed"] == 3);
    REQUIRE(metrics["test"]["samples"].get<std::size_t>() == 5);
    REQUIRE(metrics["test"]["per_horizon_mse"].size() == 4);
    REQUIRE(std::isfinite(metrics["test"]["mse"].get<double>()));

    auto history = json::parse(read_file(dir.path / "out_run" / "history.json"));
    REQUIRE(history["epochs"].size() == 3);
    REQUIRE(history["steps"] == 15);  // 39 train samples -> ceil(39/8) = 5 steps per epoch
}

TEST_CASE("eval is deterministic and thread-count invariant") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));
    REQUIRE(run_cli("train --config " + q(dir.path / "run.json"), dir.path / "train.out") == 0);

    const std::string base = "eval --checkpoint " + q(dir.path / "out_run" / "checkpoint.bin") +
                             " --config " + q(dir.path / "run.json") + " --split val";
    REQUIRE(run_cli(base + " --threads 1", dir.path / "a.json") == 0);
    REQUIRE(run_cli(base + " --threads 1", dir.path / "b.json") == 0);
    REQUIRE(run_cli(base + " --threads 4", dir.path / "c.json") == 0);
    REQUIRE(read_file(dir.path / "a.json") == read_file(dir.path / "b.json"));
    REQUIRE(read_file(dir.path / "a.json") == read_file(dir.path / "c.json"));

    // the val metrics surfaced here match training's own metrics.json
    auto eval_j = json::parse(read_file(dir.path / "a.json"));
    auto train_j = json::parse(read_file(dir.path / "out_run" / "metrics.json"));
    REQUIRE(eval_j["metrics"]["mse"] == train_j["val"]["mse"]);
}

TEST_CASE("predict emits one row per sample, horizon step and channel") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));
    REQUIRE(run_cli("train --config " + q(dir.path / "run.json"), dir.path / "train.out") == 0);

    REQUIRE(run_cli("predict --checkpoint " + q(dir.path / "out_run" / "checkpoint.bin") +
                        " --config " + q(dir.path / "run.json") + " --limit 2 --out " +
                        q(dir.path / "pred.csv"),
                    dir.path / "pred.out") == 0);
    std::istringstream csv(read_file(dir.path / "pred.csv"));
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "timestamp,channel,horizon_step,y_true,y_pred");
    std::size_t rows = 0;
    double worst_truth = 0.0;
    MultivariateSeries raw = load_csv((dir.path / "series.csv").string());
    while (std::getline(csv, line)) {
        ++rows;
        std::istringstream cells(line);
        std::string ts, ch, hs, yt, yp;
        std::getline(cells, ts, ',');
        std::getline(cells, ch, ',');
        std::getline(cells, hs, ',');
        std::getline(cells, yt, ',');
        std::getline(cells, yp, ',');
        // y_true column carries the raw, unscaled series value
        std::size_t row = 0;
        while (raw.timestamps[row] != ts) ++row;
        const std::size_t c = ch == "alpha" ? 0 : 1;
        worst_truth = std::max(worst_truth, std::abs(std::stod(yt) - raw.at(row, c)));
        REQUIRE(std::isfinite(std::stod(yp)));
    }
    REQUIRE(rows == 2 * 4 * 2);  // samples * horizon * channels
    REQUIRE(worst_truth <= 1e-9);
}

TEST_CASE("inspect hippo dumps one state row per timestamp and channel") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));

    REQUIRE(run_cli("inspect hippo --config " + q(dir.path / "run.json") + " --limit 3",
                    dir.path / "hippo.csv") == 0);
    std::istringstream csv(read_file(dir.path / "hippo.csv"));
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "t,channel,c_0,c_1,c_2,c_3");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 3 * 2);
}

TEST_CASE("inspect attention labels per-head score rows with channel names") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));
    REQUIRE(run_cli("train --config " + q(dir.path / "run.json"), dir.path / "train.out") == 0);

    REQUIRE(run_cli("inspect attention --checkpoint " + q(dir.path / "out_run" / "checkpoint.bin") +
                        " --config " + q(dir.path / "run.json") + " --sample 1",
                    dir.path / "attn.json") == 0);
    auto j = json::parse(read_file(dir.path / "attn.json"));
    REQUIRE(j["channels"] == json::array({"alpha", "beta"}));
    REQUIRE(j["heads"].size() == 2);
    for (const auto& head : j["heads"]) {
        REQUIRE(head["scores"].size() == 2);
        for (const auto& row : head["scores"]) {
            double sum = 0.0;
            for (const auto& v : row) sum += v.get<double>();
            REQUIRE(std::abs(sum - 1.0) < 1e-9);  // softmax rows
        }
    }
}

TEST_CASE("inspect params reports mask-aware free weights") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));

    REQUIRE(run_cli("inspect params --config " + q(dir.path / "run.json"),
                    dir.path / "params.json") == 0);
    auto j = json::parse(read_file(dir.path / "params.json"));
    REQUIRE(j["variant"] == "triangular");
    REQUIRE(j["transforms"].size() == 4);  // q k v f for one block
    for (const auto& tr : j["transforms"]) {
        REQUIRE(tr["free_weights"] == 8 * 9 / 2);
        REQUIRE(tr["dense_equivalent"] == 64);
    }
    REQUIRE(j["structured_fraction"].get<double>() == Catch::Approx(36.0 / 64.0));
}

TEST_CASE("verify subcommand writes a report and sets the exit code") {
    TempDir dir;
    REQUIRE(run_cli("verify structured --out " + q(dir.path / "rep.json"),
                    dir.path / "verify.out") == 0);
    auto j = json::parse(read_file(dir.path / "rep.json"));
    REQUIRE(j["passed"] == true);
    REQUIRE(j["suites"].size() == 1);
    REQUIRE(j["suites"][0]["name"] == "structured");
    REQUIRE(j["suites"][0]["properties"].size() == 3);
}

TEST_CASE("failures surface as a JSON error envelope on stderr") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    write_file(dir.path / "run.json", tiny_run_json(dir.path).dump(2));
    REQUIRE(run_cli("train --config " + q(dir.path / "run.json"), dir.path / "train.out") == 0);

    // corrupt checkpoint
    auto bytes = read_file(dir.path / "out_run" / "checkpoint.bin");
    write_file(dir.path / "bad.bin", bytes.substr(0, bytes.size() - 40));
    REQUIRE(run_cli("eval --checkpoint " + q(dir.path / "bad.bin") + " --config " +
                        q(dir.path / "run.json"),
                    dir.path / "o.txt", dir.path / "e.txt") == 1);
    auto err = json::parse(read_file(dir.path / "e.txt"));
    REQUIRE(err["error"]["code"] == "checkpoint_corrupt");
    REQUIRE_FALSE(err["error"]["message"].get<std::string>().empty());

    // unknown split name
    REQUIRE(run_cli("eval --checkpoint " + q(dir.path / "out_run" / "checkpoint.bin") +
                        " --config " + q(dir.path / "run.json") + " --split holdout",
                    dir.path / "o.txt", dir.path / "e.txt") == 1);
    err = json::parse(read_file(dir.path / "e.txt"));
    REQUIRE(err["error"]["code"] == "bad_args");

    // config whose model section contradicts the data
    auto run = tiny_run_json(dir.path);
    run["model"]["channels"] = 5;
    write_file(dir.path / "bad_run.json", run.dump(2));
    REQUIRE(run_cli("train --config " + q(dir.path / "bad_run.json"), dir.path / "o.txt",
                    dir.path / "e.txt") == 1);
    err = json::parse(read_file(dir.path / "e.txt"));
    REQUIRE(err["error"]["code"] == "config_invalid");
}

TEST_CASE("ablation flags reach the stored model config") {
    TempDir dir;
    write_file(dir.path / "series.csv", tiny_csv(80));
    auto run = tiny_run_json(dir.path);
    run["out"] = (dir.path / "ablate_run").string();
    write_file(dir.path / "run.json", run.dump(2));

    REQUIRE(run_cli("train --config " + q(dir.path / "run.json") + " --no-hippo --seed 11",
                    dir.path / "train.out") == 0);
    auto manifest = checkpoint_manifest((dir.path / "ablate_run" / "checkpoint.bin").string());
    REQUIRE(manifest["model"]["use_hippo"] == false);
    REQUIRE(manifest["seed"] == 11);
    auto metrics = json::parse(read_file(dir.path / "ablate_run" / "metrics.json"));
    REQUIRE(metrics["seed"] == 11);
    REQUIRE(metrics["train_seed"] == 11);
}
