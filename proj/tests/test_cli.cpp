#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "mt/data.hpp"
#include "mt/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mt_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(MATCH_TUNE_BIN) + " " + args +
                            " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string capture(const std::string& args) {
    TempDir tmp;
    const std::string out = (tmp.path / "out.txt").string();
    const std::string cmd =
        std::string(MATCH_TUNE_BIN) + " " + args + " >" + out + " 2>&1";
    (void)std::system(cmd.c_str());
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json small_config() {
    return json{
        {"dataset",
         {{"generator", "gaussian"}, {"classes", 2}, {"count", 80},
          {"dim", 4}, {"separation", 4.0}, {"seed", 1}}},
        {"train",
         {{"encoder",
           {{"kind", "mlp"}, {"feature", 4}, {"hidden", 8}, {"rep", 4}}},
          {"mode", "full"}, {"epochs", 2}, {"batch_size", 8}, {"lr", 0.01}}},
        {"repeat", 1},
        {"seed", 3}};
}

void write_config(const fs::path& p, const json& j) {
    std::ofstream out(p);
    out << j.dump(2);
}

}  // namespace

TEST_CASE("gen writes a loadable dataset and refuses to overwrite") {
    TempDir tmp;
    write_config(tmp.path / "c.json", small_config());
    const std::string data = (tmp.path / "d.jsonl").string();
    CHECK(run("gen --config " + (tmp.path / "c.json").string() + " --out " +
              data) == 0);
    mt::Dataset ds = mt::load_dataset(data);
    CHECK(ds.size() == 80);
    // no --force: refusal with a config-level exit code
    CHECK(run("gen --config " + (tmp.path / "c.json").string() + " --out " +
              data) == 1);
    CHECK(run("gen --config " + (tmp.path / "c.json").string() + " --out " +
              data + " --force") == 0);
}

TEST_CASE("gen prints group counts for the token task") {
    TempDir tmp;
    json cfg = small_config();
    cfg["dataset"] = {{"generator", "tokens"}, {"classes", 2}, {"count", 200},
                      {"dim", 20},          {"rho", 0.9},    {"seed", 2}};
    write_config(tmp.path / "c.json", cfg);
    const std::string out = capture("gen --config " +
                                    (tmp.path / "c.json").string() + " --out " +
                                    (tmp.path / "d.jsonl").string());
    CHECK(out.find("group 0:") != std::string::npos);
    CHECK(out.find("group 3:") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected before any work") {
    TempDir tmp;
    json cfg = small_config();
    cfg["surprise"] = 1;
    write_config(tmp.path / "c.json", cfg);
    CHECK(run("train --config " + (tmp.path / "c.json").string() + " --out " +
              (tmp.path / "runs").string()) == 1);
}

TEST_CASE("train writes metrics, model, and summary; determinism holds") {
    TempDir tmp;
    write_config(tmp.path / "c.json", small_config());
    const std::string cfg = (tmp.path / "c.json").string();
    CHECK(run("train --config " + cfg + " --out " +
              (tmp.path / "runs_a").string()) == 0);
    CHECK(run("train --config " + cfg + " --out " +
              (tmp.path / "runs_b").string()) == 0);

    mt::ExperimentConfig parsed =
        mt::load_experiment_config(cfg);
    const std::string hash = mt::config_hash(parsed);
    const fs::path run_a = tmp.path / "runs_a" / hash / "run_0";
    const fs::path run_b = tmp.path / "runs_b" / hash / "run_0";
    REQUIRE(fs::exists(run_a / "metrics.jsonl"));
    REQUIRE(fs::exists(run_a / "model.mtm"));
    REQUIRE(fs::exists(tmp.path / "runs_a" / hash / "summary.json"));

    std::ifstream fa(run_a / "metrics.jsonl"), fb(run_b / "metrics.jsonl");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());

    // a second invocation into the same directory requires --force
    CHECK(run("train --config " + cfg + " --out " +
              (tmp.path / "runs_a").string()) == 1);
}

TEST_CASE("eval round-trips a trained model; zero-epsilon attack is clean") {
    TempDir tmp;
    write_config(tmp.path / "c.json", small_config());
    const std::string cfg = (tmp.path / "c.json").string();
    REQUIRE(run("gen --config " + cfg + " --out " +
                (tmp.path / "d.jsonl").string()) == 0);
    REQUIRE(run("train --config " + cfg + " --out " +
                (tmp.path / "runs").string()) == 0);
    mt::ExperimentConfig parsed = mt::load_experiment_config(cfg);
    const fs::path model =
        tmp.path / "runs" / mt::config_hash(parsed) / "run_0" / "model.mtm";

    const std::string clean = capture("eval --model " + model.string() +
                                      " --data " + (tmp.path / "d.jsonl").string());
    json jc = json::parse(clean);
    CHECK(jc["accuracy"].get<double>() >= 0.9);

    const std::string attacked =
        capture("eval --model " + model.string() + " --data " +
                (tmp.path / "d.jsonl").string() +
                " --attack --attack-kind fgsm --epsilon 0");
    json ja = json::parse(attacked);
    CHECK(ja["robust_accuracy"].get<double>() == ja["accuracy"].get<double>());

    // missing model file: data-level failure, nonzero exit
    CHECK(run("eval --model /nonexistent.mtm --data " +
              (tmp.path / "d.jsonl").string()) == 2);
}

TEST_CASE("sweep runs the grid and emits a sorted table") {
    TempDir tmp;
    json cfg = small_config();
    cfg["train"]["epochs"] = 1;
    cfg["grid"] = {{"train.temperature", {1.0, 2.0, 3.0}}};
    cfg["repeat"] = 2;
    write_config(tmp.path / "c.json", cfg);
    CHECK(run("sweep --config " + (tmp.path / "c.json").string() + " --out " +
              (tmp.path / "sw").string()) == 0);
    std::ifstream table(tmp.path / "sw" / "sweep_summary.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(table, line);  // header
    double prev = 2.0;
    while (std::getline(table, line)) {
        ++rows;
        // mean_score column is third; verify descending order
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        const double mean = std::stod(cell);
        CHECK(mean <= prev + 1e-12);
        prev = mean;
    }
    CHECK(rows == 3);
}

TEST_CASE("diagnose exports mass and loss tables") {
    TempDir tmp;
    json cfg = small_config();
    write_config(tmp.path / "c.json", cfg);
    REQUIRE(run("train --config " + (tmp.path / "c.json").string() + " --out " +
                (tmp.path / "runs").string()) == 0);
    mt::ExperimentConfig parsed =
        mt::load_experiment_config((tmp.path / "c.json").string());
    const fs::path run_dir =
        tmp.path / "runs" / mt::config_hash(parsed) / "run_0";

    // corrupt one line to exercise the skip-with-warning path
    {
        std::ofstream append(run_dir / "metrics.jsonl", std::ios::app);
        append << "not json\n";
    }
    const std::string out = capture("diagnose " + run_dir.string());
    CHECK(out.find("skipped 1") != std::string::npos);

    std::ifstream masses(run_dir / "masses.csv");
    std::string line;
    std::getline(masses, line);
    std::size_t rows = 0;
    while (std::getline(masses, line)) {
        ++rows;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        double self, pos, neg;
        std::getline(ss, cell, ',');
        self = std::stod(cell);
        std::getline(ss, cell, ',');
        pos = std::stod(cell);
        std::getline(ss, cell, ',');
        neg = std::stod(cell);
        CHECK(std::abs(self + pos + neg - 1.0) < 1e-6);
    }
    CHECK(rows == 16);  // 2 epochs x 8 steps after the holdout split
}

TEST_CASE("diagnose of a vanilla run reports self mass 1 throughout") {
    TempDir tmp;
    json cfg = small_config();
    cfg["train"]["mode"] = "vanilla";
    write_config(tmp.path / "c.json", cfg);
    REQUIRE(run("train --config " + (tmp.path / "c.json").string() + " --out " +
                (tmp.path / "runs").string()) == 0);
    mt::ExperimentConfig parsed =
        mt::load_experiment_config((tmp.path / "c.json").string());
    const fs::path run_dir =
        tmp.path / "runs" / mt::config_hash(parsed) / "run_0";
    REQUIRE(run("diagnose " + run_dir.string()) == 0);
    std::ifstream masses(run_dir / "masses.csv");
    std::string line;
    std::getline(masses, line);
    while (std::getline(masses, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        CHECK(std::stod(cell) == 1.0);
    }
}
