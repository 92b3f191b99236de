#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mt/data.hpp"
#include "mt/metrics.hpp"
#include "mt/train.hpp"

namespace mt {

// Full experiment recipe, parsed strictly: unknown keys are errors.
struct ExperimentConfig {
    // Either a generator spec or a dataset file path.
    std::optional<DatasetSpec> dataset_spec;
    std::string dataset_path;
    std::optional<DatasetSpec> eval_spec;
    std::string eval_path;
    double eval_split = 0.2;  // used when no eval dataset is given

    double noise_ratio = 0.0;
    std::optional<int> minority_label;
    double minority_keep = 1.0;

    TrainConfig train;
    std::optional<AttackConfig> attack;

    std::size_t repeat = 1;
    std::uint64_t base_seed = 0;

    nlohmann::json raw;  // canonical parsed form, used for hashing
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// FNV-1a over the canonical JSON dump.
std::string config_hash(const ExperimentConfig& config);

struct RunResult {
    std::uint64_t seed = 0;
    EvalReport report;
    std::vector<double> epoch_seconds;
    bool failed = false;
    std::string failure_note;
};

struct RunSummary {
    std::string hash;
    std::vector<RunResult> runs;
    double mean_score = 0.0;
    double max_score = 0.0;
    double mean_epoch_seconds = 0.0;
    std::size_t failed_runs = 0;
};

// Materializes the train/eval datasets for one seeded run.
std::pair<Dataset, Dataset> materialize_datasets(const ExperimentConfig& config,
                                                 std::uint64_t run_seed);

// One seeded run; writes metrics.jsonl and model.mtm into run_dir when it is
// non-empty.
RunResult run_single(const ExperimentConfig& config, std::uint64_t run_seed,
                     const std::string& run_dir);

// `repeat` runs with seeds base_seed + i, aggregated. out_dir empty = dry.
RunSummary run_experiment(const ExperimentConfig& config,
                          const std::string& out_dir, std::size_t jobs = 1);

nlohmann::json summary_to_json(const RunSummary& summary);
void write_summary(const RunSummary& summary, const std::string& path);

struct SweepRow {
    std::string assignment;  // "train.temperature=2"
    RunSummary summary;
};

// Cartesian-product grid over dotted config paths.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const nlohmann::json& grid,
                                const std::string& out_dir, std::size_t jobs = 1);

struct DiagnoseResult {
    std::size_t rows = 0;
    std::size_t skipped = 0;
};

// Reads run_dir/metrics.jsonl and writes masses.csv and loss.csv next to it.
DiagnoseResult diagnose_run(const std::string& run_dir);

}  // namespace mt
