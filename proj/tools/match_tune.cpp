// match-tune: in-batch matching-matrix fine-tuning experiments.
//
// Subcommands: gen, train, eval, sweep, diagnose.
// Exit codes: 0 success, 1 usage/config error, 2 data error,
//             3 numeric divergence, 4 partial sweep failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mt/errors.hpp"
#include "mt/experiment.hpp"
#include "mt/model_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitPartial = 4;

int cmd_gen(const std::string& config_path, const std::string& out_path,
            bool force) {
    if (fs::exists(out_path) && !force) {
        std::cerr << "refusing to overwrite " << out_path
                  << " (pass --force)\n";
        return kExitConfig;
    }
    mt::ExperimentConfig config = mt::load_experiment_config(config_path);
    if (!config.dataset_spec) {
        std::cerr << "gen requires an inline dataset spec, not a path\n";
        return kExitConfig;
    }
    mt::DatasetSpec spec = *config.dataset_spec;
    spec.seed += config.base_seed;
    mt::Dataset train = (spec.kind == mt::GeneratorKind::GaussianClusters)
                            ? mt::gen_gaussian_clusters(spec)
                            : mt::gen_token_task(spec);
    if (config.noise_ratio > 0.0)
        train = mt::inject_label_noise(train, config.noise_ratio,
                                       config.base_seed + 17);
    if (config.minority_label && config.minority_keep < 1.0)
        train = mt::reduce_minority(train, *config.minority_label,
                                    config.minority_keep, config.base_seed + 29);
    mt::save_dataset(train, out_path);
    std::cout << "wrote " << train.size() << " instances to " << out_path
              << "\n";
    if (train.has_groups()) {
        std::map<int, std::size_t> counts;
        for (const auto& inst : train.items) ++counts[inst.group];
        for (const auto& [g, n] : counts)
            std::cout << "group " << g << ": " << n << " instances\n";
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed,
              std::optional<std::size_t> repeat, std::size_t jobs, bool force) {
    mt::ExperimentConfig config = mt::load_experiment_config(config_path);
    if (seed) {
        config.base_seed = *seed;
        config.raw["seed"] = *seed;
    }
    if (repeat) {
        config.repeat = *repeat;
        config.raw["repeat"] = *repeat;
    }
    const fs::path run_base = fs::path(out_dir) / mt::config_hash(config);
    if (fs::exists(run_base) && !force) {
        std::cerr << "run directory " << run_base
                  << " already exists (pass --force to rerun)\n";
        return kExitConfig;
    }
    mt::RunSummary summary = mt::run_experiment(config, out_dir, jobs);
    std::cout << mt::summary_to_json(summary).dump(2) << "\n";
    if (summary.failed_runs == summary.runs.size()) return kExitNumeric;
    if (summary.failed_runs > 0) return kExitPartial;
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             bool attack, const mt::AttackConfig& attack_config,
             bool match_at_eval, const std::string& report_path) {
    mt::Model model = mt::load_model(model_path);
    mt::Dataset data = mt::load_dataset(data_path);

    mt::TrainConfig tc;
    tc.encoder = model.params.config;
    tc.loss = model.loss;
    tc.num_classes = model.num_classes;
    tc.temperature = model.temperature;
    tc.eval_match = match_at_eval;
    mt::EvalReport report = mt::evaluate(model.params, model.head, data, tc);

    if (attack) {
        std::vector<int> robust_preds;
        const std::size_t chunk = 64;
        for (std::size_t start = 0; start < data.size(); start += chunk) {
            const std::size_t n = std::min(chunk, data.size() - start);
            auto result = mt::attack_batch(model.params, model.head,
                                           mt::Batch(&data.items[start], n),
                                           attack_config);
            robust_preds.insert(robust_preds.end(), result.preds.begin(),
                                result.preds.end());
        }
        report.robust_accuracy = mt::accuracy(robust_preds, data.labels_int());
    }

    nlohmann::json j;
    j["accuracy"] = report.accuracy;
    j["loss"] = report.loss;
    if (report.matthews) j["matthews"] = *report.matthews;
    if (report.f1) j["f1"] = *report.f1;
    if (report.spearman) j["spearman"] = *report.spearman;
    if (report.robust_accuracy) j["robust_accuracy"] = *report.robust_accuracy;
    if (report.groups) {
        j["worst_group_accuracy"] = report.groups->worst_group;
        for (const auto& [g, acc] : report.groups->per_group)
            j["group_accuracy"][std::to_string(g)] = acc;
    }
    std::cout << j.dump(2) << "\n";
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        out << j.dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::size_t jobs) {
    std::ifstream in(config_path);
    if (!in) throw mt::ConfigError("cannot open config file " + config_path);
    nlohmann::json j;
    in >> j;
    nlohmann::json grid = j.value("grid", nlohmann::json::object());
    mt::ExperimentConfig base = mt::parse_experiment_config(j);

    auto rows = mt::run_sweep(base, grid, out_dir, jobs);
    std::ofstream table(fs::path(out_dir) / "sweep_summary.csv");
    table << "assignment,hash,mean_score,max_score,failed_runs\n";
    bool partial = false;
    for (const auto& row : rows) {
        std::cout << (row.assignment.empty() ? "(base)" : row.assignment)
                  << "  mean=" << row.summary.mean_score
                  << "  max=" << row.summary.max_score
                  << "  failed=" << row.summary.failed_runs << "\n";
        table << '"' << row.assignment << "\"," << row.summary.hash << ','
              << row.summary.mean_score << ',' << row.summary.max_score << ','
              << row.summary.failed_runs << '\n';
        if (row.summary.failed_runs > 0) partial = true;
    }
    return partial ? kExitPartial : kExitOk;
}

int cmd_diagnose(const std::string& run_dir, const std::string& model_path,
                 const std::string& data_path, double radius, std::size_t k,
                 std::uint64_t seed) {
    auto result = mt::diagnose_run(run_dir);
    std::cout << "exported " << result.rows << " rows";
    if (result.skipped) std::cout << " (skipped " << result.skipped
                                  << " corrupt lines)";
    std::cout << "\n";

    if (!model_path.empty() && !data_path.empty()) {
        mt::Model model = mt::load_model(model_path);
        mt::Dataset data = mt::load_dataset(data_path);
        mt::TrainConfig tc;
        tc.encoder = model.params.config;
        tc.loss = model.loss;
        tc.num_classes = model.num_classes;
        auto probe = mt::sharpness_probe(model.params, model.head, data, tc,
                                         radius, k, seed);
        std::ofstream out(fs::path(run_dir) / "sharpness.csv");
        out << "radius,k,mean_increase,max_increase\n";
        out << radius << ',' << k << ',' << probe.mean_increase << ','
            << probe.max_increase << '\n';
        std::cout << "sharpness mean=" << probe.mean_increase
                  << " max=" << probe.max_increase << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"match-tune: matching-matrix fine-tuning experiments"};
    app.require_subcommand(1);

    std::string config_path, out_path, out_dir = "runs";
    std::string model_path, data_path, report_path, run_dir;
    bool force = false, attack = false, match_at_eval = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> repeat;
    std::size_t jobs = 1;
    mt::AttackConfig attack_config;
    std::string attack_kind = "pgd";
    double radius = 0.0;
    std::size_t sharp_k = 8;
    std::uint64_t sharp_seed = 0;

    auto* gen = app.add_subcommand("gen", "generate a dataset file");
    gen->add_option("--config", config_path, "experiment config")->required();
    gen->add_option("--out", out_path, "output dataset path")->required();
    gen->add_flag("--force", force, "overwrite an existing file");

    auto* train = app.add_subcommand("train", "run seeded training");
    train->add_option("--config", config_path)->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--seed", seed, "override base seed");
    train->add_option("--repeat", repeat, "override repeat count");
    train->add_option("--jobs", jobs, "concurrent runs");
    train->add_flag("--force", force, "rerun over an existing run directory");

    auto* eval = app.add_subcommand("eval", "evaluate a saved model");
    eval->add_option("--model", model_path)->required();
    eval->add_option("--data", data_path)->required();
    eval->add_option("--report", report_path, "also write the report here");
    eval->add_flag("--attack", attack, "apply the adversarial attack first");
    eval->add_option("--attack-kind", attack_kind, "fgsm|pgd");
    eval->add_option("--epsilon", attack_config.epsilon);
    eval->add_option("--steps", attack_config.steps);
    eval->add_option("--step-size", attack_config.step_size);
    eval->add_flag("--match-at-eval", match_at_eval,
                   "apply in-batch matching during evaluation");

    auto* sweep = app.add_subcommand("sweep", "grid sweep over config fields");
    sweep->add_option("--config", config_path)->required();
    sweep->add_option("--out", out_dir);
    sweep->add_option("--jobs", jobs);

    auto* diagnose = app.add_subcommand("diagnose", "export plot-ready tables");
    diagnose->add_option("dir", run_dir, "run directory")->required();
    diagnose->add_option("--model", model_path, "model for the sharpness probe");
    diagnose->add_option("--data", data_path, "dataset for the sharpness probe");
    diagnose->add_option("--radius", radius, "sharpness probe radius");
    diagnose->add_option("--directions", sharp_k, "sharpness probe directions");
    diagnose->add_option("--seed", sharp_seed, "sharpness probe seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, force);
        if (train->parsed())
            return cmd_train(config_path, out_dir, seed, repeat, jobs, force);
        if (eval->parsed()) {
            attack_config.kind = mt::attack_kind_from_name(attack_kind);
            return cmd_eval(model_path, data_path, attack, attack_config,
                            match_at_eval, report_path);
        }
        if (sweep->parsed()) return cmd_sweep(config_path, out_dir, jobs);
        if (diagnose->parsed())
            return cmd_diagnose(run_dir, model_path, data_path, radius, sharp_k,
                                sharp_seed);
    } catch (const mt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mt::ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mt::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mt::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const mt::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const mt::ModeError& e) {
        std::cerr << "mode error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
