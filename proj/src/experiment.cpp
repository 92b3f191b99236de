#include "mt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "mt/errors.hpp"
#include "mt/model_io.hpp"

namespace fs = std::filesystem;

namespace mt {

namespace {

void check_keys(const nlohmann::json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
                return key == a;
            }) == allowed.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

DatasetSpec parse_dataset_spec(const nlohmann::json& j, const std::string& where) {
    check_keys(j, where,
               {"generator", "classes", "count", "dim", "seq_len", "separation",
                "rho", "seed"});
    DatasetSpec spec;
    const std::string gen = j.value("generator", "gaussian");
    if (gen == "gaussian")
        spec.kind = GeneratorKind::GaussianClusters;
    else if (gen == "tokens")
        spec.kind = GeneratorKind::TokenTask;
    else
        throw ConfigError("unknown generator '" + gen + "' in " + where);
    spec.classes = j.value("classes", spec.classes);
    spec.count = j.value("count", spec.count);
    spec.dim = j.value("dim", spec.dim);
    spec.seq_len = j.value("seq_len", spec.seq_len);
    spec.separation = j.value("separation", spec.separation);
    spec.rho = j.value("rho", spec.rho);
    spec.seed = j.value("seed", spec.seed);
    return spec;
}

TrainConfig parse_train_config(const nlohmann::json& j) {
    check_keys(j, "train",
               {"encoder", "mode", "temperature", "renormalize_mask", "loss",
                "classes", "optimizer", "momentum", "batch_size", "epochs",
                "lr", "warmup_ratio", "clip_norm", "groupdro_eta", "r3f_lambda",
                "r3f_sigma", "r3f_normal", "eval_match", "stop_grad_match"});
    TrainConfig config;
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        check_keys(e, "train.encoder",
                   {"kind", "vocab", "feature", "hidden", "rep", "init_scale"});
        config.encoder.kind =
            encoder_kind_from_name(e.value("kind", std::string("mlp")));
        config.encoder.vocab_size = e.value("vocab", config.encoder.vocab_size);
        config.encoder.feature_dim = e.value("feature", config.encoder.feature_dim);
        config.encoder.hidden_dim = e.value("hidden", config.encoder.hidden_dim);
        config.encoder.rep_dim = e.value("rep", config.encoder.rep_dim);
        config.encoder.init_scale = e.value("init_scale", config.encoder.init_scale);
    }
    config.mode = match_mode_from_name(j.value("mode", std::string("vanilla")));
    config.temperature = j.value("temperature", config.temperature);
    config.renormalize_mask = j.value("renormalize_mask", config.renormalize_mask);
    config.loss = loss_kind_from_name(j.value("loss", std::string("ce")));
    config.num_classes = j.value("classes", config.num_classes);
    config.optimizer =
        optimizer_kind_from_name(j.value("optimizer", std::string("adam")));
    config.momentum = j.value("momentum", config.momentum);
    config.batch_size = j.value("batch_size", config.batch_size);
    config.epochs = j.value("epochs", config.epochs);
    config.learning_rate = j.value("lr", config.learning_rate);
    config.warmup_ratio = j.value("warmup_ratio", config.warmup_ratio);
    config.clip_norm = j.value("clip_norm", config.clip_norm);
    if (j.contains("groupdro_eta"))
        config.groupdro_eta = j["groupdro_eta"].get<double>();
    config.r3f_lambda = j.value("r3f_lambda", config.r3f_lambda);
    config.r3f_sigma = j.value("r3f_sigma", config.r3f_sigma);
    config.r3f_normal_noise = j.value("r3f_normal", config.r3f_normal_noise);
    config.eval_match = j.value("eval_match", config.eval_match);
    config.stop_grad_through_match =
        j.value("stop_grad_match", config.stop_grad_through_match);
    return config;
}

AttackConfig parse_attack_config(const nlohmann::json& j) {
    check_keys(j, "attack", {"kind", "epsilon", "steps", "step_size", "seed"});
    AttackConfig attack;
    attack.kind = attack_kind_from_name(j.value("kind", std::string("pgd")));
    attack.epsilon = j.value("epsilon", attack.epsilon);
    attack.steps = j.value("steps", attack.steps);
    attack.step_size = j.value("step_size", attack.step_size);
    attack.seed = j.value("seed", attack.seed);
    return attack;
}

double primary_score(const EvalReport& report) {
    if (report.spearman) return *report.spearman;
    return report.accuracy;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    check_keys(j, "config",
               {"dataset", "eval_dataset", "corruption", "train", "attack",
                "repeat", "seed", "grid"});
    ExperimentConfig config;
    config.raw = j;
    if (!j.contains("dataset"))
        throw ConfigError("config requires a 'dataset' section");
    const auto& d = j["dataset"];
    if (d.contains("path")) {
        check_keys(d, "dataset", {"path"});
        config.dataset_path = d["path"].get<std::string>();
    } else {
        config.dataset_spec = parse_dataset_spec(d, "dataset");
    }
    if (j.contains("eval_dataset")) {
        const auto& e = j["eval_dataset"];
        if (e.contains("path")) {
            check_keys(e, "eval_dataset", {"path"});
            config.eval_path = e["path"].get<std::string>();
        } else if (e.contains("split")) {
            check_keys(e, "eval_dataset", {"split"});
            config.eval_split = e["split"].get<double>();
            if (config.eval_split <= 0.0 || config.eval_split >= 1.0)
                throw ConfigError("eval_dataset.split must lie in (0,1)");
        } else {
            config.eval_spec = parse_dataset_spec(e, "eval_dataset");
        }
    }
    if (j.contains("corruption")) {
        const auto& c = j["corruption"];
        check_keys(c, "corruption",
                   {"noise_ratio", "minority_label", "minority_keep"});
        config.noise_ratio = c.value("noise_ratio", 0.0);
        if (c.contains("minority_label"))
            config.minority_label = c["minority_label"].get<int>();
        config.minority_keep = c.value("minority_keep", 1.0);
    }
    if (j.contains("train")) config.train = parse_train_config(j["train"]);
    if (j.contains("attack"))
        config.attack = parse_attack_config(j["attack"]);
    config.repeat = j.value("repeat", config.repeat);
    if (config.repeat < 1) throw ConfigError("repeat must be >= 1");
    config.base_seed = j.value("seed", config.base_seed);
    config.train.validate();
    return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return parse_experiment_config(j);
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string dump = config.raw.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::pair<Dataset, Dataset> materialize_datasets(const ExperimentConfig& config,
                                                 std::uint64_t run_seed) {
    Dataset train;
    if (!config.dataset_path.empty()) {
        train = load_dataset(config.dataset_path);
    } else {
        DatasetSpec spec = *config.dataset_spec;
        spec.seed += run_seed;
        train = (spec.kind == GeneratorKind::GaussianClusters)
                    ? gen_gaussian_clusters(spec)
                    : gen_token_task(spec);
    }

    Dataset eval;
    if (!config.eval_path.empty()) {
        eval = load_dataset(config.eval_path);
    } else if (config.eval_spec) {
        DatasetSpec spec = *config.eval_spec;
        spec.seed += run_seed + 0x9e37;  // distinct stream from training data
        eval = (spec.kind == GeneratorKind::GaussianClusters)
                   ? gen_gaussian_clusters(spec)
                   : gen_token_task(spec);
    } else {
        // Deterministic holdout split of the training data.
        const auto n_eval = static_cast<std::size_t>(
            config.eval_split * static_cast<double>(train.size()));
        if (n_eval == 0 || n_eval >= train.size())
            throw ConfigError("eval split leaves an empty partition");
        std::mt19937_64 rng(run_seed ^ 0x51c6e2a3ULL);
        std::shuffle(train.items.begin(), train.items.end(), rng);
        eval.items.assign(train.items.end() - static_cast<long>(n_eval),
                          train.items.end());
        train.items.resize(train.size() - n_eval);
    }

    // Corruption applies to the training partition only; evaluation data
    // stays clean.
    if (config.noise_ratio > 0.0)
        train = inject_label_noise(train, config.noise_ratio, run_seed + 17);
    if (config.minority_label && config.minority_keep < 1.0)
        train = reduce_minority(train, *config.minority_label,
                                config.minority_keep, run_seed + 29);
    return {std::move(train), std::move(eval)};
}

RunResult run_single(const ExperimentConfig& config, std::uint64_t run_seed,
                     const std::string& run_dir) {
    RunResult result;
    result.seed = run_seed;

    auto [train_ds, eval_ds] = materialize_datasets(config, run_seed);
    TrainConfig tc = config.train;
    tc.seed = run_seed;

    std::ofstream metrics;
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        metrics.open(fs::path(run_dir) / "metrics.jsonl");
    }
    MetricsSink sink;
    if (metrics.is_open())
        sink = [&metrics](const MetricsRecord& rec) {
            nlohmann::json j{{"step", rec.step},       {"epoch", rec.epoch},
                             {"loss", rec.loss},       {"lr", rec.lr},
                             {"self", rec.self_mass},  {"positive", rec.positive_mass},
                             {"negative", rec.negative_mass}};
            if (rec.eval_score) j["eval_score"] = *rec.eval_score;
            metrics << j.dump() << '\n';
        };

    FitResult fitted = fit(train_ds, eval_ds, tc, sink);
    result.epoch_seconds = fitted.epoch_seconds;
    if (fitted.diverged) {
        result.failed = true;
        result.failure_note = fitted.divergence_note;
        return result;
    }

    result.report = evaluate(fitted.params, fitted.head, eval_ds, tc);
    if (config.attack) {
        const std::vector<int> labels = eval_ds.labels_int();
        std::vector<int> robust_preds;
        const std::size_t chunk = 64;
        for (std::size_t start = 0; start < eval_ds.size(); start += chunk) {
            const std::size_t n = std::min(chunk, eval_ds.size() - start);
            auto attacked = attack_batch(fitted.params, fitted.head,
                                         Batch(&eval_ds.items[start], n),
                                         *config.attack);
            robust_preds.insert(robust_preds.end(), attacked.preds.begin(),
                                attacked.preds.end());
        }
        result.report.robust_accuracy = accuracy(robust_preds, labels);
    }

    if (!run_dir.empty()) {
        Model model{fitted.params, fitted.head, tc.loss, tc.num_classes,
                    tc.temperature};
        save_model(model, (fs::path(run_dir) / "model.mtm").string());
    }
    return result;
}

namespace {

void aggregate(RunSummary& summary) {
    double sum = 0.0, mx = -1.0, secs = 0.0;
    std::size_t ok = 0, epochs = 0;
    for (const auto& run : summary.runs) {
        if (run.failed) {
            ++summary.failed_runs;
            continue;
        }
        const double s = primary_score(run.report);
        sum += s;
        mx = std::max(mx, s);
        ++ok;
        for (double e : run.epoch_seconds) {
            secs += e;
            ++epochs;
        }
    }
    summary.mean_score = ok ? sum / static_cast<double>(ok) : 0.0;
    summary.max_score = ok ? mx : 0.0;
    summary.mean_epoch_seconds =
        epochs ? secs / static_cast<double>(epochs) : 0.0;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config,
                          const std::string& out_dir, std::size_t jobs) {
    RunSummary summary;
    summary.hash = config_hash(config);
    summary.runs.resize(config.repeat);

    fs::path base;
    if (!out_dir.empty()) {
        base = fs::path(out_dir) / summary.hash;
        fs::create_directories(base);
        std::ofstream cfg(base / "config.json");
        cfg << config.raw.dump(2) << '\n';
    }

    const std::size_t workers = std::max<std::size_t>(1, jobs);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= config.repeat) break;
            const std::uint64_t seed = config.base_seed + i;
            const std::string run_dir =
                out_dir.empty() ? std::string()
                                : (base / ("run_" + std::to_string(i))).string();
            try {
                summary.runs[i] = run_single(config, seed, run_dir);
            } catch (const std::exception& e) {
                summary.runs[i].seed = seed;
                summary.runs[i].failed = true;
                summary.runs[i].failure_note = e.what();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    aggregate(summary);
    if (!out_dir.empty())
        write_summary(summary, (base / "summary.json").string());
    return summary;
}

nlohmann::json summary_to_json(const RunSummary& summary) {
    nlohmann::json j;
    j["config_hash"] = summary.hash;
    j["mean_score"] = summary.mean_score;
    j["max_score"] = summary.max_score;
    j["mean_epoch_seconds"] = summary.mean_epoch_seconds;
    j["failed_runs"] = summary.failed_runs;
    j["runs"] = nlohmann::json::array();
    for (const auto& run : summary.runs) {
        nlohmann::json r;
        r["seed"] = run.seed;
        if (run.failed) {
            r["failed"] = true;
            r["note"] = run.failure_note;
        } else {
            r["accuracy"] = run.report.accuracy;
            r["loss"] = run.report.loss;
            if (run.report.matthews) r["matthews"] = *run.report.matthews;
            if (run.report.f1) r["f1"] = *run.report.f1;
            if (run.report.spearman) r["spearman"] = *run.report.spearman;
            if (run.report.robust_accuracy)
                r["robust_accuracy"] = *run.report.robust_accuracy;
            if (run.report.groups) {
                r["worst_group_accuracy"] = run.report.groups->worst_group;
                nlohmann::json g;
                for (const auto& [gid, acc] : run.report.groups->per_group)
                    g[std::to_string(gid)] = acc;
                r["group_accuracy"] = g;
            }
            r["epoch_seconds"] = run.epoch_seconds;
        }
        j["runs"].push_back(r);
    }
    return j;
}

void write_summary(const RunSummary& summary, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write summary to " + path);
    out << summary_to_json(summary).dump(2) << '\n';
}

namespace {

void apply_override(nlohmann::json& j, const std::string& dotted,
                    const nlohmann::json& value) {
    nlohmann::json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const std::string key = dotted.substr(
            start, dot == std::string::npos ? dot : dot - start);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const nlohmann::json& grid,
                                const std::string& out_dir, std::size_t jobs) {
    std::vector<std::string> names;
    std::vector<std::vector<nlohmann::json>> values;
    for (const auto& [name, vals] : grid.items()) {
        if (!vals.is_array() || vals.empty())
            throw ConfigError("grid parameter '" + name +
                              "' must map to a non-empty array");
        names.push_back(name);
        values.emplace_back(vals.begin(), vals.end());
    }
    // Validate every assignment parses before any run starts.
    std::vector<std::vector<std::size_t>> combos;
    std::vector<std::size_t> idx(names.size(), 0);
    while (true) {
        combos.push_back(idx);
        std::size_t k = 0;
        for (; k < idx.size(); ++k) {
            if (++idx[k] < values[k].size()) break;
            idx[k] = 0;
        }
        if (k == idx.size()) break;
        if (names.empty()) break;
    }
    if (names.empty()) combos = {{}};

    std::vector<ExperimentConfig> configs;
    std::vector<std::string> assignments;
    for (const auto& combo : combos) {
        nlohmann::json j = base.raw;
        j.erase("grid");
        std::ostringstream label;
        for (std::size_t k = 0; k < names.size(); ++k) {
            apply_override(j, names[k], values[k][combo[k]]);
            if (k) label << ' ';
            label << names[k] << '=' << values[k][combo[k]].dump();
        }
        configs.push_back(parse_experiment_config(j));
        assignments.push_back(label.str());
    }

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        SweepRow row;
        row.assignment = assignments[i];
        row.summary = run_experiment(configs[i], out_dir, jobs);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SweepRow& a, const SweepRow& b) {
                         return a.summary.mean_score > b.summary.mean_score;
                     });
    return rows;
}

DiagnoseResult diagnose_run(const std::string& run_dir) {
    const fs::path dir(run_dir);
    std::ifstream in(dir / "metrics.jsonl");
    if (!in)
        throw DataError("no metrics.jsonl in " + run_dir);
    std::ofstream masses(dir / "masses.csv");
    std::ofstream losses(dir / "loss.csv");
    masses.precision(17);
    losses.precision(17);
    masses << "step,self,positive,negative\n";
    losses << "step,epoch,loss,lr\n";

    DiagnoseResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            if (j.contains("eval_score")) continue;  // per-epoch eval rows
            masses << j.at("step").get<long>() << ','
                   << j.at("self").get<double>() << ','
                   << j.at("positive").get<double>() << ','
                   << j.at("negative").get<double>() << '\n';
            losses << j.at("step").get<long>() << ','
                   << j.at("epoch").get<long>() << ','
                   << j.at("loss").get<double>() << ','
                   << j.at("lr").get<double>() << '\n';
            ++result.rows;
        } catch (const nlohmann::json::exception&) {
            ++result.skipped;
        }
    }
    return result;
}

}  // namespace mt
