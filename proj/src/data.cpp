#include "mt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "mt/errors.hpp"

namespace mt {

std::size_t Dataset::num_classes() const {
    int mx = -1;
    for (const auto& it : items) mx = std::max(mx, it.label_int());
    return static_cast<std::size_t>(mx + 1);
}

bool Dataset::has_groups() const {
    return !items.empty() &&
           std::all_of(items.begin(), items.end(),
                       [](const Instance& i) { return i.group >= 0; });
}

std::vector<int> Dataset::labels_int() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.label_int());
    return out;
}

std::vector<int> Dataset::groups() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.group);
    return out;
}

Dataset gen_gaussian_clusters(const DatasetSpec& spec) {
    if (spec.classes < 2)
        throw ConfigError("gaussian clusters: need at least 2 classes, got " +
                          std::to_string(spec.classes));
    if (spec.count < 1 || spec.dim < 1)
        throw ConfigError("gaussian clusters: counts and dims must be >= 1");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Class means: random directions scaled to the separation radius.
    std::vector<std::vector<double>> means(spec.classes,
                                           std::vector<double>(spec.dim));
    for (auto& m : means) {
        double norm2 = 0.0;
        for (auto& x : m) {
            x = normal(rng);
            norm2 += x * x;
        }
        const double norm = std::sqrt(norm2);
        if (norm > 0.0)
            for (auto& x : m) x = x / norm * spec.separation;
    }

    Dataset ds;
    ds.items.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        Instance inst;
        const std::size_t k = i % spec.classes;
        inst.label = static_cast<double>(k);
        inst.features.resize(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j)
            inst.features[j] = means[k][j] + normal(rng);
        ds.items.push_back(std::move(inst));
    }
    std::shuffle(ds.items.begin(), ds.items.end(), rng);
    return ds;
}

Dataset gen_token_task(const DatasetSpec& spec) {
    if (spec.dim < 4)
        throw ConfigError("token task: vocab must be >= 4, got " +
                          std::to_string(spec.dim));
    if (spec.classes < 2)
        throw ConfigError("token task: need at least 2 classes");
    if (spec.rho < 0.0 || spec.rho > 1.0)
        throw ConfigError("token task: rho must lie in [0,1]");
    // Vocab layout: ids [0,k) are signal tokens, id k is the spurious token,
    // ids (k, vocab) are filler.
    const std::size_t k = spec.classes;
    if (spec.dim < k + 2)
        throw ConfigError("token task: vocab too small for " +
                          std::to_string(k) + " classes");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> filler(k + 1, spec.dim - 1);

    Dataset ds;
    ds.items.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        Instance inst;
        const std::size_t label = i % k;
        inst.label = static_cast<double>(label);
        // Majority pairing: the spurious token is present for upper-half labels.
        const bool majority_presence = label * 2 >= k;
        const bool present =
            (unif(rng) < spec.rho) ? majority_presence : !majority_presence;
        inst.group = static_cast<int>(label * 2 + (present ? 1 : 0));

        inst.tokens.resize(std::max<std::size_t>(spec.seq_len, 2));
        for (auto& t : inst.tokens) t = filler(rng);
        std::uniform_int_distribution<std::size_t> pos(0, inst.tokens.size() - 1);
        const std::size_t signal_pos = pos(rng);
        inst.tokens[signal_pos] = label;
        if (present) {
            std::size_t spurious_pos = pos(rng);
            while (spurious_pos == signal_pos) spurious_pos = pos(rng);
            inst.tokens[spurious_pos] = k;
        }
        ds.items.push_back(std::move(inst));
    }
    std::shuffle(ds.items.begin(), ds.items.end(), rng);
    return ds;
}

Dataset inject_label_noise(const Dataset& ds, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0)
        throw ParameterError("label noise ratio must lie in [0,1], got " +
                             std::to_string(ratio));
    for (const auto& it : ds.items)
        if (it.label != std::floor(it.label) || it.label < 0.0)
            throw ModeError("label noise requires discrete labels");
    const std::size_t n_classes = ds.num_classes();
    if (n_classes < 2) throw ModeError("label noise requires >= 2 classes");

    Dataset out = ds;
    const auto n_flip =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ds.size())));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> offset(1, n_classes - 1);
    for (std::size_t i = 0; i < n_flip; ++i) {
        auto& inst = out.items[order[i]];
        const auto y = static_cast<std::size_t>(inst.label_int());
        inst.label = static_cast<double>((y + offset(rng)) % n_classes);
    }
    return out;
}

Dataset reduce_minority(const Dataset& ds, int target_label, double keep_ratio,
                        std::uint64_t seed) {
    if (keep_ratio <= 0.0 || keep_ratio > 1.0)
        throw ParameterError("keep_ratio must lie in (0,1], got " +
                             std::to_string(keep_ratio));
    std::vector<std::size_t> target_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.items[i].label_int() == target_label) target_idx.push_back(i);
    if (target_idx.empty())
        throw DataError("reduce_minority: label " + std::to_string(target_label) +
                        " absent from dataset");

    std::mt19937_64 rng(seed);
    std::shuffle(target_idx.begin(), target_idx.end(), rng);
    const auto n_keep = static_cast<std::size_t>(
        std::floor(keep_ratio * static_cast<double>(target_idx.size())));
    std::set<std::size_t> kept(target_idx.begin(), target_idx.begin() + n_keep);

    Dataset out;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.items[i].label_int() != target_label || kept.count(i))
            out.items.push_back(ds.items[i]);
    std::shuffle(out.items.begin(), out.items.end(), rng);
    return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const auto& inst : ds.items) {
        nlohmann::json rec;
        if (inst.is_tokens()) {
            rec["payload"] = inst.tokens;
            rec["tokens"] = true;
        } else {
            rec["payload"] = inst.features;
        }
        rec["label"] = inst.label;
        if (inst.group >= 0) rec["group"] = inst.group;
        out << rec.dump() << '\n';
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
        }
        if (!rec.contains("payload"))
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": record missing payload field");
        if (!rec.contains("label"))
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": record missing label field");
        Instance inst;
        try {
            if (rec.value("tokens", false))
                inst.tokens = rec["payload"].get<std::vector<std::size_t>>();
            else
                inst.features = rec["payload"].get<std::vector<double>>();
            inst.label = rec["label"].get<double>();
            inst.group = rec.value("group", -1);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": bad field type: " + e.what());
        }
        if (inst.features.empty() && inst.tokens.empty())
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": empty payload");
        ds.items.push_back(std::move(inst));
    }
    return ds;
}

}  // namespace mt
