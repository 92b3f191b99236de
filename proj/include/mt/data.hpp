#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mt {

// One labeled example. The payload is either a dense feature vector or a
// token-id sequence, never both.
struct Instance {
    std::vector<double> features;
    std::vector<std::size_t> tokens;
    double label = 0.0;
    int group = -1;

    bool is_tokens() const { return !tokens.empty(); }
    int label_int() const { return static_cast<int>(label); }
    bool operator==(const Instance&) const = default;
};

struct Dataset {
    std::vector<Instance> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    // Number of distinct discrete classes, assuming labels in [0,k).
    std::size_t num_classes() const;
    bool has_groups() const;
    std::vector<int> labels_int() const;
    std::vector<int> groups() const;
};

using Batch = std::span<const Instance>;

enum class GeneratorKind { GaussianClusters, TokenTask };

struct DatasetSpec {
    GeneratorKind kind = GeneratorKind::GaussianClusters;
    std::size_t classes = 2;
    std::size_t count = 200;
    std::size_t dim = 16;        // feature dim (gaussian) or vocab size (tokens)
    std::size_t seq_len = 12;    // token task only
    double separation = 4.0;     // gaussian: sphere radius of class means
    double rho = 0.9;            // token task: spurious-correlation strength
    std::uint64_t seed = 0;
};

// k class means on a sphere of radius `separation`; instances are mean plus
// unit-variance noise; labels are the cluster ids.
Dataset gen_gaussian_clusters(const DatasetSpec& spec);

// Token sequences with one label-determining signal token and a spurious
// token whose presence follows the majority pairing with probability rho.
// Group id = label * 2 + spurious-presence, giving 2k groups.
Dataset gen_token_task(const DatasetSpec& spec);

// Flips exactly floor(ratio*N) labels, chosen uniformly without replacement,
// each to a uniformly chosen different class.
Dataset inject_label_noise(const Dataset& ds, double ratio, std::uint64_t seed);

// Keeps floor(keep_ratio * count(target_label)) target-label instances and
// all others; order reshuffled deterministically.
Dataset reduce_minority(const Dataset& ds, int target_label, double keep_ratio,
                        std::uint64_t seed);

// Line-delimited JSON records: {"payload":[...],"tokens":bool,"label":x,"group":g}.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace mt
