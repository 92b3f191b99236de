#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mt/data.hpp"
#include "mt/tensor.hpp"

namespace mt {

struct EncoderParams;

// Linear classifier (or regressor, out_dim 1) on top of the representations.
struct ClassifierHead {
    Tensor weight;  // rep_dim × out_dim
    Tensor bias;    // 1 × out_dim

    std::size_t out_dim() const { return weight.cols(); }
    Tensor logits(const Tensor& reps) const {
        return add_row_vector(matmul(reps, weight), bias);
    }
};

ClassifierHead init_head(std::size_t rep_dim, std::size_t out_dim,
                         std::uint64_t seed, double init_scale = 0.1);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);
// Binary F1 with positive class 1.
double f1(const std::vector<int>& preds, const std::vector<int>& labels);
// Binary Matthews correlation; 0 when any marginal of the confusion matrix
// is zero.
double matthews(const std::vector<int>& preds, const std::vector<int>& labels);
// Pearson correlation of average ranks (ties get mean ranks). A constant
// input vector yields 0 and sets the degenerate flag.
double spearman(const std::vector<double>& pred,
                const std::vector<double>& target,
                bool* degenerate = nullptr);

struct GroupReport {
    std::map<int, double> per_group;
    double worst_group = 0.0;
};

GroupReport group_report(const std::vector<int>& preds,
                         const std::vector<int>& labels,
                         const std::vector<int>& groups);

struct EvalReport {
    double accuracy = 0.0;
    std::optional<double> matthews;
    std::optional<double> f1;
    std::optional<double> spearman;  // regression only
    std::optional<GroupReport> groups;
    std::optional<double> robust_accuracy;
    double loss = 0.0;
};

enum class AttackKind { Fgsm, Pgd };

// ℓ∞ attack on the representation vectors feeding the classifier head.
struct AttackConfig {
    AttackKind kind = AttackKind::Pgd;
    double epsilon = 0.1;
    int steps = 10;
    double step_size = 0.01;
    std::uint64_t seed = 0;
};

struct AttackResult {
    Tensor perturbed;  // n×d, detached
    std::vector<int> preds;
};

// fgsm: e' = e + ε·sign(∇e L). pgd: `steps` signed-ascent iterations of
// step_size, projected onto the ℓ∞ ball of radius ε around the clean
// embeddings. Predictions use the perturbed embeddings with M = identity.
AttackResult attack_batch(const EncoderParams& params,
                          const ClassifierHead& head, Batch batch,
                          const AttackConfig& attack);

const char* attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(const std::string& name);

}  // namespace mt
