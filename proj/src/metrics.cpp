#include "mt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mt/encoder.hpp"
#include "mt/errors.hpp"

namespace mt {

ClassifierHead init_head(std::size_t rep_dim, std::size_t out_dim,
                         std::uint64_t seed, double init_scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = init_scale / std::sqrt(static_cast<double>(rep_dim));
    std::vector<double> w(rep_dim * out_dim);
    for (auto& x : w) x = normal(rng) * sd;
    return ClassifierHead{Tensor::from({rep_dim, out_dim}, std::move(w), true),
                          Tensor::zeros({1, out_dim}, true)};
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": " + std::to_string(a) +
                             " predictions vs " + std::to_string(b) + " labels");
}

struct Confusion {
    double tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion binary_confusion(const std::vector<int>& preds,
                           const std::vector<int>& labels, const char* op) {
    check_lengths(preds.size(), labels.size(), op);
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] > 1 || labels[i] < 0 || labels[i] > 1)
            throw ModeError(std::string(op) + ": requires binary labels");
        if (preds[i] == 1 && labels[i] == 1) c.tp += 1;
        else if (preds[i] == 1 && labels[i] == 0) c.fp += 1;
        else if (preds[i] == 0 && labels[i] == 1) c.fn += 1;
        else c.tn += 1;
    }
    return c;
}

}  // namespace

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    check_lengths(preds.size(), labels.size(), "accuracy");
    if (preds.empty()) throw DataError("accuracy: empty inputs");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double f1(const std::vector<int>& preds, const std::vector<int>& labels) {
    const Confusion c = binary_confusion(preds, labels, "f1");
    const double denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0.0 ? 0.0 : 2 * c.tp / denom;
}

double matthews(const std::vector<int>& preds, const std::vector<int>& labels) {
    const Confusion c = binary_confusion(preds, labels, "matthews");
    const double denom2 =
        (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
    if (denom2 == 0.0) return 0.0;  // degenerate confusion matrix
    return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom2);
}

namespace {

// Average ranks, 1-based; ties receive the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i) +
                                  static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b,
               bool* degenerate) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(const std::vector<double>& pred,
                const std::vector<double>& target, bool* degenerate) {
    check_lengths(pred.size(), target.size(), "spearman");
    if (pred.size() < 2) throw DataError("spearman: need at least 2 points");
    if (degenerate) *degenerate = false;
    return pearson(average_ranks(pred), average_ranks(target), degenerate);
}

GroupReport group_report(const std::vector<int>& preds,
                         const std::vector<int>& labels,
                         const std::vector<int>& groups) {
    check_lengths(preds.size(), labels.size(), "group_report");
    check_lengths(preds.size(), groups.size(), "group_report");
    if (preds.empty()) throw DataError("group_report: empty group set");
    std::map<int, std::pair<std::size_t, std::size_t>> counts;  // hit, total
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto& [hit, total] = counts[groups[i]];
        ++total;
        if (preds[i] == labels[i]) ++hit;
    }
    GroupReport report;
    report.worst_group = 1.0;
    for (const auto& [g, ht] : counts) {
        const double acc =
            static_cast<double>(ht.first) / static_cast<double>(ht.second);
        report.per_group[g] = acc;
        report.worst_group = std::min(report.worst_group, acc);
    }
    return report;
}

namespace {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

AttackResult attack_batch(const EncoderParams& params,
                          const ClassifierHead& head, Batch batch,
                          const AttackConfig& attack) {
    if (attack.epsilon < 0.0)
        throw ParameterError("attack: epsilon must be >= 0, got " +
                             std::to_string(attack.epsilon));
    if (attack.steps < 1) throw ParameterError("attack: steps must be >= 1");

    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const auto& inst : batch) labels.push_back(inst.label_int());

    // Clean embeddings, cut off from the encoder graph; the attack ascends
    // the loss as a function of the embeddings alone.
    const Tensor clean = encode(params, batch).detach();
    std::vector<double> e = clean.data();
    const Shape shape = clean.shape();

    const int iterations = attack.kind == AttackKind::Fgsm ? 1 : attack.steps;
    const double step =
        attack.kind == AttackKind::Fgsm ? attack.epsilon : attack.step_size;
    for (int it = 0; it < iterations; ++it) {
        Tensor emb = Tensor::from(shape, e, true);
        Tensor loss = loss_ce(head.logits(emb), labels);
        emb.zero_grad();
        loss.backward();
        const auto& g = emb.grad();
        for (std::size_t i = 0; i < e.size(); ++i) {
            e[i] += step * sign(g[i]);
            // project onto the ℓ∞ ball around the clean embedding
            const double lo = clean.data()[i] - attack.epsilon;
            const double hi = clean.data()[i] + attack.epsilon;
            e[i] = std::clamp(e[i], lo, hi);
        }
    }

    Tensor perturbed = Tensor::from(shape, std::move(e));
    Tensor logits = head.logits(perturbed);
    std::vector<int> preds(batch.size());
    const std::size_t c = logits.cols();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        preds[i] = static_cast<int>(best);
    }
    return AttackResult{std::move(perturbed), std::move(preds)};
}

const char* attack_kind_name(AttackKind kind) {
    return kind == AttackKind::Fgsm ? "fgsm" : "pgd";
}

AttackKind attack_kind_from_name(const std::string& name) {
    if (name == "fgsm") return AttackKind::Fgsm;
    if (name == "pgd") return AttackKind::Pgd;
    throw ConfigError("unknown attack kind: " + name);
}

}  // namespace mt
