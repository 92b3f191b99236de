#include "mt/match.hpp"

#include <cmath>

#include "mt/errors.hpp"

namespace mt {

MatchMatrix compute_match_matrix(const Tensor& representations,
                                 double temperature) {
    if (representations.shape().size() != 2 || representations.rows() < 1)
        throw DimensionError("compute_match_matrix: expected n×d matrix, got " +
                             shape_string(representations.shape()));
    for (double v : representations.data())
        if (!std::isfinite(v))
            throw NumericError("compute_match_matrix: non-finite representation");
    Tensor sims = matmul(representations, transpose(representations));
    return MatchMatrix{row_softmax(sims, temperature), temperature};
}

MatchMatrix apply_mask(const MatchMatrix& m, const std::vector<int>& labels,
                       MatchMode mode, bool renormalize) {
    if (mode == MatchMode::Vanilla || mode == MatchMode::Full) return m;
    const std::size_t n = m.size();
    if (labels.size() != n)
        throw DimensionError("apply_mask: " + std::to_string(labels.size()) +
                             " labels for a " + std::to_string(n) + "×" +
                             std::to_string(n) + " matrix");
    const bool positive = mode == MatchMode::PositiveOnly;
    // Diagonal always survives in both modes.
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const bool same = labels[i] == labels[j];
            const bool keep = i == j || (positive ? same : !same);
            mask[i * n + j] = keep ? 1.0 : 0.0;
        }
    Tensor masked = mul_const(m.values, mask);
    if (renormalize) masked = row_renormalize(masked);
    return MatchMatrix{masked, m.temperature};
}

Tensor compose(const MatchMatrix& m, const Tensor& representations) {
    return matmul(m.values, representations);
}

MassDiagnostics mass_diagnostics(const MatchMatrix& m,
                                 const std::vector<int>& labels) {
    const std::size_t n = m.size();
    if (labels.size() != n)
        throw DimensionError("mass_diagnostics: label count mismatch");
    MassDiagnostics d{0.0, 0.0, 0.0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = m.values.at(i, j);
            if (i == j)
                d.self_mass += v;
            else if (labels[i] == labels[j])
                d.positive_mass += v;
            else
                d.negative_mass += v;
        }
    const double inv = 1.0 / static_cast<double>(n);
    d.self_mass *= inv;
    d.positive_mass *= inv;
    d.negative_mass *= inv;
    return d;
}

MatchMatrix identity_match(std::size_t n) {
    Tensor eye = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
    return MatchMatrix{eye, 1.0};
}

const char* match_mode_name(MatchMode mode) {
    switch (mode) {
        case MatchMode::Vanilla: return "vanilla";
        case MatchMode::Full: return "full";
        case MatchMode::PositiveOnly: return "positive";
        case MatchMode::NegativeOnly: return "negative";
    }
    return "?";
}

MatchMode match_mode_from_name(const std::string& name) {
    if (name == "vanilla") return MatchMode::Vanilla;
    if (name == "full") return MatchMode::Full;
    if (name == "positive") return MatchMode::PositiveOnly;
    if (name == "negative") return MatchMode::NegativeOnly;
    throw ConfigError("unknown match mode: " + name);
}

}  // namespace mt
