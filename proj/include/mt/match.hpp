#pragma once

#include <string>
#include <vector>

#include "mt/tensor.hpp"

namespace mt {

enum class MatchMode { Vanilla, Full, PositiveOnly, NegativeOnly };

// Row-stochastic n×n matrix of in-batch similarities.
struct MatchMatrix {
    Tensor values;
    double temperature = 1.0;

    std::size_t size() const { return values.rows(); }
};

// Average allocation of matrix mass to self / same-label / other-label
// entries, per batch.
struct MassDiagnostics {
    double self_mass = 1.0;
    double positive_mass = 0.0;
    double negative_mass = 0.0;
    long step = 0;
};

// M = row_softmax(H H^T / temperature); differentiable through both the
// similarities and the normalization.
MatchMatrix compute_match_matrix(const Tensor& representations,
                                 double temperature);

// PositiveOnly keeps the diagonal plus same-label entries; NegativeOnly keeps
// the diagonal plus different-label entries. With renormalize, each surviving
// row is rescaled to sum 1 (a row with mass below 1e-12 falls back to the
// one-hot self row). Vanilla/Full are the identity here.
MatchMatrix apply_mask(const MatchMatrix& m, const std::vector<int>& labels,
                       MatchMode mode, bool renormalize = true);

// Z = M H, the composite representations.
Tensor compose(const MatchMatrix& m, const Tensor& representations);

MassDiagnostics mass_diagnostics(const MatchMatrix& m,
                                 const std::vector<int>& labels);

MatchMatrix identity_match(std::size_t n);

const char* match_mode_name(MatchMode mode);
MatchMode match_mode_from_name(const std::string& name);

}  // namespace mt
