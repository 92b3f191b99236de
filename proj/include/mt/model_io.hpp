#pragma once

#include <string>

#include "mt/encoder.hpp"
#include "mt/metrics.hpp"
#include "mt/train.hpp"

namespace mt {

// Trained encoder plus head, with enough task info to evaluate.
struct Model {
    EncoderParams params;
    ClassifierHead head;
    LossKind loss = LossKind::CrossEntropy;
    std::size_t num_classes = 2;
    double temperature = 1.0;
};

// File layout: a text header (tensor names, shapes, byte offsets) terminated
// by a "---" line, followed by one flat little-endian float64 array.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace mt
