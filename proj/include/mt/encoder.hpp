#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mt/data.hpp"
#include "mt/tensor.hpp"

namespace mt {

enum class EncoderKind { EmbeddingBag, Mlp, AttentionBlock };

struct EncoderConfig {
    EncoderKind kind = EncoderKind::Mlp;
    std::size_t vocab_size = 0;   // token encoders
    std::size_t feature_dim = 0;  // mlp
    std::size_t hidden_dim = 16;
    std::size_t rep_dim = 16;
    std::uint64_t seed = 0;
    double init_scale = 0.1;
};

// Named parameter tensors, all flagged requires_grad.
struct EncoderParams {
    EncoderConfig config;
    std::vector<std::pair<std::string, Tensor>> named;

    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    std::vector<Tensor> tensors() const;
};

// Zero-mean init scaled by init_scale / sqrt(fan-in); deterministic per seed.
// Biases start at zero.
EncoderParams init_encoder(const EncoderConfig& config);

// Per-instance representations, stacked into an n×rep_dim matrix.
//   embedding-bag:  mean of token embeddings, then affine map.
//   mlp:            two-layer tanh network on dense features.
//   attention-block: a prepended classification token attends over the token
//                    embeddings through one single-head self-attention layer
//                    plus a feed-forward; its output is the representation.
Tensor encode(const EncoderParams& params, Batch batch);

const char* encoder_kind_name(EncoderKind kind);
EncoderKind encoder_kind_from_name(const std::string& name);

}  // namespace mt
