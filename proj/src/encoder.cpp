#include "mt/encoder.hpp"

#include <cmath>
#include <random>

#include "mt/errors.hpp"

namespace mt {

namespace {

Tensor init_weight(Shape shape, std::size_t fan_in, double init_scale,
                   std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = init_scale / std::sqrt(static_cast<double>(fan_in));
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n);
    for (auto& x : data) x = normal(rng) * sd;
    return Tensor::from(std::move(shape), std::move(data), true);
}

void check_token_batch(const EncoderParams& params, Batch batch) {
    for (const auto& inst : batch) {
        if (inst.tokens.empty())
            throw DataError("encode: empty token sequence in batch");
        for (auto t : inst.tokens)
            if (t >= params.config.vocab_size)
                throw DataError("encode: token id " + std::to_string(t) +
                                " >= vocab size " +
                                std::to_string(params.config.vocab_size));
    }
}

}  // namespace

Tensor& EncoderParams::find(const std::string& name) {
    for (auto& [n, t] : named)
        if (n == name) return t;
    throw UsageError("no parameter named " + name);
}

const Tensor& EncoderParams::find(const std::string& name) const {
    for (const auto& [n, t] : named)
        if (n == name) return t;
    throw UsageError("no parameter named " + name);
}

std::vector<Tensor> EncoderParams::tensors() const {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
}

EncoderParams init_encoder(const EncoderConfig& config) {
    if (config.rep_dim < 1 || config.hidden_dim < 1)
        throw ConfigError("encoder: hidden and representation dims must be >= 1");
    const bool tokens = config.kind != EncoderKind::Mlp;
    if (tokens && config.vocab_size < 1)
        throw ConfigError("encoder: token encoders need vocab_size >= 1");
    if (!tokens && config.feature_dim < 1)
        throw ConfigError("encoder: mlp needs feature_dim >= 1");

    std::mt19937_64 rng(config.seed);
    EncoderParams params;
    params.config = config;
    const std::size_t h = config.hidden_dim, d = config.rep_dim;

    switch (config.kind) {
        case EncoderKind::EmbeddingBag:
            params.named.emplace_back(
                "table", init_weight({config.vocab_size, h}, h, config.init_scale,
                                     rng));
            params.named.emplace_back(
                "proj_w", init_weight({h, d}, h, config.init_scale, rng));
            params.named.emplace_back("proj_b", Tensor::zeros({1, d}, true));
            break;
        case EncoderKind::Mlp:
            params.named.emplace_back(
                "w1", init_weight({config.feature_dim, h}, config.feature_dim,
                                  config.init_scale, rng));
            params.named.emplace_back("b1", Tensor::zeros({1, h}, true));
            params.named.emplace_back(
                "w2", init_weight({h, d}, h, config.init_scale, rng));
            params.named.emplace_back("b2", Tensor::zeros({1, d}, true));
            break;
        case EncoderKind::AttentionBlock:
            params.named.emplace_back(
                "table", init_weight({config.vocab_size, h}, h, config.init_scale,
                                     rng));
            params.named.emplace_back(
                "cls", init_weight({1, h}, h, config.init_scale, rng));
            params.named.emplace_back(
                "wq", init_weight({h, h}, h, config.init_scale, rng));
            params.named.emplace_back(
                "wk", init_weight({h, h}, h, config.init_scale, rng));
            params.named.emplace_back(
                "wv", init_weight({h, h}, h, config.init_scale, rng));
            params.named.emplace_back(
                "ff_w1", init_weight({h, h}, h, config.init_scale, rng));
            params.named.emplace_back("ff_b1", Tensor::zeros({1, h}, true));
            params.named.emplace_back(
                "ff_w2", init_weight({h, d}, h, config.init_scale, rng));
            params.named.emplace_back("ff_b2", Tensor::zeros({1, d}, true));
            break;
    }
    return params;
}

namespace {

Tensor encode_embedding_bag(const EncoderParams& params, Batch batch) {
    check_token_batch(params, batch);
    const Tensor& table = params.find("table");
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const auto& inst : batch)
        rows.push_back(mean_rows(gather_rows(table, inst.tokens)));
    Tensor pooled = concat_rows(rows);
    return add_row_vector(matmul(pooled, params.find("proj_w")),
                          params.find("proj_b"));
}

Tensor encode_mlp(const EncoderParams& params, Batch batch) {
    const std::size_t f = params.config.feature_dim;
    std::vector<double> flat;
    flat.reserve(batch.size() * f);
    for (const auto& inst : batch) {
        if (inst.features.size() != f)
            throw DataError("encode: feature length " +
                            std::to_string(inst.features.size()) +
                            " does not match encoder feature_dim " +
                            std::to_string(f));
        flat.insert(flat.end(), inst.features.begin(), inst.features.end());
    }
    Tensor x = Tensor::from({batch.size(), f}, std::move(flat));
    Tensor h1 = tanh(add_row_vector(matmul(x, params.find("w1")),
                                    params.find("b1")));
    return add_row_vector(matmul(h1, params.find("w2")), params.find("b2"));
}

Tensor encode_attention(const EncoderParams& params, Batch batch) {
    check_token_batch(params, batch);
    const Tensor& table = params.find("table");
    const std::size_t h = params.config.hidden_dim;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(h));
    std::vector<Tensor> reps;
    reps.reserve(batch.size());
    for (const auto& inst : batch) {
        Tensor x = concat_rows({params.find("cls"), gather_rows(table, inst.tokens)});
        Tensor q = matmul(x, params.find("wq"));
        Tensor k = matmul(x, params.find("wk"));
        Tensor v = matmul(x, params.find("wv"));
        Tensor attn = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1.0);
        Tensor o = matmul(attn, v);
        reps.push_back(gather_rows(o, {0}));  // classification-token output
    }
    Tensor cls_out = concat_rows(reps);
    Tensor ff = tanh(add_row_vector(matmul(cls_out, params.find("ff_w1")),
                                    params.find("ff_b1")));
    return add_row_vector(matmul(ff, params.find("ff_w2")),
                          params.find("ff_b2"));
}

}  // namespace

Tensor encode(const EncoderParams& params, Batch batch) {
    if (batch.empty()) throw DataError("encode: empty batch");
    switch (params.config.kind) {
        case EncoderKind::EmbeddingBag:
            return encode_embedding_bag(params, batch);
        case EncoderKind::Mlp:
            return encode_mlp(params, batch);
        case EncoderKind::AttentionBlock:
            return encode_attention(params, batch);
    }
    throw UsageError("unknown encoder kind");
}

const char* encoder_kind_name(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::EmbeddingBag: return "embedding-bag";
        case EncoderKind::Mlp: return "mlp";
        case EncoderKind::AttentionBlock: return "attention-block";
    }
    return "?";
}

EncoderKind encoder_kind_from_name(const std::string& name) {
    if (name == "embedding-bag") return EncoderKind::EmbeddingBag;
    if (name == "mlp") return EncoderKind::Mlp;
    if (name == "attention-block") return EncoderKind::AttentionBlock;
    throw ConfigError("unknown encoder kind: " + name);
}

}  // namespace mt
