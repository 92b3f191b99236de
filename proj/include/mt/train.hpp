#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mt/data.hpp"
#include "mt/encoder.hpp"
#include "mt/match.hpp"
#include "mt/metrics.hpp"
#include "mt/tensor.hpp"

namespace mt {

enum class OptimizerKind { SgdMomentum, Adam };
enum class LossKind { CrossEntropy, Mse };

struct TrainConfig {
    EncoderConfig encoder;
    MatchMode mode = MatchMode::Vanilla;
    double temperature = 1.0;
    bool renormalize_mask = true;
    LossKind loss = LossKind::CrossEntropy;
    std::size_t num_classes = 2;  // head width; 1 output for regression
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t epochs = 3;
    double learning_rate = 1e-2;
    double warmup_ratio = 0.1;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::optional<double> groupdro_eta;  // enables GroupDRO when set
    double r3f_lambda = 0.0;
    double r3f_sigma = 0.0;
    bool r3f_normal_noise = false;
    bool eval_match = false;           // apply matching at evaluation time
    bool stop_grad_through_match = false;

    void validate() const;
};

struct GroupWeights {
    std::vector<double> q;  // nonnegative, sums to 1
};

struct MetricsRecord {
    long step = 0;
    long epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double self_mass = 1.0;
    double positive_mass = 0.0;
    double negative_mass = 0.0;
    std::optional<double> eval_score;
};

// Linear warmup from 0 to the peak over the first warmup_ratio fraction of
// steps, then linear decay to 0 at total_steps.
double lr_at(long step, long total_steps, const TrainConfig& config);

// Exponentiated-gradient reweighting: q'_g ∝ q_g · exp(eta · L_g).
// Returns the robust loss Σ q'_g L_g and the new weights. Groups with no
// loss entry keep their weight (use NaN-free zero-count convention: pass
// per-group losses aligned with q; groups absent from the batch pass 0 count
// via the `counts` vector).
std::pair<double, GroupWeights> groupdro_update(
    const std::vector<double>& per_group_losses,
    const std::vector<std::size_t>& group_counts, const GroupWeights& q,
    double eta);

// λ · symmetric KL between softmax(head(Z)) and softmax(head(Z + ε)) with
// ε uniform(−σ,σ) (or normal(0,σ)) per element. Classification only.
Tensor r3f_penalty(const ClassifierHead& head, const Tensor& reps, double sigma,
                   double lambda, std::mt19937_64& rng, bool normal_noise);

struct SharpnessResult {
    double mean_increase = 0.0;
    double max_increase = 0.0;
};

// Loss increase under k random unit-norm parameter perturbations of the
// given radius, evaluated on the full dataset with M = identity.
SharpnessResult sharpness_probe(const EncoderParams& params,
                                const ClassifierHead& head, const Dataset& data,
                                const TrainConfig& config, double radius,
                                std::size_t k, std::uint64_t seed);

class Trainer {
  public:
    Trainer(const TrainConfig& config, std::size_t out_dim);

    // One optimization step on a batch. Returns the loss value and the mass
    // diagnostics of the unmasked matching matrix.
    std::pair<double, MassDiagnostics> train_step(Batch batch);

    // Forces M to the identity regardless of mode; used by the drop-in
    // equivalence checks.
    void force_identity_match(bool on) { force_identity_ = on; }

    // Declares the group universe for GroupDRO; weights start uniform.
    void set_group_count(std::size_t count);

    EncoderParams& params() { return params_; }
    const EncoderParams& params() const { return params_; }
    ClassifierHead& head() { return head_; }
    const ClassifierHead& head() const { return head_; }
    long step_count() const { return step_; }
    void set_total_steps(long total) { total_steps_ = total; }
    const TrainConfig& config() const { return config_; }
    std::mt19937_64& rng() { return rng_; }

  private:
    Tensor batch_loss(Batch batch, MassDiagnostics* diag);
    void optimizer_step(double lr);

    TrainConfig config_;
    EncoderParams params_;
    ClassifierHead head_;
    std::vector<Tensor> parameters_;
    std::vector<std::vector<double>> opt_m_, opt_v_;
    GroupWeights group_weights_;
    std::size_t group_count_ = 0;
    std::mt19937_64 rng_;
    long step_ = 0;
    long total_steps_ = 0;
    bool force_identity_ = false;
};

struct FitResult {
    EncoderParams params;
    ClassifierHead head;
    std::vector<MetricsRecord> log;
    std::vector<EvalReport> eval_history;
    std::vector<double> epoch_seconds;
    bool diverged = false;
    std::string divergence_note;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

FitResult fit(const Dataset& train, const Dataset& eval, TrainConfig config,
              const MetricsSink& sink = {});

// Full-set evaluation. M = identity unless match_at_eval; then the set is
// matched in batches of `config.batch_size`.
EvalReport evaluate(const EncoderParams& params, const ClassifierHead& head,
                    const Dataset& data, const TrainConfig& config);

std::vector<int> predict(const EncoderParams& params, const ClassifierHead& head,
                         const Dataset& data, const TrainConfig& config);

const char* optimizer_kind_name(OptimizerKind kind);
OptimizerKind optimizer_kind_from_name(const std::string& name);
const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

}  // namespace mt
