#include "mt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "mt/errors.hpp"

namespace mt {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
        throw ConfigError("warmup_ratio must lie in [0,1)");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (groupdro_eta && *groupdro_eta < 0.0)
        throw ParameterError("groupdro eta must be >= 0");
    if (loss == LossKind::Mse) {
        if (mode == MatchMode::PositiveOnly || mode == MatchMode::NegativeOnly)
            throw ModeError("label masks require discrete labels");
        if (r3f_lambda > 0.0 && r3f_sigma > 0.0)
            throw ModeError("the noise-consistency penalty is classification-only");
        if (groupdro_eta) throw ModeError("GroupDRO requires discrete labels");
    }
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
    if (total_steps <= 0) return config.learning_rate;
    const long warmup_steps = static_cast<long>(
        std::floor(config.warmup_ratio * static_cast<double>(total_steps)));
    if (warmup_steps > 0 && step <= warmup_steps)
        return config.learning_rate * static_cast<double>(step) /
               static_cast<double>(warmup_steps);
    return config.learning_rate *
           static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
}

std::pair<double, GroupWeights> groupdro_update(
    const std::vector<double>& per_group_losses,
    const std::vector<std::size_t>& group_counts, const GroupWeights& q,
    double eta) {
    if (eta < 0.0) throw ParameterError("groupdro eta must be >= 0");
    if (per_group_losses.size() != q.q.size() ||
        group_counts.size() != q.q.size())
        throw DimensionError("groupdro_update: group count mismatch");
    GroupWeights next;
    next.q.resize(q.q.size());
    double z = 0.0;
    for (std::size_t g = 0; g < q.q.size(); ++g) {
        // Empty groups keep their weight before renormalization.
        next.q[g] = group_counts[g] == 0
                        ? q.q[g]
                        : q.q[g] * std::exp(eta * per_group_losses[g]);
        z += next.q[g];
    }
    double robust = 0.0;
    for (std::size_t g = 0; g < q.q.size(); ++g) {
        next.q[g] /= z;
        if (group_counts[g] > 0) robust += next.q[g] * per_group_losses[g];
    }
    return {robust, next};
}

Tensor r3f_penalty(const ClassifierHead& head, const Tensor& reps, double sigma,
                   double lambda, std::mt19937_64& rng, bool normal_noise) {
    if (sigma < 0.0 || lambda < 0.0)
        throw ParameterError("r3f: sigma and lambda must be >= 0");
    if (lambda == 0.0 || sigma == 0.0) return Tensor::scalar(0.0);
    std::vector<double> noise(reps.size());
    if (normal_noise) {
        std::normal_distribution<double> dist(0.0, sigma);
        for (auto& x : noise) x = dist(rng);
    } else {
        std::uniform_real_distribution<double> dist(-sigma, sigma);
        for (auto& x : noise) x = dist(rng);
    }
    Tensor perturbed = add(reps, Tensor::from(reps.shape(), std::move(noise)));
    Tensor p = row_softmax(head.logits(reps), 1.0);
    Tensor q = row_softmax(head.logits(perturbed), 1.0);
    Tensor lp = log(p), lq = log(q);
    Tensor kl_pq = sum(mul(p, sub(lp, lq)));
    Tensor kl_qp = sum(mul(q, sub(lq, lp)));
    const double per_row = lambda / static_cast<double>(reps.rows());
    return scale(add(kl_pq, kl_qp), per_row);
}

Trainer::Trainer(const TrainConfig& config, std::size_t out_dim)
    : config_(config),
      params_(init_encoder(config.encoder)),
      head_(init_head(config.encoder.rep_dim, out_dim,
                      config.seed ^ 0x5eedba5eULL, config.encoder.init_scale)),
      rng_(config.seed * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL),
      step_(0) {
    config_.validate();
    parameters_ = params_.tensors();
    parameters_.push_back(head_.weight);
    parameters_.push_back(head_.bias);
    opt_m_.resize(parameters_.size());
    opt_v_.resize(parameters_.size());
    for (std::size_t i = 0; i < parameters_.size(); ++i) {
        opt_m_[i].assign(parameters_[i].size(), 0.0);
        opt_v_[i].assign(parameters_[i].size(), 0.0);
    }
}

void Trainer::set_group_count(std::size_t count) {
    group_count_ = count;
    group_weights_.q.assign(count, count ? 1.0 / static_cast<double>(count) : 0.0);
}

Tensor Trainer::batch_loss(Batch batch, MassDiagnostics* diag) {
    std::vector<int> labels;
    std::vector<double> targets;
    labels.reserve(batch.size());
    targets.reserve(batch.size());
    for (const auto& inst : batch) {
        labels.push_back(inst.label_int());
        targets.push_back(inst.label);
    }

    Tensor reps = encode(params_, batch);
    Tensor composite = reps;
    *diag = MassDiagnostics{1.0, 0.0, 0.0, step_};
    const bool matching = config_.mode != MatchMode::Vanilla && !force_identity_;
    if (matching) {
        Tensor basis = config_.stop_grad_through_match ? reps.detach() : reps;
        MatchMatrix m = compute_match_matrix(basis, config_.temperature);
        if (config_.loss == LossKind::CrossEntropy) {
            *diag = mass_diagnostics(m, labels);
            diag->step = step_;
        } else {
            // Regression has no label structure; report self vs rest.
            double self = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i) self += m.values.at(i, i);
            diag->self_mass = self / static_cast<double>(m.size());
            diag->negative_mass = 1.0 - diag->self_mass;
        }
        MatchMatrix masked =
            apply_mask(m, labels, config_.mode, config_.renormalize_mask);
        composite = compose(masked, reps);
    }

    Tensor logits = head_.logits(composite);
    Tensor loss = Tensor::scalar(0.0);
    if (config_.loss == LossKind::Mse) {
        loss = loss_mse(logits, targets);
    } else if (config_.groupdro_eta && group_count_ > 0) {
        Tensor per_instance = loss_ce_vector(logits, labels);
        std::vector<double> group_loss(group_count_, 0.0);
        std::vector<std::size_t> group_n(group_count_, 0);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const int g = batch[i].group;
            if (g < 0 || static_cast<std::size_t>(g) >= group_count_)
                throw DataError("GroupDRO: instance group " + std::to_string(g) +
                                " outside the declared " +
                                std::to_string(group_count_) + " groups");
            group_loss[g] += per_instance.at(i);
            ++group_n[g];
        }
        for (std::size_t g = 0; g < group_count_; ++g)
            if (group_n[g]) group_loss[g] /= static_cast<double>(group_n[g]);
        auto [robust, next] =
            groupdro_update(group_loss, group_n, group_weights_,
                            *config_.groupdro_eta);
        (void)robust;
        group_weights_ = next;
        // Robust loss as a tensor: each instance weighted by q'_g / n_g.
        std::vector<double> w(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto g = static_cast<std::size_t>(batch[i].group);
            w[i] = group_weights_.q[g] / static_cast<double>(group_n[g]);
        }
        loss = weighted_sum(per_instance, w);
    } else {
        loss = loss_ce(logits, labels);
    }

    if (config_.r3f_lambda > 0.0 && config_.r3f_sigma > 0.0) {
        if (config_.loss == LossKind::Mse)
            throw ModeError("the noise-consistency penalty is classification-only");
        loss = add(loss, r3f_penalty(head_, composite, config_.r3f_sigma,
                                     config_.r3f_lambda, rng_,
                                     config_.r3f_normal_noise));
    }
    return loss;
}

void Trainer::optimizer_step(double lr) {
    // Global-norm gradient clip, applied identically in every mode.
    double norm2 = 0.0;
    for (const auto& p : parameters_)
        for (double g : p.grad()) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm
                            ? config_.clip_norm / norm
                            : 1.0;

    const auto t = static_cast<double>(step_);
    for (std::size_t i = 0; i < parameters_.size(); ++i) {
        auto& data = parameters_[i].data();
        const auto& grad = parameters_[i].grad();
        auto& m = opt_m_[i];
        auto& v = opt_v_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad[j] * clip;
            if (config_.optimizer == OptimizerKind::SgdMomentum) {
                m[j] = config_.momentum * m[j] + g;
                data[j] -= lr * m[j];
            } else {
                m[j] = config_.adam_beta1 * m[j] + (1.0 - config_.adam_beta1) * g;
                v[j] = config_.adam_beta2 * v[j] +
                       (1.0 - config_.adam_beta2) * g * g;
                const double mhat = m[j] / (1.0 - std::pow(config_.adam_beta1, t));
                const double vhat = v[j] / (1.0 - std::pow(config_.adam_beta2, t));
                data[j] -= lr * mhat / (std::sqrt(vhat) + config_.adam_eps);
            }
        }
    }
}

std::pair<double, MassDiagnostics> Trainer::train_step(Batch batch) {
    for (auto& p : parameters_) p.zero_grad();
    MassDiagnostics diag;
    Tensor loss = batch_loss(batch, &diag);
    const double value = loss.item();
    if (!std::isfinite(value))
        throw NumericError("numeric divergence at step " +
                           std::to_string(step_ + 1) + ": loss is non-finite");
    loss.backward();
    ++step_;
    diag.step = step_;
    optimizer_step(lr_at(step_, total_steps_, config_));
    return {value, diag};
}

std::vector<int> predict(const EncoderParams& params, const ClassifierHead& head,
                         const Dataset& data, const TrainConfig& config) {
    std::vector<int> preds;
    preds.reserve(data.size());
    const std::size_t chunk = config.eval_match ? config.batch_size : 256;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t n = std::min(chunk, data.size() - start);
        Batch batch(&data.items[start], n);
        Tensor reps = encode(params, batch);
        if (config.eval_match) {
            MatchMatrix m = compute_match_matrix(reps, config.temperature);
            reps = compose(m, reps);
        }
        Tensor logits = head.logits(reps);
        const std::size_t c = logits.cols();
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            preds.push_back(static_cast<int>(best));
        }
    }
    return preds;
}

namespace {

double dataset_loss(const EncoderParams& params, const ClassifierHead& head,
                    const Dataset& data, const TrainConfig& config) {
    double total = 0.0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t n = std::min(chunk, data.size() - start);
        Batch batch(&data.items[start], n);
        Tensor logits = head.logits(encode(params, batch));
        if (config.loss == LossKind::Mse) {
            std::vector<double> targets;
            for (const auto& inst : batch) targets.push_back(inst.label);
            total += loss_mse(logits, targets).item() * static_cast<double>(n);
        } else {
            std::vector<int> labels;
            for (const auto& inst : batch) labels.push_back(inst.label_int());
            total += loss_ce(logits, labels).item() * static_cast<double>(n);
        }
    }
    return total / static_cast<double>(data.size());
}

}  // namespace

EvalReport evaluate(const EncoderParams& params, const ClassifierHead& head,
                    const Dataset& data, const TrainConfig& config) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    EvalReport report;
    report.loss = dataset_loss(params, head, data, config);
    if (config.loss == LossKind::Mse) {
        std::vector<double> preds;
        std::vector<double> targets;
        const std::size_t chunk = 256;
        for (std::size_t start = 0; start < data.size(); start += chunk) {
            const std::size_t n = std::min(chunk, data.size() - start);
            Batch batch(&data.items[start], n);
            Tensor out = head.logits(encode(params, batch));
            for (std::size_t i = 0; i < n; ++i) {
                preds.push_back(out.at(i, 0));
                targets.push_back(batch[i].label);
            }
        }
        report.spearman = spearman(preds, targets);
        return report;
    }
    const std::vector<int> preds = predict(params, head, data, config);
    const std::vector<int> labels = data.labels_int();
    report.accuracy = accuracy(preds, labels);
    if (data.num_classes() == 2) {
        report.matthews = matthews(preds, labels);
        report.f1 = f1(preds, labels);
    }
    if (data.has_groups())
        report.groups = group_report(preds, labels, data.groups());
    return report;
}

FitResult fit(const Dataset& train, const Dataset& eval, TrainConfig config,
              const MetricsSink& sink) {
    config.validate();
    if (train.empty()) throw DataError("fit: empty training set");
    if (eval.empty()) throw DataError("fit: empty evaluation set");

    const std::size_t out_dim =
        config.loss == LossKind::Mse ? 1 : config.num_classes;
    Trainer trainer(config, out_dim);
    if (config.groupdro_eta) {
        if (!train.has_groups())
            throw DataError("GroupDRO requires group ids on every instance");
        int mx = 0;
        for (const auto& inst : train.items) mx = std::max(mx, inst.group);
        trainer.set_group_count(static_cast<std::size_t>(mx) + 1);
    }

    const std::size_t n = train.size();
    const auto steps_per_epoch = static_cast<long>((n + config.batch_size - 1) /
                                                   config.batch_size);
    trainer.set_total_steps(static_cast<long>(config.epochs) * steps_per_epoch);

    FitResult result;
    std::mt19937_64 shuffle_rng(config.seed * 0x2545f4914f6cdd1dULL + 1);
    std::vector<Instance> order(train.items);
    long step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const auto t0 = std::chrono::steady_clock::now();
        bool aborted = false;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bn = std::min(config.batch_size, n - start);
            Batch batch(&order[start], bn);
            MetricsRecord rec;
            try {
                auto [loss, diag] = trainer.train_step(batch);
                ++step;
                rec.step = step;
                rec.epoch = static_cast<long>(epoch);
                rec.loss = loss;
                rec.lr = lr_at(step, static_cast<long>(config.epochs) *
                                         steps_per_epoch, config);
                rec.self_mass = diag.self_mass;
                rec.positive_mass = diag.positive_mass;
                rec.negative_mass = diag.negative_mass;
            } catch (const NumericError& e) {
                result.diverged = true;
                result.divergence_note = e.what();
                aborted = true;
                break;
            }
            result.log.push_back(rec);
            if (sink) sink(rec);
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.epoch_seconds.push_back(
            std::chrono::duration<double>(t1 - t0).count());
        if (aborted) break;

        EvalReport report =
            evaluate(trainer.params(), trainer.head(), eval, config);
        result.eval_history.push_back(report);
        MetricsRecord eval_rec;
        eval_rec.step = step;
        eval_rec.epoch = static_cast<long>(epoch);
        eval_rec.loss = report.loss;
        eval_rec.lr = lr_at(step, static_cast<long>(config.epochs) *
                                      steps_per_epoch, config);
        eval_rec.eval_score = config.loss == LossKind::Mse
                                  ? report.spearman.value_or(0.0)
                                  : report.accuracy;
        if (!result.log.empty()) {
            eval_rec.self_mass = result.log.back().self_mass;
            eval_rec.positive_mass = result.log.back().positive_mass;
            eval_rec.negative_mass = result.log.back().negative_mass;
        }
        if (sink) sink(eval_rec);
    }
    result.params = trainer.params();
    result.head = trainer.head();
    return result;
}

SharpnessResult sharpness_probe(const EncoderParams& params,
                                const ClassifierHead& head, const Dataset& data,
                                const TrainConfig& config, double radius,
                                std::size_t k, std::uint64_t seed) {
    if (radius < 0.0) throw ParameterError("sharpness: radius must be >= 0");
    if (k < 1) throw ParameterError("sharpness: need k >= 1 directions");
    const double base = dataset_loss(params, head, data, config);

    std::vector<Tensor> all = params.tensors();
    all.push_back(head.weight);
    all.push_back(head.bias);
    std::size_t total = 0;
    for (const auto& t : all) total += t.size();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SharpnessResult result;
    result.max_increase = -std::numeric_limits<double>::infinity();
    for (std::size_t trial = 0; trial < k; ++trial) {
        std::vector<double> dir(total);
        double norm2 = 0.0;
        for (auto& x : dir) {
            x = normal(rng);
            norm2 += x * x;
        }
        const double inv = radius / std::sqrt(norm2);
        std::vector<std::vector<double>> saved;
        saved.reserve(all.size());
        std::size_t off = 0;
        for (auto& t : all) {
            saved.push_back(t.data());
            auto& d = const_cast<Tensor&>(t).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dir[off + i] * inv;
            off += d.size();
        }
        const double increase =
            dataset_loss(params, head, data, config) - base;
        for (std::size_t i = 0; i < all.size(); ++i)
            const_cast<Tensor&>(all[i]).data() = std::move(saved[i]);
        result.mean_increase += increase;
        result.max_increase = std::max(result.max_increase, increase);
    }
    result.mean_increase /= static_cast<double>(k);
    return result;
}

const char* optimizer_kind_name(OptimizerKind kind) {
    return kind == OptimizerKind::Adam ? "adam" : "sgd-momentum";
}

OptimizerKind optimizer_kind_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::SgdMomentum;
    throw ConfigError("unknown optimizer: " + name);
}

const char* loss_kind_name(LossKind kind) {
    return kind == LossKind::Mse ? "mse" : "ce";
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "ce" || name == "cross-entropy") return LossKind::CrossEntropy;
    if (name == "mse") return LossKind::Mse;
    throw ConfigError("unknown loss kind: " + name);
}

}  // namespace mt
