#include <cmath>
#include <random>

#include <doctest.h>

#include "mt/encoder.hpp"
#include "mt/errors.hpp"
#include "mt/metrics.hpp"

using namespace mt;

namespace {

// Brute-force reference implementations, kept independent of the library
// code paths they check.
namespace oracle {

double accuracy(const std::vector<int>& p, const std::vector<int>& y) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] == y[i]) ++hit;
    return double(hit) / double(p.size());
}

double f1(const std::vector<int>& p, const std::vector<int>& y) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        tp += p[i] == 1 && y[i] == 1;
        fp += p[i] == 1 && y[i] == 0;
        fn += p[i] == 0 && y[i] == 1;
    }
    const double denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2 * tp / denom;
}

double matthews(const std::vector<int>& p, const std::vector<int>& y) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        tp += p[i] == 1 && y[i] == 1;
        fp += p[i] == 1 && y[i] == 0;
        fn += p[i] == 0 && y[i] == 1;
        tn += p[i] == 0 && y[i] == 0;
    }
    const double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    return d == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(d);
}

// Spearman via explicit rank construction with tie averaging.
double spearman(std::vector<double> a, std::vector<double> b) {
    auto rank_of = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double x : v) {
                less += x < v[i];
                equal += x == v[i];
            }
            r[i] = less + (equal + 1.0) / 2.0;
        }
        return r;
    };
    auto ra = rank_of(a), rb = rank_of(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(ra.size());
    mb /= double(rb.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return (saa == 0 || sbb == 0) ? 0.0 : sab / std::sqrt(saa * sbb);
}

}  // namespace oracle

}  // namespace

TEST_CASE("perfect predictions score 1 everywhere") {
    std::vector<int> y{0, 1, 1, 0, 1};
    CHECK(accuracy(y, y) == 1.0);
    CHECK(f1(y, y) == 1.0);
    CHECK(matthews(y, y) == doctest::Approx(1.0));
}

TEST_CASE("constant predictor gets matthews 0 by the degenerate rule") {
    std::vector<int> p{1, 1, 1, 1};
    std::vector<int> y{0, 1, 0, 1};
    CHECK(matthews(p, y) == 0.0);
}

TEST_CASE("hand-computed confusion matrix") {
    // TP=3, FP=1, FN=2, TN=4.
    std::vector<int> p{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    std::vector<int> y{1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
    CHECK(matthews(p, y) == doctest::Approx(10.0 / std::sqrt(600.0)).epsilon(1e-12));
    CHECK(f1(p, y) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("matthews is symmetric under class swap") {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<int> bit(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> p(20), y(20), ps(20), ys(20);
        for (std::size_t i = 0; i < 20; ++i) {
            p[i] = bit(rng);
            y[i] = bit(rng);
            ps[i] = 1 - p[i];
            ys[i] = 1 - y[i];
        }
        CHECK(matthews(p, y) == doctest::Approx(matthews(ps, ys)).epsilon(1e-12));
    }
}

TEST_CASE("spearman on monotone orderings") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("spearman degeneracy flag on constant input") {
    bool degenerate = false;
    CHECK(spearman({1, 1, 1}, {1, 2, 3}, &degenerate) == 0.0);
    CHECK(degenerate);
}

TEST_CASE("metrics agree with brute force on random vectors") {
    std::mt19937_64 rng(43);
    std::uniform_int_distribution<int> bit(0, 1);
    std::uniform_real_distribution<double> real(-5, 5);
    std::uniform_int_distribution<int> coarse(0, 4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 5 + trial % 30;
        std::vector<int> p(n), y(n);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = bit(rng);
            y[i] = bit(rng);
            // coarse values force rank ties
            a[i] = coarse(rng);
            b[i] = real(rng);
        }
        CHECK(accuracy(p, y) == doctest::Approx(oracle::accuracy(p, y)).epsilon(1e-12));
        CHECK(f1(p, y) == doctest::Approx(oracle::f1(p, y)).epsilon(1e-12));
        CHECK(matthews(p, y) == doctest::Approx(oracle::matthews(p, y)).epsilon(1e-12));
        CHECK(spearman(a, b) == doctest::Approx(oracle::spearman(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("group report") {
    std::vector<int> p{0, 1, 0, 1};
    std::vector<int> y{0, 0, 0, 1};
    GroupReport single = group_report(p, y, {0, 0, 0, 0});
    CHECK(single.worst_group == doctest::Approx(0.75));

    GroupReport two = group_report({0, 0}, {0, 1}, {0, 1});
    CHECK(two.per_group[0] == 1.0);
    CHECK(two.per_group[1] == 0.0);
    CHECK(two.worst_group == 0.0);

    GroupReport sized = group_report({0, 0, 1, 1}, {0, 1, 0, 1}, {0, 0, 0, 1});
    CHECK(sized.per_group[0] == doctest::Approx(1.0 / 3.0));
    CHECK(sized.per_group[1] == 1.0);
    CHECK(sized.worst_group == doctest::Approx(1.0 / 3.0));
}

namespace {

struct AttackFixture {
    EncoderParams params;
    ClassifierHead head;
    std::vector<Instance> batch;

    AttackFixture() : head(init_head(3, 2, 77, 0.8)) {
        EncoderConfig c;
        c.kind = EncoderKind::Mlp;
        c.feature_dim = 4;
        c.hidden_dim = 6;
        c.rep_dim = 3;
        c.seed = 71;
        c.init_scale = 0.6;
        params = init_encoder(c);
        std::mt19937_64 rng(73);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int i = 0; i < 8; ++i) {
            Instance inst;
            inst.features = {normal(rng), normal(rng), normal(rng), normal(rng)};
            inst.label = i % 2;
            batch.push_back(inst);
        }
    }
};

}  // namespace

TEST_CASE("zero-epsilon attack leaves predictions untouched") {
    AttackFixture fx;
    AttackConfig cfg;
    cfg.kind = AttackKind::Fgsm;
    cfg.epsilon = 0.0;
    auto attacked = attack_batch(fx.params, fx.head, fx.batch, cfg);

    const Tensor clean = encode(fx.params, fx.batch).detach();
    CHECK(attacked.perturbed.data() == clean.data());  // bitwise
}

TEST_CASE("perturbations stay inside the declared ball") {
    AttackFixture fx;
    AttackConfig cfg;
    cfg.kind = AttackKind::Pgd;
    cfg.epsilon = 0.05;
    cfg.steps = 7;
    cfg.step_size = 0.02;  // deliberately overshooting; projection must hold
    auto attacked = attack_batch(fx.params, fx.head, fx.batch, cfg);
    const Tensor clean = encode(fx.params, fx.batch).detach();
    for (std::size_t i = 0; i < clean.size(); ++i)
        CHECK(std::abs(attacked.perturbed.at(i) - clean.at(i)) <=
              cfg.epsilon + 1e-12);
}

TEST_CASE("single-step pgd equals fgsm elementwise") {
    AttackFixture fx;
    AttackConfig fgsm;
    fgsm.kind = AttackKind::Fgsm;
    fgsm.epsilon = 0.1;
    AttackConfig pgd;
    pgd.kind = AttackKind::Pgd;
    pgd.epsilon = 0.1;
    pgd.steps = 1;
    pgd.step_size = 0.1;
    auto a = attack_batch(fx.params, fx.head, fx.batch, fgsm);
    auto b = attack_batch(fx.params, fx.head, fx.batch, pgd);
    CHECK(a.perturbed.data() == b.perturbed.data());
    CHECK(a.preds == b.preds);
}

TEST_CASE("pgd loss is non-decreasing across iterations") {
    AttackFixture fx;
    std::vector<int> labels;
    for (const auto& inst : fx.batch) labels.push_back(inst.label_int());
    AttackConfig cfg;
    cfg.kind = AttackKind::Pgd;
    cfg.epsilon = 0.2;
    const int total_steps = 10;
    cfg.step_size = cfg.epsilon / total_steps;
    double prev = -1e300;
    for (int s = 1; s <= total_steps; ++s) {
        cfg.steps = s;
        auto attacked = attack_batch(fx.params, fx.head, fx.batch, cfg);
        const double loss =
            loss_ce(fx.head.logits(attacked.perturbed), labels).item();
        CHECK(loss >= prev - 1e-9);
        prev = loss;
    }
}

TEST_CASE("negative epsilon is rejected") {
    AttackFixture fx;
    AttackConfig cfg;
    cfg.epsilon = -0.1;
    CHECK_THROWS_AS(attack_batch(fx.params, fx.head, fx.batch, cfg),
                    ParameterError);
}
