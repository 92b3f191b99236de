#include <cmath>
#include <random>

#include <doctest.h>

#include "mt/encoder.hpp"
#include "mt/errors.hpp"
#include "mt/match.hpp"
#include "mt/metrics.hpp"

using namespace mt;

namespace {

Tensor random_reps(std::size_t n, std::size_t d, std::mt19937_64& rng,
                   double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    std::vector<double> v(n * d);
    for (auto& x : v) x = normal(rng);
    return Tensor::from({n, d}, std::move(v));
}

}  // namespace

TEST_CASE("single-instance batch gives [[1]]") {
    MatchMatrix m = compute_match_matrix(Tensor::from({1, 3}, {2, -1, 0.5}), 1.0);
    CHECK(m.values.at(0, 0) == 1.0);
}

TEST_CASE("identical rows give uniform matrix") {
    Tensor h = Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2});
    MatchMatrix m = compute_match_matrix(h, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(m.values.at(i, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("orthonormal pair gives the e/(e+1) matrix") {
    Tensor h = Tensor::from({2, 2}, {1, 0, 0, 1});
    MatchMatrix m = compute_match_matrix(h, 1.0);
    CHECK(m.values.at(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(m.values.at(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(m.values.at(1, 0) == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(m.values.at(1, 1) == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("non-finite representations are rejected") {
    Tensor h = Tensor::from({1, 2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(compute_match_matrix(h, 1.0), NumericError);
}

TEST_CASE("positive mask with all labels equal leaves M unchanged") {
    std::mt19937_64 rng(5);
    MatchMatrix m = compute_match_matrix(random_reps(4, 3, rng), 1.0);
    MatchMatrix masked = apply_mask(m, {1, 1, 1, 1}, MatchMode::PositiveOnly);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(masked.values.at(i) == doctest::Approx(m.values.at(i)).epsilon(1e-12));
}

TEST_CASE("positive mask with distinct labels renormalizes to identity") {
    std::mt19937_64 rng(6);
    MatchMatrix m = compute_match_matrix(random_reps(4, 3, rng), 1.0);
    MatchMatrix masked = apply_mask(m, {0, 1, 2, 3}, MatchMode::PositiveOnly, true);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(masked.values.at(i, j) ==
                  doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("negative mask on a uniform matrix, renormalized") {
    // Uniform M over n=4, labels [0,0,1,1]: self plus the two different-label
    // columns survive with 1/3 each; the same-label peer gets 0.
    Tensor h = Tensor::zeros({4, 2});
    MatchMatrix m = compute_match_matrix(h, 1.0);
    MatchMatrix masked =
        apply_mask(m, {0, 0, 1, 1}, MatchMode::NegativeOnly, true);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const bool same_peer = (i / 2 == j / 2) && i != j;
            const double expected = same_peer ? 0.0 : 1.0 / 3.0;
            CHECK(masked.values.at(i, j) ==
                  doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("compose with identity and uniform matrices") {
    Tensor h = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor z_id = compose(identity_match(2), h);
    for (std::size_t i = 0; i < 4; ++i) CHECK(z_id.at(i) == h.at(i));

    MatchMatrix uniform{Tensor::full({2, 2}, 0.5), 1.0};
    Tensor z_u = compose(uniform, h);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(z_u.at(i) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("compose matches the 2x2 derived example") {
    Tensor h = Tensor::from({2, 2}, {1, 0, 0, 1});
    MatchMatrix m = compute_match_matrix(h, 1.0);
    Tensor z = compose(m, h);
    CHECK(z.at(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(z.at(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("mass diagnostics cases") {
    MassDiagnostics id = mass_diagnostics(identity_match(3), {0, 1, 0});
    CHECK(id.self_mass == doctest::Approx(1.0));
    CHECK(id.positive_mass == doctest::Approx(0.0));
    CHECK(id.negative_mass == doctest::Approx(0.0));

    MatchMatrix uniform{Tensor::full({4, 4}, 0.25), 1.0};
    MassDiagnostics u = mass_diagnostics(uniform, {0, 0, 1, 1});
    CHECK(u.self_mass == doctest::Approx(0.25));
    CHECK(u.positive_mass == doctest::Approx(0.25));
    CHECK(u.negative_mass == doctest::Approx(0.5));

    MatchMatrix m = compute_match_matrix(Tensor::from({2, 2}, {1, 0, 0, 1}), 1.0);
    MassDiagnostics d = mass_diagnostics(m, {0, 1});
    CHECK(d.self_mass == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(d.positive_mass == doctest::Approx(0.0));
    CHECK(d.negative_mass == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("pre-softmax similarities are symmetric, M need not be") {
    std::mt19937_64 rng(8);
    Tensor h = random_reps(5, 4, rng);
    Tensor sims = matmul(h, transpose(h));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(sims.at(i, j) == doctest::Approx(sims.at(j, i)).epsilon(1e-12));
}

TEST_CASE("permutation equivariance of matching and composition") {
    std::mt19937_64 rng(9);
    Tensor h = random_reps(5, 3, rng);
    const std::vector<std::size_t> perm{2, 0, 4, 3, 1};
    Tensor ph = gather_rows(h, perm);

    MatchMatrix m = compute_match_matrix(h, 1.5);
    MatchMatrix pm = compute_match_matrix(ph, 1.5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(pm.values.at(i, j) ==
                  doctest::Approx(m.values.at(perm[i], perm[j])).epsilon(1e-12));

    Tensor z = compose(m, h);
    Tensor pz = compose(pm, ph);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(pz.at(i, j) == doctest::Approx(z.at(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("temperature limits") {
    std::mt19937_64 rng(10);
    Tensor h = random_reps(4, 3, rng);
    MatchMatrix hot = compute_match_matrix(h, 1e8);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(hot.values.at(i) == doctest::Approx(0.25).epsilon(1e-6));

    MatchMatrix cold = compute_match_matrix(h, 1e-3);
    Tensor sims = matmul(h, transpose(h));
    for (std::size_t i = 0; i < 4; ++i) {
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < 4; ++j)
            if (sims.at(i, j) > sims.at(i, argmax)) argmax = j;
        CHECK(cold.values.at(i, argmax) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("masses sum to one across random batches") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> lab(0, 2);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor h = random_reps(6, 4, rng, 1.5);
        MatchMatrix m = compute_match_matrix(h, 0.7);
        std::vector<int> labels(6);
        for (auto& l : labels) l = lab(rng);
        MassDiagnostics d = mass_diagnostics(m, labels);
        CHECK(std::abs(d.self_mass + d.positive_mass + d.negative_mass - 1.0) <
              1e-9);
    }
}

TEST_CASE("gradients flow through encode, match, and compose") {
    EncoderConfig c;
    c.kind = EncoderKind::Mlp;
    c.feature_dim = 3;
    c.hidden_dim = 4;
    c.rep_dim = 3;
    c.seed = 31;
    c.init_scale = 0.5;
    auto params = init_encoder(c);
    std::vector<Instance> batch;
    std::mt19937_64 rng(32);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 4; ++i) {
        Instance inst;
        inst.features = {normal(rng), normal(rng), normal(rng)};
        inst.label = i % 2;
        batch.push_back(inst);
    }
    auto f = [&] {
        Tensor h = encode(params, batch);
        MatchMatrix m = compute_match_matrix(h, 2.0);
        Tensor z = compose(m, h);
        return loss_ce(matmul(z, transpose(z)), {0, 1, 2, 3});
    };
    CHECK(finite_diff_check(f, params.tensors(), 1e-5) < 1e-4);
}

TEST_CASE("continuous labels are rejected by masking via mode contract") {
    std::mt19937_64 rng(33);
    MatchMatrix m = compute_match_matrix(random_reps(3, 2, rng), 1.0);
    CHECK_THROWS_AS(apply_mask(m, {0, 1}, MatchMode::PositiveOnly),
                    DimensionError);
}
