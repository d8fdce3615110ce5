#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bmh/dmm.hpp"
#include "bmh/hawkes.hpp"
#include "oracles.hpp"

using namespace bmh;

namespace {

std::vector<int> sample_borel_sizes(double alpha, int count, Rng& rng) {
    std::vector<int> sizes;
    sizes.reserve(count);
    const HawkesParams p{alpha, {1.0, 1.0}};
    for (int i = 0; i < count; ++i) {
        sizes.push_back(simulate_cascade(p, rng).cascade.size());
    }
    return sizes;
}

std::vector<Cascade> sample_cascades(const HawkesParams& p, int count, Rng& rng,
                                     int min_size = 1) {
    std::vector<Cascade> out;
    while (static_cast<int>(out.size()) < count) {
        Cascade c = simulate_cascade(p, rng).cascade;
        if (c.size() >= min_size) out.push_back(std::move(c));
    }
    return out;
}

} // namespace

TEST_CASE("fit_bmm boundary case: all sizes one", "[dmm][bmm]") {
    std::vector<int> sizes(50, 1);
    const BmmResult res = fit_bmm(sizes, 1, {});
    REQUIRE(res.mixture.components.size() == 1);
    CHECK(res.mixture.components[0].alpha < 1e-10);
    CHECK(res.report.boundary_fit);
}

TEST_CASE("fit_bmm K=1 reduces to the closed-form MLE", "[dmm][bmm]") {
    std::vector<int> sizes{2, 2, 2};
    const BmmResult res = fit_bmm(sizes, 1, {});
    CHECK(res.mixture.components[0].alpha == Catch::Approx(0.5).margin(1e-6));
    CHECK(res.mixture.components[0].weight == Catch::Approx(1.0));

    Rng rng(3);
    std::vector<int> sample = sample_borel_sizes(0.45, 2000, rng);
    const BmmResult res2 = fit_bmm(sample, 1, {});
    CHECK(res2.mixture.components[0].alpha == Catch::Approx(borel_mle(sample)).margin(1e-6));
}

TEST_CASE("fit_bmm recovers a two-component mixture", "[dmm][bmm][slow]") {
    Rng rng(11);
    std::vector<int> sizes;
    for (int i = 0; i < 12000; ++i) {
        const double alpha = rng.uniform() < 0.6 ? 0.2 : 0.7;
        sizes.push_back(simulate_cascade({alpha, {1.0, 1.0}}, rng).cascade.size());
    }
    EmConfig cfg;
    cfg.seed = 5;
    const BmmResult res = fit_bmm(sizes, 2, cfg);
    REQUIRE(res.mixture.components.size() == 2);
    CHECK(res.mixture.components[0].alpha == Catch::Approx(0.2).margin(0.02));
    CHECK(res.mixture.components[1].alpha == Catch::Approx(0.7).margin(0.02));
    CHECK(res.mixture.components[0].weight == Catch::Approx(0.6).margin(0.03));
    CHECK(res.report.monotone);
    // multi-start keeps the best run
    double best = -1e300;
    for (double ll : res.report.restart_lls) best = std::max(best, ll);
    CHECK(res.report.final_ll == Catch::Approx(best));
}

TEST_CASE("bmm M-step closed form matches numeric maximization", "[dmm][bmm]") {
    // weighted Borel likelihood: responsibilities fixed, compare the
    // closed-form alpha with a golden-section maximizer
    std::vector<int> sizes{1, 2, 3, 5, 8};
    std::vector<double> resp{0.9, 0.4, 0.7, 0.2, 0.6};
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        num += resp[i] * (sizes[i] - 1);
        den += resp[i] * sizes[i];
    }
    const double closed = num / den;
    const double numeric = oracles::golden_section_max(
        [&](double a) {
            double q = 0.0;
            for (std::size_t i = 0; i < sizes.size(); ++i) {
                q += resp[i] * borel_log_pmf(sizes[i], a);
            }
            return q;
        },
        1e-6, 1.0 - 1e-6);
    CHECK(closed == Catch::Approx(numeric).margin(1e-6));
}

TEST_CASE("fit_kmm K=1 recovers generator parameters", "[dmm][kmm][slow]") {
    Rng rng(23);
    const PowerLawKernel truth{0.8, 10.0};
    std::vector<Cascade> cascades = sample_cascades({0.5, truth}, 5000, rng);
    EmConfig cfg;
    cfg.restarts = 1;
    const KmmResult res = fit_kmm(cascades, 1, cfg);
    REQUIRE(res.mixture.components.size() == 1);
    CHECK(res.mixture.components[0].kernel.theta ==
          Catch::Approx(truth.theta).epsilon(0.10));
    CHECK(res.mixture.components[0].kernel.d == Catch::Approx(truth.d).epsilon(0.10));
    CHECK(res.report.monotone);
}

TEST_CASE("fit_kmm K=1 matches a direct grid maximization", "[dmm][kmm]") {
    Rng rng(9);
    std::vector<Cascade> cascades = sample_cascades({0.5, {1.0, 5.0}}, 200, rng, 2);
    EmConfig cfg;
    cfg.restarts = 1;
    const KmmResult res = fit_kmm(cascades, 1, cfg);
    // independent 2-d refinement around the fitted point must not improve
    const double fitted_ll = kernel_log_likelihood(cascades, res.mixture.components[0].kernel);
    double best_grid = -1e300;
    for (double lt = -1.0; lt <= 1.0; lt += 0.05) {
        for (double ld = 0.0; ld <= 3.5; ld += 0.05) {
            best_grid = std::max(
                best_grid, kernel_log_likelihood(cascades, {std::exp(lt), std::exp(ld)}));
        }
    }
    CHECK(fitted_ll >= best_grid - 1e-3);
}

TEST_CASE("fit_kmm single-cascade degenerate case is boundary-reported", "[dmm][kmm]") {
    std::vector<Cascade> one{Cascade{{0.0, 3.0}, {}, -1}};
    EmConfig cfg;
    cfg.restarts = 1;
    cfg.max_iterations = 60;
    const KmmResult res = fit_kmm(one, 1, cfg);
    // sup of log g(3) over (theta, d) is 1/(e*3), approached at the boundary
    const double sup = std::log(1.0 / (std::exp(1.0) * 3.0));
    CHECK(res.report.final_ll <= sup + 1e-9);
    CHECK(res.report.final_ll >= sup - 0.1);
    CHECK((res.report.boundary_fit || !res.report.converged));
}

TEST_CASE("fit_kmm rejects all-size-one input", "[dmm][kmm]") {
    std::vector<Cascade> ones(5, Cascade{{0.0}, {}, -1});
    CHECK_THROWS_AS(fit_kmm(ones, 1, {}), std::invalid_argument);
}

TEST_CASE("fit_kmm recovers a two-component mixture", "[dmm][kmm][slow]") {
    Rng rng(77);
    std::vector<Cascade> cascades;
    for (int i = 0; i < 4000; ++i) {
        const bool first = rng.uniform() < 0.5;
        const PowerLawKernel k = first ? PowerLawKernel{0.5, 1.0} : PowerLawKernel{2.0, 100.0};
        cascades.push_back(simulate_cascade({0.5, k}, rng).cascade);
    }
    EmConfig cfg;
    cfg.seed = 19;
    cfg.restarts = 3;
    const KmmResult res = fit_kmm(cascades, 2, cfg);
    REQUIRE(res.mixture.components.size() == 2);
    // canonical order: ascending half-life; (0.5,1) has half-life 3,
    // (2,100) has half-life ~41.4
    CHECK(res.mixture.components[0].kernel.theta == Catch::Approx(0.5).epsilon(0.15));
    CHECK(res.mixture.components[0].kernel.d == Catch::Approx(1.0).epsilon(0.15));
    CHECK(res.mixture.components[1].kernel.theta == Catch::Approx(2.0).epsilon(0.15));
    CHECK(res.mixture.components[1].kernel.d == Catch::Approx(100.0).epsilon(0.15));
    CHECK(res.mixture.components[0].weight == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("dmm_product forms the Cartesian product", "[dmm]") {
    BorelMixture b;
    b.components = {{0.2, 0.6}, {0.7, 0.4}};
    KernelMixture k;
    k.components = {{{1.0, 1.0}, 0.5}, {{1.0, 10.0}, 0.3}, {{1.0, 100.0}, 0.2}};
    const DmmModel m = dmm_product(b, k);
    REQUIRE(m.product_weights.size() == 2);
    REQUIRE(m.product_weights[0].size() == 3);
    double total = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(m.product_weights[i][j] ==
                  Catch::Approx(b.components[i].weight * k.components[j].weight));
            row += m.product_weights[i][j];
            total += m.product_weights[i][j];
        }
        CHECK(row == Catch::Approx(b.components[i].weight));
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-12));

    BorelMixture single_b;
    single_b.components = {{0.5, 1.0}};
    KernelMixture single_k;
    single_k.components = {{{1.0, 2.0}, 1.0}};
    const DmmModel m1 = dmm_product(single_b, single_k);
    CHECK(m1.product_weights[0][0] == Catch::Approx(1.0));
}

TEST_CASE("dmm_holdout_nll collapses for degenerate mixtures", "[dmm]") {
    Rng rng(5);
    std::vector<Cascade> cascades = sample_cascades({0.5, {1.0, 5.0}}, 50, rng, 2);

    BorelMixture b;
    b.components = {{0.5, 1.0}};
    KernelMixture single;
    single.components = {{{1.0, 5.0}, 1.0}};
    const DmmModel m_single = dmm_product(b, single);

    double events = 0.0;
    for (const Cascade& c : cascades) events += c.size() - 1;
    const double expected = -kernel_log_likelihood(cascades, {1.0, 5.0}) / events;
    CHECK(dmm_holdout_nll(m_single, cascades) == Catch::Approx(expected).epsilon(1e-12));

    // two identical components with weights (0.5, 0.5) give the same value
    KernelMixture dup;
    dup.components = {{{1.0, 5.0}, 0.5}, {{1.0, 5.0}, 0.5}};
    const DmmModel m_dup = dmm_product(b, dup);
    CHECK(dmm_holdout_nll(m_dup, cascades) ==
          Catch::Approx(dmm_holdout_nll(m_single, cascades)).epsilon(1e-12));
}

TEST_CASE("dmm_holdout_nll prefers the generating model", "[dmm][slow]") {
    Rng rng(13);
    const PowerLawKernel truth{0.8, 10.0};
    BorelMixture b;
    b.components = {{0.5, 1.0}};
    KernelMixture true_mix;
    true_mix.components = {{truth, 1.0}};
    KernelMixture wrong_mix;
    wrong_mix.components = {{{2.5, 0.5}, 1.0}};
    const DmmModel m_true = dmm_product(b, true_mix);
    const DmmModel m_wrong = dmm_product(b, wrong_mix);

    int wins = 0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        std::vector<Cascade> test = sample_cascades({0.5, truth}, 30, rng, 2);
        if (dmm_holdout_nll(m_true, test) < dmm_holdout_nll(m_wrong, test)) ++wins;
    }
    CHECK(wins >= 95);
}

TEST_CASE("dmm model serializes to versioned json and back", "[dmm]") {
    BorelMixture b;
    b.components = {{0.25, 0.7}, {0.65, 0.3}};
    KernelMixture k;
    k.components = {{{0.9, 3.0}, 0.4}, {{1.4, 50.0}, 0.6}};
    const DmmModel m = dmm_product(b, k);
    const nlohmann::json j = m;
    CHECK(j.at("schema") == "bmh.model.dmm");
    CHECK(j.at("version") == 1);
    const DmmModel back = j.get<DmmModel>();
    CHECK(back.borel.components[1].alpha == Catch::Approx(0.65));
    CHECK(back.kernel.components[0].kernel.d == Catch::Approx(3.0));
    CHECK(back.product_weights[1][0] == Catch::Approx(m.product_weights[1][0]));
}
