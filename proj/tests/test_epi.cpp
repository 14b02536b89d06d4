#include <doctest.h>

#include <cmath>

#include "phylokit/epi.hpp"
#include "phylokit/stats.hpp"

using namespace phylokit;

namespace {

double pairs(int a) { return 0.5 * a * (a - 1.0); }

}  // namespace

TEST_SUITE("epi") {

TEST_CASE("no transmission: pure exponential decay") {
    auto tr = solve_sir({0.0, 0.0}, 0.7, {500.0, 40.0, 0.0}, 5.0);
    for (std::size_t k = 0; k < tr.time.size(); k += 97) {
        CHECK(tr.S[k] == doctest::Approx(500.0).epsilon(1e-10));
        CHECK(tr.I[k] == doctest::Approx(40.0 * std::exp(-0.7 * tr.time[k])).epsilon(1e-8));
    }
}

TEST_CASE("early growth follows the linearised rate") {
    const double beta = 1e-6, s0 = 1e6, horizon = 3.0;
    auto tr = solve_sir({beta, 0.0}, 0.0, {s0, 1.0, 0.0}, horizon);
    const std::size_t k = tr.time.size() / 10;
    const double slope = (std::log(tr.I[k]) - std::log(tr.I[0])) / tr.time[k];
    CHECK(slope == doctest::Approx(beta * s0).epsilon(0.05));
}

TEST_CASE("conservation and step control") {
    auto tr = solve_sir({0.003, -0.0001}, 0.8, {990.0, 10.0, 0.0}, 20.0);
    CHECK(tr.conservation_error < 1e-8);
    for (std::size_t k = 0; k < tr.time.size(); ++k) {
        CHECK(tr.S[k] >= 0);
        CHECK(tr.I[k] >= 0);
        CHECK(tr.incidence(k) >= 0);
    }
    CHECK(tr.beta(1e6) == 1e-12);  // the line is floored
    CHECK_THROWS_AS(solve_sir({0.5, 0.0}, 0.1, {990.0, 10.0, 0.0}, 20.0, 2.0), Error);
    CHECK_THROWS_AS(solve_sir({0.5, 0.0}, 0.1, {990.0, 0.0, 0.0}, 20.0), Error);
}

TEST_CASE("Ne spot values") {
    CHECK(effective_size(100.0, 50.0) == 100.0);
    CHECK(effective_size(10.0, 0.1 * 5.0 * 10.0) == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("a plateau gives a flat Ne grid") {
    // beta S = gamma keeps I level; S is so large it barely moves
    const double s0 = 1e12, gamma = 1.0;
    auto tr = solve_sir({gamma / s0, 0.0}, gamma, {s0, 100.0, 0.0}, 10.0, 0.05);
    auto ne = ne_from_sir(tr, 10.0);
    CHECK(ne.size() == 200);
    for (double v : ne.values()) CHECK(v == doctest::Approx(50.0).epsilon(1e-6));
}

TEST_CASE("backward grid anchoring") {
    auto tr = solve_sir({0.002, 0.0}, 1.0, {1000.0, 2.0, 0.0}, 8.0, 0.01);
    auto ne = ne_from_sir(tr, 6.0);
    CHECK(ne.size() == 600);
    CHECK(ne.end() == doctest::Approx(6.0));
    // first cell sits just before the most recent sample, last cell at the origin
    CHECK(ne.values()[0] == doctest::Approx(sir_ne_at(tr, 6.0 - 0.005)).epsilon(1e-12));
    CHECK(ne.values()[599] == doctest::Approx(sir_ne_at(tr, 0.005)).epsilon(1e-12));
    auto flat = solve_sir({0.002, 0.0}, 1.0, {0.0, 2.0, 0.0}, 8.0, 0.01);  // no susceptibles, f = 0
    CHECK_THROWS_AS(ne_from_sir(flat, 6.0), Error);
}

TEST_CASE("coalescent rate matches the Ne mapping on the whole grid") {
    auto tr = solve_sir({0.003, -0.0002}, 1.0, {1000.0, 30.0, 0.0}, 10.0, 0.01);
    const double offset = 9.0;
    auto ne = ne_from_sir(tr, offset);
    double worst = 0;
    for (std::size_t c = 0; c < ne.size(); ++c) {
        const double back = (static_cast<double>(c) + 0.5) * tr.dt;
        for (int a : {2, 3, 7}) {
            if (a > tr.state(offset - back).i) continue;
            const double rate = coalescent_rate_epi(a, tr, offset - back);
            worst = std::max(worst, std::abs(rate * ne.values()[c] / pairs(a) - 1.0));
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("coalescent rate forms") {
    auto tr = solve_sir({0.01, 0.0}, 0.5, {100.0, 20.0, 0.0}, 1.0);
    const double f0 = tr.incidence(0);
    CHECK(coalescent_rate_epi(20, tr, 0.0, EpiRateForm::Exact) == doctest::Approx(f0).epsilon(1e-14));
    CHECK(coalescent_rate_epi(2, tr, 0.0) == doctest::Approx(2 * f0 / 400.0).epsilon(1e-14));
    CHECK_THROWS_AS(coalescent_rate_epi(21, tr, 0.0), Error);

    // equal incidence 10, infected 10 vs 20
    auto a = solve_sir({0.01, 0.0}, 0.5, {100.0, 10.0, 0.0}, 1.0);
    auto b = solve_sir({0.005, 0.0}, 0.5, {100.0, 20.0, 0.0}, 1.0);
    CHECK(a.incidence(0) == doctest::Approx(b.incidence(0)));
    CHECK(coalescent_rate_epi(2, b, 0.0) == doctest::Approx(coalescent_rate_epi(2, a, 0.0) / 4).epsilon(1e-14));
    // the approximate rate at A = 2, f = 50, I = 100 is 1 / Ne with Ne = 100
    CHECK(pairs(2) * 2.0 * 50.0 / (100.0 * 100.0) == doctest::Approx(1.0 / effective_size(100.0, 50.0)));
}

TEST_CASE("identifiability guard") {
    auto s = summarize(parse_newick("((A:1,B:1):1,C:2);"));
    SirFitConfig cfg;
    cfg.origin_offset = 5.0;
    CHECK_THROWS_AS(fit_sir(s, cfg), Error);
    cfg.gamma = 1.0;
    cfg.origin_offset = 1.5;
    CHECK_THROWS_AS(fit_sir(s, cfg), Error);  // root older than the origin
}

TEST_CASE("prior-only run returns the priors") {
    auto s = summarize(parse_newick("((A:1,B:1):1,C:2);"));
    SirFitConfig cfg;
    cfg.gamma = 1.0;
    cfg.s0 = 1000.0;
    cfg.origin_offset = 5.0;
    cfg.dt = 0.05;
    cfg.use_likelihood = false;
    cfg.priors.intercept = LogNormalPrior{std::log(0.002), 0.5};
    cfg.priors.slope_sd = 1e-4;
    cfg.mcmc = McmcConfig{60000, 10000, 5, 1, 3, 1};
    auto fit = fit_sir(s, cfg);
    auto check_normal = [](std::vector<double> draws, double mean, double sd) {
        const double ess = effective_sample_size({draws});
        CHECK(std::abs(stats::mean(draws) - mean) < 3.5 * sd / std::sqrt(ess));
        CHECK(std::sqrt(stats::variance(draws)) == doctest::Approx(sd).epsilon(0.08));
    };
    auto b0 = fit.trace.coordinate(*fit.trace.column_index("beta_intercept"));
    for (double& v : b0) v = std::log(v);
    check_normal(b0, std::log(0.002), 0.5);
    check_normal(fit.trace.coordinate(*fit.trace.column_index("beta_slope")), 0.0, 1e-4);
    auto i0 = fit.trace.coordinate(*fit.trace.column_index("i0"));
    for (double& v : i0) v = std::log(v);
    check_normal(i0, 0.0, 2.0);
}

TEST_CASE("constant transmission rate is recovered") {
    const double gamma = 1.0, s0 = 1000.0, beta = 0.0025, offset = 3.5;
    auto tr = solve_sir({beta, 0.0}, gamma, {s0, 1.0, 0.0}, offset, 0.01);
    auto ne = ne_from_sir(tr, offset);
    Rng rng(5);
    std::vector<SamplingEvent> samples{{0.0, 80}, {0.5, 40}};
    // condition on the genealogy rooting inside the epidemic
    auto s = summarize(simulate_coalescent(samples, ne, rng));
    while (s.root_time() >= offset) s = summarize(simulate_coalescent(samples, ne, rng));
    SirFitConfig cfg;
    cfg.gamma = gamma;
    cfg.s0 = s0;
    cfg.origin_offset = offset;
    cfg.dt = 0.02;
    cfg.fit_slope = false;
    cfg.mcmc = McmcConfig{12000, 4000, 4, 1, 7, 1};
    auto fit = fit_sir(s, cfg);
    auto b = fit.trace.coordinate(*fit.trace.column_index("beta_intercept"));
    CHECK(stats::mean(b) == doctest::Approx(beta).epsilon(0.3));
    CHECK(fit.ne.median.size() == 175);
}

}  // TEST_SUITE
