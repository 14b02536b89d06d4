#include <doctest.h>

#include <cmath>
#include <numeric>

#include "phylokit/coalescent.hpp"
#include "phylokit/stats.hpp"

using namespace phylokit;

namespace {

// 1 - exp(-integral_0^t 1/Ne), accumulated cell by cell
double t2_cdf(const std::vector<double>& values, double end, double t) {
    const double w = end / static_cast<double>(values.size());
    double h = 0.0;
    for (std::size_t c = 0; c < values.size(); ++c) {
        const double lo = w * static_cast<double>(c);
        const double hi = c + 1 == values.size() ? INFINITY : lo + w;
        if (t <= lo) break;
        h += (std::min(t, hi) - lo) / values[c];
    }
    return 1.0 - std::exp(-h);
}

CoalescentSummary isochronous(int n, std::vector<double> coal) {
    std::vector<double> y(static_cast<std::size_t>(n), 0.0);
    return CoalescentSummary::from_times(y, coal);
}

}  // namespace

TEST_SUITE("coalescent") {

TEST_CASE("log-likelihood hand values") {
    CHECK(coalescent_loglik(isochronous(2, {1.0}), GridFunction::constant(1.0, 1, 1.0)) ==
          doctest::Approx(-1.0).epsilon(1e-12));
    // genealogy density: -(3 + 1)/2 - 2 log 2; the times density adds log 3 + log 1
    const auto three = isochronous(3, {1.0, 2.0});
    CHECK(coalescent_loglik(three, GridFunction::constant(2.0, 4, 2.0)) ==
          doctest::Approx(-2.0 - 2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(coalescent_times_loglik(three, GridFunction::constant(2.0, 4, 2.0)) ==
          doctest::Approx(std::log(0.75) - 2.0).epsilon(1e-12));
    CHECK(std::log(0.75) - 2.0 == doctest::Approx(-2.287682).epsilon(1e-6));
    const double expect = -std::log(2.0) - 0.5 - 0.25;
    CHECK(coalescent_loglik(isochronous(2, {1.0}), GridFunction(1.0, {1.0, 2.0})) ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(-1.443147).epsilon(1e-6));
}

TEST_CASE("piecewise case against midpoint quadrature") {
    GridFunction ne(1.0, {1.0, 2.0});
    const int steps = 200000;
    double integral = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / steps;
        integral += 1.0 / ne(t) / steps;
    }
    const double quad = -integral - std::log(ne(1.0));
    CHECK(coalescent_loglik(isochronous(2, {1.0}), ne) == doctest::Approx(quad).epsilon(1e-9));
}

TEST_CASE("fast per-cell route matches the direct route") {
    Rng rng(3);
    std::vector<SamplingEvent> samples{{0.0, 20}, {0.3, 10}, {0.9, 15}};
    auto tree = simulate_coalescent(samples, GridFunction(2.0, {1.0, 0.5, 2.0, 1.5}), rng);
    auto s = summarize(tree);
    std::vector<double> log_ne{0.1, -0.3, 0.7, 0.2, -0.5, 0.0, 1.0, 0.3};
    std::vector<double> ne(log_ne.size());
    std::transform(log_ne.begin(), log_ne.end(), ne.begin(), [](double x) { return std::exp(x); });
    const double end = s.root_time() * 0.9;
    auto stats = grid_statistics(s, end, log_ne.size());
    CHECK(coalescent_loglik(stats, log_ne) ==
          doctest::Approx(coalescent_loglik(s, GridFunction(end, ne))).epsilon(1e-12));
}

TEST_CASE("invalid summaries are rejected") {
    std::vector<double> y{0.0};
    std::vector<double> t{0.5};
    auto s = CoalescentSummary::from_times(y, t);
    CHECK_FALSE(s.well_formed());
    CHECK_THROWS_AS(coalescent_loglik(s, GridFunction::constant(1.0, 1, 1.0)), Error);
    CHECK_THROWS_AS(GridFunction(1.0, {1.0, 0.0}), Error);
}

TEST_CASE("time-unit scaling property") {
    Rng rng(11);
    std::vector<SamplingEvent> samples{{0.0, 12}, {0.4, 8}};
    auto tree = simulate_coalescent(samples, GridFunction(1.5, {1.0, 3.0, 0.7}), rng);
    auto s = summarize(tree);
    const int n = s.sample_count();
    GridFunction ne(1.5, {1.0, 3.0, 0.7});
    const double base = coalescent_loglik(s, ne);
    for (double c : {0.1, 2.5, 40.0}) {
        std::vector<CoalescentEvent> ev = s.events();
        for (auto& e : ev) e.time *= c;
        auto scaled = CoalescentSummary::from_events(ev);
        GridFunction ne_c(1.5 * c, {c * 1.0, c * 3.0, c * 0.7});
        CHECK(coalescent_loglik(scaled, ne_c) == doctest::Approx(base - (n - 1) * std::log(c)).epsilon(1e-10));
    }
}

TEST_CASE("refining a constant grid leaves the likelihood unchanged") {
    Rng rng(5);
    std::vector<SamplingEvent> samples{{0.0, 10}, {0.7, 5}};
    auto s = summarize(simulate_coalescent(samples, GridFunction::constant(1.0, 1, 2.0), rng));
    const double coarse = coalescent_loglik(s, GridFunction::constant(s.root_time(), 1, 2.0));
    for (std::size_t b : {2u, 7u, 50u, 333u})
        CHECK(std::abs(coalescent_loglik(s, GridFunction::constant(s.root_time(), b, 2.0)) - coarse) < 1e-12);
}

TEST_CASE("simulated pairwise coalescence time has mean Ne") {
    Rng rng(21);
    const double c = 2.5;
    std::vector<SamplingEvent> samples{{0.0, 2}};
    const int reps = 10000;
    std::vector<double> t2;
    for (int r = 0; r < reps; ++r)
        t2.push_back(simulate_coalescent(samples, GridFunction::constant(1.0, 1, c), rng).root_time());
    const double m = stats::mean(t2);
    const double se = std::sqrt(stats::variance(t2) / reps);
    CHECK(std::abs(m - c) < 3 * se);
}

TEST_CASE("ten-sample TMRCA mean") {
    Rng rng(22);
    std::vector<SamplingEvent> samples{{0.0, 10}};
    const int reps = 10000;
    std::vector<double> tm;
    for (int r = 0; r < reps; ++r) {
        auto p = simulate_coalescent(samples, GridFunction::constant(1.0, 1, 1.0), rng);
        if (r < 50) CHECK(validate(p).empty());
        tm.push_back(p.root_time());
    }
    const double se = std::sqrt(stats::variance(tm) / reps);
    CHECK(std::abs(stats::mean(tm) - 1.8) < 3 * se);
}

TEST_CASE("heterochronous simulation keeps sampling times") {
    Rng rng(23);
    std::vector<SamplingEvent> samples{{0.5, 3}, {1.25, 2}, {2.0, 4}};
    auto p = simulate_coalescent(samples, GridFunction::constant(1.0, 1, 1.0), rng);
    CHECK(p.axis_offset() == 0.5);
    auto y = p.sampling_times();
    std::sort(y.begin(), y.end());
    CHECK(y.front() == 0.0);
    CHECK(y.back() == doctest::Approx(1.5));
    CHECK(validate(p).empty());
}

TEST_CASE("pairwise time distribution under an exponential-shaped grid") {
    std::vector<double> values;
    for (int c = 0; c < 10; ++c) values.push_back(std::exp(-0.3 * c) * 2.0);
    const double end = 3.0;
    GridFunction ne(end, values);
    Rng rng(99);
    std::vector<SamplingEvent> samples{{0.0, 2}};
    std::vector<double> t2;
    for (int r = 0; r < 10000; ++r) t2.push_back(simulate_coalescent(samples, ne, rng).root_time());
    const double p = stats::ks_test(t2, [&](double t) { return t2_cdf(values, end, t); });
    CHECK(p > 0.01);
}

TEST_CASE("pairwise TMRCA expectation") {
    CHECK(pairwise_tmrca_expectation(GridFunction::constant(1.0, 3, 3.0)) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(pairwise_tmrca_expectation(GridFunction(2.0, {1.0, 2.0})) ==
          doctest::Approx(1.0 + std::exp(-1.0)).epsilon(1e-6));
    CHECK(pairwise_tmrca_expectation(GridFunction(2.0, {1.0, 10.0})) >
          pairwise_tmrca_expectation(GridFunction(2.0, {1.0, 1.0})));
}

}  // TEST_SUITE
