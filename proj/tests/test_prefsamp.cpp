#include <doctest.h>

#include <cmath>

#include "phylokit/prefsamp.hpp"
#include "phylokit/skyline.hpp"
#include "phylokit/stats.hpp"

using namespace phylokit;

namespace {

std::vector<SamplingEvent> uniform_samples(std::size_t n, double spread, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, spread);
    std::vector<SamplingEvent> s{{0.0, 1}};
    for (std::size_t i = 1; i < n; ++i) s.push_back({u(rng), 1});
    return s;
}

}  // namespace

TEST_SUITE("prefsamp") {

TEST_CASE("iPP log-likelihood values") {
    std::vector<SamplingEvent> seven{{0.5, 3}, {1.0, 2}, {4.0, 2}};
    CHECK(ipp_loglik(seven, {5.0}, GridFunction::constant(5.0, 3, 2.0)) ==
          doctest::Approx(7 * std::log(2.0) - 10).epsilon(1e-12));
    CHECK(7 * std::log(2.0) - 10 == doctest::Approx(-5.147970).epsilon(1e-6));
    CHECK(ipp_loglik(std::vector<SamplingEvent>{}, {1.0}, GridFunction::constant(1.0, 1, 3.0)) ==
          doctest::Approx(-3.0).epsilon(1e-12));
    std::vector<SamplingEvent> two{{0.5, 1}, {1.5, 1}};
    CHECK(ipp_loglik(two, {2.0}, GridFunction(2.0, {1.0, 3.0})) ==
          doctest::Approx(std::log(3.0) - 4.0).epsilon(1e-12));
    CHECK(std::log(3.0) - 4.0 == doctest::Approx(-2.901388).epsilon(1e-6));
    CHECK_THROWS_AS(ipp_loglik(two, {1.0}, GridFunction(2.0, {1.0, 3.0})), Error);
}

TEST_CASE("piecewise iPP against a midpoint quadrature") {
    GridFunction rate(2.0, {1.0, 3.0});
    const int steps = 100000;
    double integral = 0;
    for (int k = 0; k < steps; ++k) integral += rate((k + 0.5) * 2.0 / steps) * 2.0 / steps;
    CHECK(integral == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("iPP log-likelihood is additive over a window partition") {
    GridFunction rate(3.0, {0.5, 2.0, 1.5, 4.0, 0.8, 1.1});
    std::vector<SamplingEvent> s{{0.1, 1}, {0.7, 2}, {1.3, 1}, {2.2, 3}, {2.9, 1}};
    const double whole = ipp_loglik(s, {3.0}, rate);
    for (double cut : {0.4, 1.0, 1.75, 2.5}) {
        std::vector<SamplingEvent> early, late;
        for (const auto& e : s) (e.time <= cut ? early : late).push_back(e);
        double rest = -rate.integral(cut, 3.0);
        for (const auto& e : late) rest += e.count * std::log(rate(e.time));
        CHECK(ipp_loglik(early, {cut}, rate) + rest == doctest::Approx(whole).epsilon(1e-12));
    }
}

TEST_CASE("per-cell route matches the direct route") {
    Rng rng(2);
    auto s = uniform_samples(60, 2.7, rng);
    const double end = 3.0, window = 2.8;
    const std::size_t cells = 7;
    std::vector<double> log_rate{0.2, -0.5, 1.0, 0.0, 0.4, -1.2, 0.7};
    std::vector<double> rate;
    for (double v : log_rate) rate.push_back(std::exp(v));
    auto st = ipp_grid_statistics(s, {window}, end, cells);
    CHECK(ipp_loglik(st, log_rate) == doctest::Approx(ipp_loglik(s, {window}, GridFunction(end, rate))).epsilon(1e-12));
}

TEST_CASE("sampling-rate models") {
    GridFunction ne(3.0, {1.0, 4.0, 9.0});
    SamplingModel m;
    m.beta0 = std::log(2.0);
    m.beta1 = 0.0;
    auto flat = sampling_rate(m, ne);
    for (double v : flat.rate.values()) CHECK(v == doctest::Approx(2.0));
    m.beta0 = 0.0;
    m.beta1 = 1.0;
    auto ident = sampling_rate(m, ne);
    auto id = ident.rate.values();
    CHECK(id[0] == 1.0);
    CHECK(id[1] == 4.0);
    CHECK(id[2] == 9.0);

    SamplingModel a;
    a.kind = SamplingModelKind::Adaptive;
    a.log_beta.assign(3, std::log(0.5));
    auto prod = sampling_rate(a, GridFunction::constant(3.0, 3, 4.0));
    for (double v : prod.rate.values())
        CHECK(v == doctest::Approx(2.0).epsilon(1e-14));

    SamplingModel e;
    e.kind = SamplingModelKind::Epoch;
    e.epoch_bounds = {1.6};
    e.epoch_coef = {2.0, 0.5};
    auto epoch = sampling_rate(e, ne);
    auto er = epoch.rate.values();
    CHECK(er[0] == 2.0);
    CHECK(er[1] == 8.0);   // midpoint 1.5 lies in the first epoch
    CHECK(er[2] == 4.5);

    SamplingModel c;
    c.kind = SamplingModelKind::Covariate;
    c.beta1 = 0.0;
    c.covariates = {{0.0, -5.0, 1.0}};
    c.covariate_coef = {1.0};
    auto cr = sampling_rate(c, ne);
    CHECK(cr.clipped_cells == 1);
    CHECK(cr.rate.values()[1] == kRateFloor);
    CHECK(cr.rate.values()[2] == doctest::Approx(2.0));

    m.beta1 = -1;
    CHECK_THROWS_AS(sampling_rate(m, ne), Error);
    CHECK(parse_sampling_model_kind("epoch") == SamplingModelKind::Epoch);
    CHECK_THROWS_AS(parse_sampling_model_kind("nope"), Error);
}

TEST_CASE("epoch assignment uses cell midpoints") {
    std::vector<double> bounds{1.0, 2.5};
    auto e = epoch_of_cells(bounds, 4.0, 8);
    CHECK(e == std::vector<std::size_t>{0, 0, 1, 1, 1, 2, 2, 2});
}

TEST_CASE("simulated sampling times follow the rate") {
    Rng rng(4);
    GridFunction rate(2.0, {50.0, 150.0});
    std::vector<double> counts;
    double late = 0;
    for (int r = 0; r < 400; ++r) {
        auto s = simulate_ipp(rate, {2.0}, rng);
        counts.push_back(static_cast<double>(s.size()));
        for (const auto& e : s) late += e.time >= 1.0;
    }
    CHECK(stats::mean(counts) == doctest::Approx(200.0).epsilon(0.02));
    CHECK(late / (400 * 200.0) == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("with beta1 fixed at zero the sampling factor does not involve Ne") {
    Rng rng(5);
    auto tree = simulate_coalescent(uniform_samples(50, 1.5, rng), GridFunction::constant(1.0, 1, 1.0), rng);
    auto s = summarize(tree);
    const std::size_t cells = 6;
    auto coal = grid_statistics(s, s.root_time(), cells);
    auto samp = ipp_grid_statistics(s.sampling_events(), {1.5}, s.root_time(), cells);
    PrefsampConfig cfg;
    cfg.cells = cells;
    cfg.fixed_beta1 = 0.0;
    auto pm = prefsamp_model(coal, samp, cfg);
    auto sky = skyline_model(coal, cfg.prior);
    Rng draw(6);
    std::normal_distribution<double> z;
    for (int k = 0; k < 5; ++k) {
        std::vector<double> x;
        for (std::size_t c = 0; c < cells; ++c) x.push_back(z(draw));
        x.push_back(1.3);
        const double b0 = 3.0;
        auto xp = x;
        xp.push_back(b0);
        const double homogeneous = 50 * b0 - 1.5 * std::exp(b0) + stats::normal_logpdf(b0, 0.0, 2.0);
        CHECK(pm.spec.log_posterior(xp) - sky.log_posterior(x) == doctest::Approx(homogeneous).epsilon(1e-10));
    }
}

TEST_CASE("with beta1 fixed at zero the Ne posterior matches fit_ne") {
    Rng rng(7);
    auto s = summarize(simulate_coalescent(uniform_samples(80, 1.5, rng), GridFunction(1.0, {1.0, 2.0}), rng));
    PrefsampConfig pc;
    pc.cells = 5;
    pc.fixed_beta1 = 0.0;
    pc.prior = GmrfPrior{2.0, 1.0, {}};
    pc.mcmc = McmcConfig{60000, 10000, 10, 1, 3, 1};
    SkylineConfig sc{5, {}, pc.prior, McmcConfig{60000, 10000, 10, 1, 4, 1}};
    auto a = fit_prefsamp(s, pc);
    auto b = fit_ne(s, sc);
    for (std::size_t c = 0; c < 5; ++c) {
        auto xa = a.trace.coordinate(c), xb = b.trace.coordinate(c);
        const double se = std::sqrt(stats::variance(xa) / effective_sample_size({xa}) +
                                    stats::variance(xb) / effective_sample_size({xb}));
        CHECK(std::abs(stats::mean(xa) - stats::mean(xb)) < 4 * se);
    }
}

TEST_CASE("constant adaptive field equals the one-epoch model") {
    Rng rng(8);
    auto s = summarize(simulate_coalescent(uniform_samples(40, 1.0, rng), GridFunction::constant(1.0, 1, 1.0), rng));
    const std::size_t cells = 4;
    auto coal = grid_statistics(s, s.root_time(), cells);
    auto samp = ipp_grid_statistics(s.sampling_events(), {1.0}, s.root_time(), cells);
    PrefsampConfig ad;
    ad.cells = cells;
    ad.kind = SamplingModelKind::Adaptive;
    PrefsampConfig ep = ad;
    ep.kind = SamplingModelKind::Epoch;
    auto ma = prefsamp_model(coal, samp, ad);
    auto me = prefsamp_model(coal, samp, ep);
    std::vector<double> base{0.3, -0.2, 0.5, 0.1, 2.0};
    for (double coef : {0.3, 1.0, 7.5}) {
        auto xe = base;
        xe.push_back(coef);
        auto xa = base;
        for (std::size_t c = 0; c < cells; ++c) xa.push_back(std::log(coef));
        xa.push_back(4.0);
        std::vector<double> field(cells, std::log(coef));
        const double la = ma.spec.log_posterior(xa) - gmrf_log_prior(field, 4.0, ad.sampling.beta_field);
        const double le = me.spec.log_posterior(xe) -
                          (stats::normal_logpdf(std::log(coef), 0.0, ep.sampling.epoch_log_sd) - std::log(coef));
        CHECK(la == doctest::Approx(le).epsilon(1e-12));
    }
}

TEST_CASE("covariate model counts clipped evaluations") {
    Rng rng(9);
    auto s = summarize(simulate_coalescent(uniform_samples(30, 1.0, rng), GridFunction::constant(1.0, 1, 1.0), rng));
    const std::size_t cells = 3;
    auto coal = grid_statistics(s, s.root_time(), cells);
    auto samp = ipp_grid_statistics(s.sampling_events(), {1.0}, s.root_time(), cells);
    PrefsampConfig cfg;
    cfg.cells = cells;
    cfg.kind = SamplingModelKind::Covariate;
    cfg.covariates = {{1.0, 1.0, -100.0}};
    auto m = prefsamp_model(coal, samp, cfg);
    std::vector<double> x{0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0};
    (void)m.spec.log_posterior(x);
    CHECK(m.clipped->load() == 1);
    cfg.covariates = {{1.0, 1.0}};
    CHECK_THROWS_AS(prefsamp_model(coal, samp, cfg), Error);
}

TEST_CASE("contemporaneous samples need an explicit window") {
    auto s = summarize(parse_newick("((A:1,B:1):1,C:2);"));
    PrefsampConfig cfg;
    cfg.cells = 2;
    CHECK_THROWS_AS(fit_prefsamp(s, cfg), Error);
}

TEST_CASE("parametric fit recovers beta1") {
    Rng rng(10);
    GridFunction ne(2.0, {2.0, 1.0, 0.5, 1.0, 2.0, 4.0, 4.0, 4.0});
    SamplingModel sm;
    sm.beta0 = std::log(40.0);
    sm.beta1 = 1.0;
    auto samples = simulate_ipp(sampling_rate(sm, ne).rate, {2.0}, rng);
    auto tree = simulate_coalescent(samples, ne, rng);
    auto s = summarize(tree);
    PrefsampConfig cfg;
    cfg.cells = 10;
    cfg.window_end = 2.0 - tree.axis_offset();
    cfg.mcmc = McmcConfig{40000, 10000, 10, 1, 11, 1};
    auto fit = fit_prefsamp(s, cfg);
    auto b1 = fit.trace.coordinate(*fit.trace.column_index("beta1"));
    CHECK(stats::mean(b1) > 0.6);
    CHECK(stats::mean(b1) < 1.4);
}

}  // TEST_SUITE
