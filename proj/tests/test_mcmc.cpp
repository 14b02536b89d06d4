#include <doctest.h>

#include <cmath>
#include <sstream>

#include "phylokit/mcmc.hpp"
#include "phylokit/stats.hpp"

using namespace phylokit;

namespace {

ModelSpec normal_1d() {
    ModelSpec m;
    m.blocks = {{"x", 1, Support::Real, {}, {}}};
    m.log_posterior = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
    return m;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("standard normal target") {
    McmcConfig cfg{60000, 10000, 1, 1, 17, 1};
    auto t = run_mcmc(normal_1d(), cfg, std::vector<double>{3.0});
    auto x = t.coordinate(0);
    CHECK(x.size() == 50000);
    CHECK(std::abs(stats::mean(x)) < 0.05);
    CHECK(stats::variance(x) > 0.9);
    CHECK(stats::variance(x) < 1.1);
    CHECK(t.chains[0].acceptance[0] == doctest::Approx(0.44).epsilon(0.15));
}

TEST_CASE("Gamma(2, 2) through the log transform") {
    ModelSpec m;
    m.blocks = {{"g", 1, Support::Positive, {}, {}}};
    m.log_posterior = [](std::span<const double> x) { return std::log(x[0]) - 2.0 * x[0]; };
    McmcConfig cfg{110000, 10000, 1, 1, 3, 1};
    auto g = run_mcmc(m, cfg, std::vector<double>{1.0}).coordinate(0);

    Rng rng(4);
    std::gamma_distribution<double> direct(2.0, 0.5);
    std::vector<double> d;
    for (int i = 0; i < 100000; ++i) d.push_back(direct(rng));
    CHECK(std::abs(stats::mean(g) - 1.0) < 0.03);
    CHECK(std::abs(stats::mean(d) - 1.0) < 0.01);
}

TEST_CASE("determinism across runs and thread counts") {
    McmcConfig cfg{3000, 1000, 2, 3, 99, 1};
    auto a = run_mcmc(normal_1d(), cfg, std::vector<double>{0.0});
    auto b = run_mcmc(normal_1d(), cfg, std::vector<double>{0.0});
    cfg.threads = 3;
    auto c = run_mcmc(normal_1d(), cfg, std::vector<double>{0.0});
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(a.chains[k].draws == b.chains[k].draws);
        CHECK(a.chains[k].draws == c.chains[k].draws);
        CHECK(a.chains[k].seed == derive_seed(99, k));
    }
    CHECK(a.chains[0].draws != a.chains[1].draws);
    CHECK(a.draws_per_chain() == (3000 - 1000) / 2);
}

TEST_CASE("errors") {
    ModelSpec m = normal_1d();
    m.log_posterior = [](std::span<const double>) { return -INFINITY; };
    CHECK_THROWS_AS(run_mcmc(m, McmcConfig{100, 10, 1, 1, 1, 1}, std::vector<double>{0.0}), Error);
    m.log_posterior = [](std::span<const double> x) { return x[0] > 1 ? NAN : 0.0; };
    CHECK_THROWS_AS(run_mcmc(m, McmcConfig{2000, 10, 1, 1, 1, 1}, std::vector<double>{0.0}), Error);
}

TEST_CASE("adapted covariance reproduces a correlated Gaussian") {
    // covariance [[1, 1.6], [1.6, 4]]
    const double s11 = 1.0, s12 = 1.6, s22 = 4.0;
    const double det = s11 * s22 - s12 * s12;
    ModelSpec m;
    m.blocks = {{"v", 2, Support::Real, {}, {}}};
    m.log_posterior = [=](std::span<const double> x) {
        return -0.5 * (s22 * x[0] * x[0] - 2 * s12 * x[0] * x[1] + s11 * x[1] * x[1]) / det;
    };
    McmcConfig cfg{420000, 20000, 2, 1, 8, 1};
    auto t = run_mcmc(m, cfg, std::vector<double>{0.0, 0.0});
    auto a = t.coordinate(0), b = t.coordinate(1);
    const double ma = stats::mean(a), mb = stats::mean(b);
    double cov = 0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma) * (b[i] - mb);
    cov /= static_cast<double>(a.size() - 1);
    CHECK(stats::variance(a) == doctest::Approx(s11).epsilon(0.05));
    CHECK(stats::variance(b) == doctest::Approx(s22).epsilon(0.05));
    CHECK(cov == doctest::Approx(s12).epsilon(0.05));
    CHECK(t.chains[0].acceptance[0] == doctest::Approx(0.234).epsilon(0.3));
}

TEST_CASE("ESS and R-hat oracles") {
    Rng rng(12);
    std::normal_distribution<double> z;
    const std::size_t n = 5000;

    SUBCASE("iid draws") {
        std::vector<std::vector<double>> chains(2, std::vector<double>(n));
        for (auto& c : chains)
            for (double& v : c) v = z(rng);
        const double ess = effective_sample_size(chains);
        CHECK(ess > 0.8 * 2 * n);
        CHECK(ess < 1.2 * 2 * n);
    }
    SUBCASE("duplicated chains") {
        std::vector<double> c(n);
        for (double& v : c) v = z(rng);
        CHECK(std::abs(split_rhat({c, c}) - 1.0) < 1e-2);
    }
    SUBCASE("AR(1) with coefficient 0.9") {
        const std::size_t len = 200000;
        std::vector<std::vector<double>> chains(2, std::vector<double>(len));
        for (auto& c : chains) {
            double x = 0;
            for (double& v : c) v = x = 0.9 * x + z(rng);
        }
        const double ratio = effective_sample_size(chains) / static_cast<double>(2 * len);
        CHECK(ratio == doctest::Approx(0.1 / 1.9).epsilon(0.3));
    }
    SUBCASE("diagnostics demand enough draws") {
        auto t = make_trace({"a"}, {{{1.0}, {2.0}}, {{1.0}, {3.0}}});
        CHECK_THROWS_AS(diagnostics(t), Error);
    }
}

TEST_CASE("field summaries") {
    SUBCASE("degenerate trace") {
        std::vector<std::vector<std::vector<double>>> rows(1, std::vector<std::vector<double>>(50, {2.0, -1.0}));
        auto t = make_trace({"f[0]", "f[1]"}, rows);
        t.block_names = {"f"};
        t.block_offsets = {0};
        t.block_dims = {2};
        auto s = summarize_field(t, "f", FieldTransform::Identity);
        CHECK(s.median[0] == 2.0);
        CHECK(s.lower[1] == -1.0);
        CHECK(s.upper[1] == -1.0);
        CHECK_THROWS_AS(summarize_field(t, "g", FieldTransform::Identity), Error);
    }
    SUBCASE("uniform and lognormal draws") {
        Rng rng(5);
        std::uniform_real_distribution<double> u;
        std::normal_distribution<double> z;
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < 40000; ++i) rows.push_back({u(rng), z(rng)});
        auto t = make_trace({"f[0]", "f[1]"}, {rows});
        t.block_names = {"f"};
        t.block_offsets = {0};
        t.block_dims = {2};
        auto id = summarize_field(t, "f", FieldTransform::Identity);
        CHECK(id.median[0] == doctest::Approx(0.5).epsilon(0.02));
        CHECK(id.lower[0] == doctest::Approx(0.025).epsilon(0.1));
        CHECK(id.upper[0] == doctest::Approx(0.975).epsilon(0.01));
        auto ex = summarize_field(t, "f", FieldTransform::Exp);
        CHECK(ex.median[1] == doctest::Approx(1.0).epsilon(0.03));
    }
}

TEST_CASE("trace CSV") {
    auto t = run_mcmc(normal_1d(), McmcConfig{30, 10, 10, 1, 1, 1}, std::vector<double>{0.0});
    std::ostringstream os;
    write_trace_csv(t, os);
    CHECK(os.str().rfind("chain,draw,log_posterior,x", 0) == 0);
}

}  // TEST_SUITE
