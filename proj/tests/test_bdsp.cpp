#include <doctest.h>

#include <cmath>

#include "phylokit/bdsp.hpp"
#include "phylokit/stats.hpp"

using namespace phylokit;

namespace {

BdspParams constant(double lambda, double mu, double psi, double rho, double present) {
    return BdspParams{{0.0, present}, {lambda}, {mu}, {psi}, {rho}};
}

// lambda^(n-1) exp(-lambda * total lineage time) for a complete Yule tree
// observed at `present`, with the first lineage starting at the origin
double yule_log_density(double lambda, double present, const std::vector<double>& branchings) {
    double length = present;
    for (double x : branchings) length += present - x;
    return static_cast<double>(branchings.size()) * std::log(lambda) - lambda * length;
}

// Caterpillar in forward time: branching times ascending, all tips bulk at the present.
SampledBdTree yule_tree(const std::vector<double>& x, const BdspParams& p) {
    std::vector<BdEdge> edges{{0.0, x[0], BdEnd::Branching, 0}};
    for (std::size_t k = 0; k < x.size(); ++k) {
        edges.push_back({x[k], p.present(), BdEnd::Bulk, p.intervals() - 1});
        if (k + 1 < x.size()) edges.push_back({x[k], x[k + 1], BdEnd::Branching, 0});
    }
    edges.push_back({x.back(), p.present(), BdEnd::Bulk, p.intervals() - 1});
    return SampledBdTree(edges, p);
}

// Reference (p0, log q) by classical RK4 with a fine fixed step.
std::pair<double, double> rk4_reference(double lambda, double mu, double psi, double p0_end, double span) {
    auto f = [&](double p0) {
        const double total = lambda + mu + psi;
        return std::pair{mu - total * p0 + lambda * p0 * p0, -(total - 2 * lambda * p0)};
    };
    const int steps = 20000;
    const double h = span / steps;
    double p0 = p0_end, lq = 0.0;
    for (int k = 0; k < steps; ++k) {
        auto [a1, b1] = f(p0);
        auto [a2, b2] = f(p0 + 0.5 * h * a1);
        auto [a3, b3] = f(p0 + 0.5 * h * a2);
        auto [a4, b4] = f(p0 + h * a3);
        p0 += h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
        lq += h / 6 * (b1 + 2 * b2 + 2 * b3 + b4);
    }
    return {p0, lq};
}

// Birth-death-sampling process tracked only through its lineage count.
struct CountOutcome {
    int serial = 0;
    int bulk = 0;
};

CountOutcome count_process(double lambda, double mu, double psi, double rho, double present, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    long alive = 1;
    double t = 0;
    CountOutcome out;
    const double per = lambda + mu + psi;
    while (alive > 0) {
        t += expo(rng) / (per * static_cast<double>(alive));
        if (t >= present) break;
        const double w = u(rng) * per;
        if (w < lambda) ++alive;
        else {
            --alive;
            if (w >= lambda + mu) ++out.serial;
        }
        if (out.serial > 1 || alive > 10000) return out;
    }
    std::binomial_distribution<long> bulk(alive, rho);
    out.bulk = static_cast<int>(bulk(rng));
    return out;
}

}  // namespace

TEST_SUITE("bdsp") {

TEST_CASE("zero rates leave q flat") {
    auto d = solve_dwelling(constant(0.0, 0.0, 0.0, 0.3, 2.0));
    for (double t : {0.0, 0.5, 1.9}) {
        CHECK(d.q(0, t) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(d.p0(0, t) == doctest::Approx(0.7).epsilon(1e-14));
    }
}

TEST_CASE("pure death without sampling goes extinct") {
    auto d = solve_dwelling(constant(0.0, 1.0, 0.0, 0.0, 1.0));
    CHECK(d.p0(0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dwelling solution against a fixed-step reference") {
    const double lambda = 2.0, mu = 1.0, psi = 0.5, rho = 0.5, T = 1.5;
    auto d = solve_dwelling(constant(lambda, mu, psi, rho, T));
    for (double t : {0.0, 0.4, 1.2}) {
        auto [p0, lq] = rk4_reference(lambda, mu, psi, 1 - rho, T - t);
        CHECK(d.p0(0, t) == doctest::Approx(p0).epsilon(1e-9));
        CHECK(d.log_q(0, t) == doctest::Approx(lq).epsilon(1e-9));
    }
}

TEST_CASE("q equals one at each interval's right end and stays positive") {
    BdspParams p{{0.0, 0.7, 1.3, 2.0}, {1.5, 0.8, 2.5}, {0.4, 1.0, 0.2}, {0.3, 0.0, 0.6}, {0.2, 0.5, 0.1}};
    auto d = solve_dwelling(p);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(d.q(i, p.bounds[i + 1]) - 1.0) < 1e-12);
        for (int k = 0; k <= 10; ++k) {
            const double t = p.bounds[i] + (p.bounds[i + 1] - p.bounds[i]) * k / 10.0;
            CHECK(d.q(i, t) > 0);
            CHECK(d.p0(i, t) >= 0);
            CHECK(d.p0(i, t) <= 1);
        }
    }
    // p0 across a breakpoint picks up the (1 - rho) factor
    CHECK(d.p0_end(0) == doctest::Approx(0.8 * d.p0(1, 0.7)).epsilon(1e-14));
}

TEST_CASE("Yule trees match the closed form") {
    const double lambda = 1.3, T = 2.0;
    auto p = constant(lambda, 0.0, 0.0, 1.0, T);
    auto d = solve_dwelling(p);
    for (const auto& x : std::vector<std::vector<double>>{{0.5}, {0.3, 1.1}, {0.2, 0.9, 1.7}}) {
        auto tree = yule_tree(x, p);
        CHECK(tree.tip_count() == x.size() + 1);
        CHECK(std::abs(bdsp_logdensity(tree, d) - yule_log_density(lambda, T, x)) < 1e-6);
    }
}

TEST_CASE("single serial sample") {
    const double mu = 0.7, psi = 0.9, y = 0.6;
    auto p = constant(0.0, mu, psi, 0.0, 2.0);
    auto d = solve_dwelling(p);
    SampledBdTree tree({{0.0, y, BdEnd::Serial, 0}}, p);
    const double direct = d.log_q(0, 0.0) + std::log(psi) - d.log_q(0, y);
    CHECK(bdsp_logdensity(tree, d) == doctest::Approx(direct).epsilon(1e-12));
    // with no births the first event is the sample: psi exp(-(mu + psi) y)
    CHECK(bdsp_logdensity(tree, d) == doctest::Approx(std::log(psi) - (mu + psi) * y).epsilon(1e-9));
}

TEST_CASE("an inert breakpoint leaves the density unchanged") {
    auto one = constant(1.5, 0.5, 0.3, 0.4, 2.0);
    BdspParams two{{0.0, 0.8, 2.0}, {1.5, 1.5}, {0.5, 0.5}, {0.3, 0.3}, {0.0, 0.4}};
    auto d1 = solve_dwelling(one);
    auto d2 = solve_dwelling(two);
    Rng rng(3);
    int checked = 0;
    while (checked < 10) {
        auto sim = simulate_bdsp(one, rng);
        if (!sim.phylogeny) continue;
        auto a = SampledBdTree::from_phylogeny(*sim.phylogeny, sim.stem, one);
        auto b = SampledBdTree::from_phylogeny(*sim.phylogeny, sim.stem, two);
        CHECK(std::abs(bdsp_logdensity(a, d1) - bdsp_logdensity(b, d2)) < 1e-8);
        ++checked;
    }
}

TEST_CASE("lineage counts at breakpoints match a direct crossing count") {
    BdspParams p{{0.0, 0.6, 1.2, 1.8}, {2.0, 1.5, 1.0}, {0.5, 0.5, 0.8}, {0.3, 0.2, 0.4}, {0.3, 0.2, 0.5}};
    Rng rng(4);
    int checked = 0;
    while (checked < 30) {
        auto sim = simulate_bdsp(p, rng);
        if (!sim.tree) continue;
        const auto& tree = *sim.tree;
        for (std::size_t i = 0; i + 1 < p.intervals(); ++i) {
            const double u = p.bounds[i + 1];
            int crossing = 0;
            for (const auto& e : tree.edges()) crossing += e.start < u && e.end > u + 1e-9;
            CHECK(tree.lineages_at_breakpoints()[i] == crossing);
        }
        ++checked;
    }
}

TEST_CASE("sampled tree agrees with its phylogeny") {
    BdspParams p{{0.0, 1.0, 2.0}, {2.0, 1.0}, {0.5, 0.5}, {0.3, 0.3}, {0.4, 0.6}};
    Rng rng(5);
    int checked = 0;
    while (checked < 20) {
        auto sim = simulate_bdsp(p, rng);
        if (!sim.phylogeny) continue;
        CHECK(validate(*sim.phylogeny).empty());
        auto rebuilt = SampledBdTree::from_phylogeny(*sim.phylogeny, sim.stem, p);
        CHECK(rebuilt.tip_count() == sim.tree->tip_count());
        CHECK(rebuilt.bulk_counts() == sim.tree->bulk_counts());
        auto d = solve_dwelling(p);
        CHECK(bdsp_logdensity(rebuilt, d) == doctest::Approx(bdsp_logdensity(*sim.tree, d)).epsilon(1e-9));
        ++checked;
    }
}

TEST_CASE("q(0) against a lineage-count Monte Carlo") {
    // one bulk sample and no serial samples has probability rho * q(0)
    const double lambda = 2.0, mu = 1.0, psi = 0.5, rho = 0.5, T = 1.0;
    auto d = solve_dwelling(constant(lambda, mu, psi, rho, T));
    Rng rng(6);
    const int reps = 100000;
    int hits = 0;
    for (int r = 0; r < reps; ++r) {
        auto o = count_process(lambda, mu, psi, rho, T, rng);
        hits += o.serial == 0 && o.bulk == 1;
    }
    const double phat = static_cast<double>(hits) / reps;
    const double se = std::sqrt(phat * (1 - phat) / reps);
    CHECK(std::abs(phat - rho * d.q(0, 0.0)) < 3 * se);
}

TEST_CASE("sampling clock alone") {
    auto p = constant(0.0, 0.0, 1.0, 0.0, 1.0);
    Rng rng(7);
    const int reps = 10000;
    int sampled = 0;
    for (int r = 0; r < reps; ++r) sampled += simulate_bdsp(p, rng).tree.has_value();
    const double expect = 1 - std::exp(-1.0);
    CHECK(std::abs(sampled / static_cast<double>(reps) - expect) < 3 * std::sqrt(expect * (1 - expect) / reps));
}

TEST_CASE("no sampling means no tree") {
    auto p = constant(0.5, 1.0, 0.0, 0.0, 3.0);
    Rng rng(8);
    for (int r = 0; r < 1000; ++r) {
        auto sim = simulate_bdsp(p, rng);
        CHECK_FALSE(sim.tree.has_value());
        CHECK(sim.samples == 0);
    }
}

TEST_CASE("runaway growth hits the event limit") {
    Rng rng(9);
    CHECK_THROWS_AS(simulate_bdsp(constant(20.0, 0.0, 0.0, 0.5, 5.0), rng, 10000), EventLimitExceeded);
}

TEST_CASE("first branching time of two-tip trees") {
    // bulk-only two-tip trees: x has density proportional to q(x) on [0, T]
    const double T = 1.5;
    auto p = constant(1.2, 0.6, 0.0, 0.5, T);
    auto d = solve_dwelling(p);
    const int grid = 3000;
    std::vector<double> cdf(grid + 1, 0.0);
    for (int k = 1; k <= grid; ++k) {
        const double a = T * (k - 1) / grid, b = T * k / grid;
        cdf[k] = cdf[k - 1] + (b - a) / 6 * (d.q(0, a) + 4 * d.q(0, 0.5 * (a + b)) + d.q(0, b));
    }
    for (double& c : cdf) c /= cdf.back();
    auto F = [&](double x) {
        const double pos = x / T * grid;
        const auto k = std::min(static_cast<int>(pos), grid - 1);
        return cdf[k] + (pos - k) * (cdf[k + 1] - cdf[k]);
    };
    Rng rng(10);
    std::vector<double> first;
    while (first.size() < 3000) {
        auto sim = simulate_bdsp(p, rng);
        if (!sim.tree || sim.tree->tip_count() != 2) continue;
        first.push_back(sim.tree->branching_times()[0]);
    }
    CHECK(stats::ks_test(first, F) > 0.01);
}

TEST_CASE("bulk claims and impossible samples") {
    auto p = constant(1.0, 0.5, 0.5, 0.0, 2.0);
    auto tree = parse_newick("(A:1,B:0.5);");
    std::vector<BdEnd> claims{BdEnd::Bulk, BdEnd::Bulk};
    // A sits at the present; B does not
    CHECK_THROWS_AS(SampledBdTree::from_phylogeny(tree, 1.0, p, &claims), Error);
    claims = {BdEnd::Bulk, BdEnd::Serial};
    auto t = SampledBdTree::from_phylogeny(tree, 1.0, p, &claims);
    CHECK(t.bulk_counts()[0] == 1);
    CHECK(std::isinf(bdsp_logdensity(t, solve_dwelling(p))));
    auto auto_kind = SampledBdTree::from_phylogeny(tree, 1.0, p);
    CHECK(auto_kind.serial_times().size() == 2);
}

TEST_CASE("rate JSON") {
    auto j = nlohmann::json::parse(R"({"u":[1,2],"lambda":[1,2],"mu":[0,0.5],"psi":[0.1,0.1],"rho":[0,0.5]})");
    auto p = bdsp_params_from_json(j);
    CHECK(p.bounds == std::vector<double>{0, 1, 2});
    auto q = bdsp_params_from_json(to_json(p));
    CHECK(q.bounds == p.bounds);
    CHECK(q.rho == p.rho);
    j["rho"] = {0, 1.5};
    CHECK_THROWS_AS(bdsp_params_from_json(j), Error);
    j.erase("mu");
    CHECK_THROWS_AS(bdsp_params_from_json(j), Error);
}

}  // TEST_SUITE
