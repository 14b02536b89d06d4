// Acceptance harness: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "phylokit/bdsp.hpp"
#include "phylokit/cli.hpp"
#include "phylokit/epi.hpp"
#include "phylokit/prefsamp.hpp"
#include "phylokit/skyline.hpp"
#include "phylokit/stats.hpp"
#include "phylokit/treedist.hpp"
#include "phylokit/variant.hpp"

using namespace phylokit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

std::string frac(std::size_t k, std::size_t n) { return std::to_string(k) + "/" + std::to_string(n); }

std::uint64_t base_seed = 20240611;

std::uint64_t seed_for(int criterion, std::uint64_t stream) {
    return derive_seed(base_seed + static_cast<std::uint64_t>(criterion) * 1000003ULL, stream);
}

CoalescentSummary isochronous(int n, std::vector<double> coal) {
    std::vector<double> y(static_cast<std::size_t>(n), 0.0);
    return CoalescentSummary::from_times(y, coal);
}

BdspParams constant_rates(double lambda, double mu, double psi, double rho, double present) {
    return BdspParams{{0.0, present}, {lambda}, {mu}, {psi}, {rho}};
}

// Complete Yule tree from a single lineage at the origin: lambda^(n-1) exp(-lambda L),
// L the total lineage time up to the present.
double yule_closed_form(double lambda, double present, const std::vector<double>& branchings) {
    double length = present;
    for (double x : branchings) length += present - x;
    return static_cast<double>(branchings.size()) * std::log(lambda) - lambda * length;
}

// Caterpillar with bulk tips at the present.
SampledBdTree caterpillar(const std::vector<double>& x, const BdspParams& p) {
    std::vector<BdEdge> edges{{0.0, x[0], BdEnd::Branching, 0}};
    for (std::size_t k = 0; k < x.size(); ++k) {
        edges.push_back({x[k], p.present(), BdEnd::Bulk, p.intervals() - 1});
        if (k + 1 < x.size()) edges.push_back({x[k], x[k + 1], BdEnd::Branching, 0});
    }
    edges.push_back({x.back(), p.present(), BdEnd::Bulk, p.intervals() - 1});
    return SampledBdTree(edges, p);
}

// ---------------------------------------------------------------------------

Outcome likelihood_oracles() {
    double worst_coal = 0, worst_ipp = 0, worst_bd = 0;
    auto track = [](double& w, double got, double want) { w = std::max(w, std::abs(got - want)); };

    track(worst_coal, coalescent_loglik(isochronous(2, {1.0}), GridFunction::constant(1.0, 1, 1.0)), -1.0);
    const auto three = isochronous(3, {1.0, 2.0});
    const GridFunction two = GridFunction::constant(2.0, 1, 2.0);
    // genealogy density -(3*1 + 1*1)/2 - 2 log 2; the coalescence-time density adds log 3 + log 1
    track(worst_coal, coalescent_loglik(three, two), -2.0 - 2.0 * std::log(2.0));
    const double times_ll = coalescent_times_loglik(three, two);
    track(worst_coal, times_ll, std::log(0.75) - 2.0);
    track(worst_coal, coalescent_loglik(isochronous(2, {1.0}), GridFunction(1.0, {1.0, 2.0})),
          -std::log(2.0) - 0.5 - 0.25);

    const std::vector<SamplingEvent> seven{{0.3, 2}, {1.1, 1}, {2.0, 3}, {4.9, 1}};
    track(worst_ipp, ipp_loglik(seven, {5.0}, GridFunction::constant(5.0, 1, 2.0)), 7 * std::log(2.0) - 10);
    track(worst_ipp, ipp_loglik({}, {1.0}, GridFunction::constant(1.0, 1, 3.0)), -3.0);
    const std::vector<SamplingEvent> pair{{0.5, 1}, {1.5, 1}};
    track(worst_ipp, ipp_loglik(pair, {2.0}, GridFunction(2.0, {1.0, 3.0})), std::log(3.0) - 4.0);

    const double lambda = 1.7, present = 2.5;
    const auto p = constant_rates(lambda, 0.0, 0.0, 1.0, present);
    const auto d = solve_dwelling(p);
    for (const auto& x : std::vector<std::vector<double>>{{0.8}, {0.4, 1.9}, {0.3, 0.35, 2.2}, {1.0, 1.2, 1.4}})
        track(worst_bd, bdsp_logdensity(caterpillar(x, p), d), yule_closed_form(lambda, present, x));

    const bool pass = worst_coal <= 1e-9 && worst_ipp <= 1e-9 && worst_bd <= 1e-6;
    return {pass, "coalescent max err " + fmt(worst_coal) + " (genealogy density -2-2log2, time density " +
                      fmt(times_ll, 7) + "), iPP max err " + fmt(worst_ipp) + ", Yule max err " + fmt(worst_bd)};
}

// ---------------------------------------------------------------------------

Outcome simulator_consistency() {
    const int reps = 10000;
    // coalescent: two samples, exponential-shaped Ne
    std::vector<double> values;
    for (int c = 0; c < 10; ++c) values.push_back(2.0 * std::exp(-0.3 * c));
    const double end = 3.0;
    const GridFunction ne(end, values);
    auto cdf_t2 = [&](double t) {
        double h = 0.0;
        const double w = end / 10.0;
        for (std::size_t c = 0; c < values.size(); ++c) {
            const double lo = w * static_cast<double>(c);
            const double hi = c + 1 == values.size() ? INFINITY : lo + w;
            if (t <= lo) break;
            h += (std::min(t, hi) - lo) / values[c];
        }
        return 1.0 - std::exp(-h);
    };
    Rng rng(seed_for(2, 0));
    const std::vector<SamplingEvent> samples{{0.0, 2}};
    std::vector<double> t2;
    for (int r = 0; r < reps; ++r) t2.push_back(simulate_coalescent(samples, ne, rng).root_time());
    const double p_coal = stats::ks_test(t2, cdf_t2);

    // BDSP: bulk-only two-tip trees; the branching time has density proportional to q(x)
    const double T = 1.5;
    const auto params = constant_rates(1.2, 0.6, 0.0, 0.5, T);
    const auto d = solve_dwelling(params);
    const int grid = 4000;
    std::vector<double> cdf(grid + 1, 0.0);
    for (int k = 1; k <= grid; ++k) {
        const double a = T * (k - 1) / grid, b = T * k / grid;
        cdf[k] = cdf[k - 1] + (b - a) / 6 * (d.q(0, a) + 4 * d.q(0, 0.5 * (a + b)) + d.q(0, b));
    }
    for (double& c : cdf) c /= cdf.back();
    auto cdf_x = [&](double x) {
        const double pos = std::clamp(x / T, 0.0, 1.0) * grid;
        const auto k = std::min(static_cast<int>(pos), grid - 1);
        return cdf[k] + (pos - k) * (cdf[k + 1] - cdf[k]);
    };
    Rng brng(seed_for(2, 1));
    std::vector<double> first;
    std::size_t runs = 0;
    while (first.size() < static_cast<std::size_t>(reps)) {
        ++runs;
        const auto sim = simulate_bdsp(params, brng);
        if (sim.tree && sim.tree->tip_count() == 2) first.push_back(sim.tree->branching_times()[0]);
    }
    const double p_bd = stats::ks_test(first, cdf_x);
    return {p_coal > 0.01 && p_bd > 0.01, "coalescent t2 KS p = " + fmt(p_coal) + " (" + std::to_string(reps) +
                                               " trees), BDSP first branching KS p = " + fmt(p_bd) + " (" +
                                               std::to_string(reps) + " two-tip trees of " + std::to_string(runs) +
                                               " runs)"};
}

// ---------------------------------------------------------------------------

// Baseline Ne halving per unit of backward time: growth toward the present.
GridFunction growing_ne(double scale, double alpha, double beta) {
    std::vector<double> v;
    const double end = 8.0;
    const std::size_t cells = 160;
    for (std::size_t c = 0; c < cells; ++c) {
        const double t = (static_cast<double>(c) + 0.5) * end / static_cast<double>(cells);
        v.push_back(alpha * std::pow(scale * std::pow(2.0, -t), beta));
    }
    return GridFunction(end, v);
}

CoalescentSummary spread_tree(std::size_t n, const GridFunction& ne, Rng& rng, double spread) {
    std::uniform_real_distribution<double> u(0.0, spread);
    std::vector<SamplingEvent> s{{0.0, 1}};
    for (std::size_t i = 1; i < n; ++i) s.push_back({u(rng), 1});
    return summarize(simulate_coalescent(s, ne, rng));
}

Outcome variant_calibration() {
    const std::size_t reps = 50, n = 150;
    VariantConfig cfg;
    cfg.cells = 20;
    cfg.mcmc = McmcConfig{40000, 10000, 10, 2, 0, 1};
    std::size_t covered = 0, mean_ok = 0, decisive = 0;
    double worst_rhat = 0;
    for (int beta : {1, 2}) {
        const double alpha = beta == 1 ? 1.0 : 0.5;
        for (std::size_t r = 0; r < reps; ++r) {
            Rng rng(seed_for(3, static_cast<std::uint64_t>(beta) * 1000 + r));
            const auto s0 = spread_tree(n, growing_ne(16.0, 1.0, 1.0), rng, 1.0);
            const auto s1 = spread_tree(n, growing_ne(16.0, alpha, beta), rng, 1.0);
            cfg.mcmc.seed = rng();
            const auto trace = fit_variant(s0, s1, cfg);
            const auto t = test_beta(trace, 1.0);
            worst_rhat = std::max(worst_rhat, split_rhat(trace.coordinate_by_chain(*trace.column_index("beta"))));
            if (beta == 1) {
                covered += t.lower <= 1.0 && 1.0 <= t.upper;
            } else {
                mean_ok += t.mean >= 1.5 && t.mean <= 2.5;
                decisive += t.p_greater > 0.95;
            }
        }
    }
    const bool pass = covered * 10 >= reps * 9 && mean_ok * 10 >= reps * 8 && decisive * 10 >= reps * 9;
    return {pass, "beta=1: CI covers 1 in " + frac(covered, reps) + "; beta=2: mean in [1.5,2.5] in " +
                      frac(mean_ok, reps) + ", P(beta>1)>0.95 in " + frac(decisive, reps) + "; max R-hat(beta) " +
                      fmt(worst_rhat)};
}

// ---------------------------------------------------------------------------

Outcome skyline_sbc() {
    const std::size_t reps = 200, n = 100, cells = 20, bins = 10;
    const double grid_end = 3.0;
    GmrfPrior prior{4.0, 0.4, 1.0};  // tau ~ Gamma(4, 0.4), first cell ~ Normal(0, 1)
    SkylineConfig cfg;
    cfg.cells = cells;
    cfg.grid_end = grid_end;
    cfg.prior = prior;
    // 3 chains x 33 retained, well separated draws: ranks take 100 values
    cfg.mcmc = McmcConfig{20000 + 33 * 600, 20000, 600, 3, 0, 1};
    std::vector<std::vector<std::size_t>> hist(cells, std::vector<std::size_t>(bins, 0));
    for (std::size_t r = 0; r < reps; ++r) {
        Rng rng(seed_for(4, r));
        std::gamma_distribution<double> g(prior.shape, 1.0 / prior.rate);
        const double tau = g(rng);
        const auto x = sample_field(tau, cells, *prior.anchor_sd, rng);
        std::vector<double> ne(cells);
        for (std::size_t c = 0; c < cells; ++c) ne[c] = std::exp(x[c]);
        const auto s = spread_tree(n, GridFunction(grid_end, ne), rng, grid_end);
        cfg.mcmc.seed = rng();
        const auto fit = fit_ne(s, cfg);
        const std::size_t off = fit.trace.block_offset("log_ne");
        const std::size_t draws = fit.trace.draws_per_chain() * fit.trace.chains.size();
        for (std::size_t c = 0; c < cells; ++c) {
            std::size_t rank = 0;
            for (std::size_t ch = 0; ch < fit.trace.chains.size(); ++ch)
                for (std::size_t d = 0; d < fit.trace.draws_per_chain(); ++d) rank += fit.trace.at(ch, d, off + c) < x[c];
            ++hist[c][rank * bins / (draws + 1)];
        }
    }
    double min_p = 1.0;
    std::size_t worst = 0;
    for (std::size_t c = 0; c < cells; ++c) {
        const double p = stats::uniformity_pvalue(hist[c]);
        if (p < min_p) {
            min_p = p;
            worst = c;
        }
    }
    return {min_p > 0.01, std::to_string(reps) + " replicates, " + std::to_string(cells) + " cells: min chi-square p " +
                              fmt(min_p) + " (cell " + std::to_string(worst) + ")"};
}

// ---------------------------------------------------------------------------

Outcome prefsamp_gain() {
    const std::size_t reps = 20, cells = 20;
    std::vector<double> nev;
    const double end = 6.0;
    for (int c = 0; c < 120; ++c) {
        const double t = (c + 0.5) * end / 120;
        // boom and bust: a 50-fold peak 1.5 units back, where coalescences are scarce
        nev.push_back(1.0 + 49.0 * std::exp(-std::pow(t - 1.5, 2)));
    }
    const GridFunction ne(end, nev);
    const double window = 4.0;
    const double expected_samples = 150.0;
    const double b0 = std::log(expected_samples / ne.integral(0.0, window));
    std::vector<double> lam;
    for (double v : nev) lam.push_back(std::exp(b0) * v);
    const GridFunction rate(end, lam);

    SkylineConfig sky;
    sky.cells = cells;
    sky.mcmc = McmcConfig{40000, 10000, 10, 2, 0, 1};
    PrefsampConfig ps;
    ps.kind = SamplingModelKind::Parametric;
    ps.cells = cells;
    ps.mcmc = sky.mcmc;
    double width_ne = 0, width_ps = 0, log_ne = 0, log_ps = 0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < reps; ++r) {
        Rng rng(seed_for(5, r));
        auto samples = simulate_ipp(rate, {window}, rng);
        while (samples.size() < 2) samples = simulate_ipp(rate, {window}, rng);
        const auto s = summarize(simulate_coalescent(samples, ne, rng));
        sky.mcmc.seed = rng();
        ps.mcmc.seed = sky.mcmc.seed;
        const auto a = fit_ne(s, sky);
        const auto b = fit_prefsamp(s, ps);
        for (std::size_t c = 0; c < cells; ++c) {
            width_ne += a.ne.upper[c] - a.ne.lower[c];
            width_ps += b.ne.upper[c] - b.ne.lower[c];
            log_ne += std::log(a.ne.upper[c] / a.ne.lower[c]);
            log_ps += std::log(b.ne.upper[c] / b.ne.lower[c]);
            ++count;
        }
    }
    const double ratio = width_ne / width_ps;
    return {ratio >= 1.5, "mean 95% band width: no sampling model " + fmt(width_ne / count) + ", parametric " +
                              fmt(width_ps / count) + ", ratio " + fmt(ratio) + " (log-scale ratio " +
                              fmt(log_ne / log_ps) + ") over " + std::to_string(reps) + " paired replicates"};
}

// ---------------------------------------------------------------------------

Outcome epi_identities() {
    const auto tr = solve_sir({0.003, -0.0002}, 1.0, {1000.0, 30.0, 0.0}, 10.0, 0.005);
    const double offset = 9.0;
    const auto ne = ne_from_sir(tr, offset);
    double worst = 0;
    std::size_t checked = 0;
    for (std::size_t c = 0; c < ne.size(); ++c) {
        const double fwd = offset - (static_cast<double>(c) + 0.5) * tr.dt;
        for (int a = 2; a <= 12; ++a) {
            if (a > tr.state(fwd).i) continue;
            const double pairs = 0.5 * a * (a - 1.0);
            worst = std::max(worst, std::abs(coalescent_rate_epi(a, tr, fwd) * ne.values()[c] / pairs - 1.0));
            ++checked;
        }
    }
    const bool spot = effective_size(100.0, 50.0) == 100.0;
    const bool pass = worst <= 1e-12 && tr.conservation_error <= 1e-8 && spot && checked > 0;
    return {pass, "rate identity max rel err " + fmt(worst) + " over " + std::to_string(checked) +
                      " points, conservation drift " + fmt(tr.conservation_error) + ", Ne(I=100,f=50) = " +
                      fmt(effective_size(100.0, 50.0), 17)};
}

// ---------------------------------------------------------------------------

Outcome bdsp_invariants() {
    const BdspParams one{{0.0, 4.0}, {1.4}, {0.5}, {0.3}, {0.4}};
    const BdspParams split{{0.0, 1.3, 4.0}, {1.4, 1.4}, {0.5, 0.5}, {0.3, 0.3}, {0.0, 0.4}};
    const auto d1 = solve_dwelling(one), d2 = solve_dwelling(split);
    Rng rng(seed_for(7, 0));
    double worst_refine = 0;
    std::size_t trees = 0;
    while (trees < 200) {
        const auto sim = simulate_bdsp(one, rng);
        if (!sim.phylogeny) continue;
        ++trees;
        const auto& phy = *sim.phylogeny;
        // both parameterisations see the same forward-time tree
        const double stem = sim.stem;
        const double a = bdsp_logdensity(SampledBdTree::from_phylogeny(phy, stem, one), d1);
        const double b = bdsp_logdensity(SampledBdTree::from_phylogeny(phy, stem, split), d2);
        worst_refine = std::max(worst_refine, std::abs(a - b));
    }
    const BdspParams multi{{0.0, 0.7, 1.5, 3.0}, {2.0, 0.8, 1.5}, {0.3, 1.0, 0.4}, {0.1, 0.6, 0.2}, {0.3, 0.1, 0.5}};
    const auto dm = solve_dwelling(multi);
    double worst_q = 0, min_q = INFINITY;
    for (std::size_t i = 0; i < multi.intervals(); ++i) {
        worst_q = std::max(worst_q, std::abs(dm.q(i, multi.bounds[i + 1]) - 1.0));
        for (int k = 0; k <= 50; ++k) {
            const double t = multi.bounds[i] + (multi.bounds[i + 1] - multi.bounds[i]) * k / 50.0;
            min_q = std::min(min_q, dm.q(i, t));
        }
    }
    const bool pass = worst_refine < 1e-8 && worst_q <= 1e-12 && min_q > 0;
    return {pass, "inert breakpoint max change " + fmt(worst_refine) + " over " + std::to_string(trees) +
                      " simulated trees; max |q_i(u_i) - 1| " + fmt(worst_q) + ", min q " + fmt(min_q)};
}

// ---------------------------------------------------------------------------

std::vector<Phylogeny> five_taxon_topologies() {
    // rooted on A: every rooted binary tree on B, C, D, E hangs off A
    const std::vector<std::string> q{"B", "C", "D", "E"};
    std::vector<std::string> shapes;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) {
            std::vector<std::string> rest;
            for (std::size_t k = 0; k < 4; ++k)
                if (k != i && k != j) rest.push_back(q[k]);
            const std::string cherry = "(" + q[i] + ":1," + q[j] + ":1)";
            shapes.push_back("((" + cherry + ":1," + rest[0] + ":1):1," + rest[1] + ":1)");
            shapes.push_back("((" + cherry + ":1," + rest[1] + ":1):1," + rest[0] + ":1)");
            if (i == 0) shapes.push_back("(" + cherry + ":1,(" + rest[0] + ":1," + rest[1] + ":1):1)");
        }
    std::vector<Phylogeny> out;
    for (const auto& s : shapes) out.push_back(parse_newick("(A:1," + s + ":1);"));
    return out;
}

double mds_error(const std::vector<std::vector<double>>& pts, std::size_t dim) {
    const std::size_t k = pts.size();
    std::vector<std::vector<double>> d(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < pts[i].size(); ++c) s += std::pow(pts[i][c] - pts[j][c], 2);
            d[i][j] = std::sqrt(s);
        }
    const DistanceMatrix dm(d, std::vector<std::string>(k, "g"));
    const auto m = classical_mds(dm, dim);
    double worst = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < dim; ++c) s += std::pow(m.coords[i][c] - m.coords[j][c], 2);
            worst = std::max(worst, std::abs(std::sqrt(s) - d[i][j]));
        }
    return worst;
}

Outcome tree_metrics() {
    const auto t = five_taxon_topologies();
    std::vector<std::vector<int>> d(t.size(), std::vector<int>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t j = 0; j < t.size(); ++j) d[i][j] = rf_distance(t[i], t[j]);
    std::size_t violations = 0, triples = 0;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t j = 0; j < t.size(); ++j) {
            violations += d[i][j] != d[j][i] || (d[i][j] == 0) != (i == j);
            for (std::size_t k = 0; k < t.size(); ++k, ++triples) violations += d[i][j] > d[i][k] + d[k][j];
        }
    double worst = 0;
    worst = std::max(worst, mds_error({{0}, {2}, {4}}, 1));
    worst = std::max(worst, mds_error({{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}}, 2));
    Rng rng(seed_for(8, 0));
    std::normal_distribution<double> z;
    for (std::size_t dim : {1, 2, 3}) {
        std::vector<std::vector<double>> pts(9, std::vector<double>(dim));
        for (auto& p : pts)
            for (double& v : p) v = 3 * z(rng);
        worst = std::max(worst, mds_error(pts, dim));
    }
    const bool pass = t.size() == 15 && violations == 0 && worst <= 1e-8;
    return {pass, std::to_string(t.size()) + " topologies, " + std::to_string(triples) +
                      " triples, metric violations " + std::to_string(violations) + "; MDS max distance err " +
                      fmt(worst)};
}

// ---------------------------------------------------------------------------

int cli(std::vector<std::string> args, std::string* err_text = nullptr) {
    args.insert(args.begin(), "phylokit");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    if (err_text) *err_text = err.str();
    return code;
}

Outcome reproducibility(const fs::path& root) {
    fs::remove_all(root);
    fs::create_directories(root);
    const auto p = [&](const std::string& s) { return (root / s).string(); };
    std::string err;
    if (cli({"simulate-coalescent", "--ne", "16,8,4,2,1", "--grid-end", "5", "--samples", "80", "--spread", "1",
             "--seed", "5", "--out", p("sim")},
            &err) != 0)
        return {false, "simulate-coalescent failed: " + err};
    if (cli({"simulate-coalescent", "--ne", "16,8,4,2,1", "--grid-end", "5", "--alpha", "0.5", "--beta", "2",
             "--samples", "80", "--spread", "1", "--seed", "6", "--out", p("sim_voc")},
            &err) != 0)
        return {false, "simulate-coalescent failed: " + err};
    {
        std::ofstream(root / "rates.json") << R"({"u":[2,3],"lambda":[1.5,1],"mu":[0.5,0.5],"psi":[0.2,0.3],"rho":[0.1,0.2]})";
        std::ofstream cov(root / "cov.csv");
        cov << "cell,X1\n";
        for (int c = 0; c < 10; ++c) cov << c << ',' << 0.5 * std::sin(c) << '\n';
    }
    const std::string tree = p("sim/tree.nwk"), dates = p("sim/dates.csv");
    const std::vector<std::string> mc{"--iters", "6000", "--seed", "11"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), mc.begin(), mc.end());
        return a;
    };
    const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
        {"simulate-coalescent", {"simulate-coalescent", "--ne", "1,2", "--samples", "25", "--spread", "0.5", "--reps",
                                 "20", "--seed", "7"}},
        {"simulate-bdsp", {"simulate-bdsp", "--rates", p("rates.json"), "--reps", "200", "--seed", "8"}},
        {"fit-ne", with({"fit-ne", "--tree", tree, "--dates", dates, "--grid", "10"})},
        {"test-variant", with({"test-variant", "--tree0", tree, "--dates0", dates, "--tree1", p("sim_voc/tree.nwk"),
                               "--dates1", p("sim_voc/dates.csv"), "--grid", "10"})},
        {"fit-prefsamp parametric", with({"fit-prefsamp", "--tree", tree, "--dates", dates, "--grid", "10"})},
        {"fit-prefsamp epoch", with({"fit-prefsamp", "--tree", tree, "--dates", dates, "--grid", "10", "--model",
                                     "epoch", "--epochs", "0.5"})},
        {"fit-prefsamp adaptive",
         with({"fit-prefsamp", "--tree", tree, "--dates", dates, "--grid", "10", "--model", "adaptive"})},
        {"fit-prefsamp covariate", with({"fit-prefsamp", "--tree", tree, "--dates", dates, "--grid", "10", "--model",
                                         "covariate", "--covariates", p("cov.csv")})},
        {"fit-sir", with({"fit-sir", "--tree", tree, "--dates", dates, "--gamma", "1", "--s0", "1000",
                          "--origin-offset", "10", "--dt", "0.05"})},
    };
    std::size_t ok = 0, values = 0;
    double worst = 0;
    std::vector<std::string> failed;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto dir = root / ("run" + std::to_string(k)), again = root / ("replay" + std::to_string(k));
        auto args = runs[k].second;
        args.push_back("--out");
        args.push_back(dir.string());
        if (cli(args, &err) != 0) {
            failed.push_back(runs[k].first + " (run: " + err + ")");
            continue;
        }
        if (cli({"replay", "--manifest", (dir / "manifest.json").string(), "--out", again.string()}, &err) != 0) {
            failed.push_back(runs[k].first + " (replay: " + err + ")");
            continue;
        }
        const auto cmp = cli::compare_outputs(dir, again);
        values += cmp.values;
        worst = std::max(worst, cmp.max_abs_diff);
        if (cmp.problems.empty() && cmp.max_abs_diff <= 1e-10 && cmp.files > 0) {
            ++ok;
        } else {
            failed.push_back(runs[k].first);
        }
    }
    std::string detail = frac(ok, runs.size()) + " stochastic runs replayed from their manifests, " +
                         std::to_string(values) + " values compared, max abs diff " + fmt(worst);
    for (const auto& f : failed) detail += "; failed: " + f;
    return {ok == runs.size(), detail};
}

// ---------------------------------------------------------------------------

Outcome parser_corpus() {
    Rng rng(seed_for(10, 0));
    std::size_t violations = 0;
    const std::size_t corpus = 1000;
    for (std::size_t k = 0; k < corpus; ++k) {
        const int n = 2 + static_cast<int>(rng() % 60);
        std::vector<SamplingEvent> s;
        std::uniform_real_distribution<double> u(0.0, 2.0);
        const bool hetero = k % 2 == 0;
        for (int i = 0; i < n; ++i) s.push_back({hetero && i > 0 ? u(rng) : 0.0, 1});
        const auto p = simulate_coalescent(s, GridFunction::constant(1.0, 1, 0.2 + u(rng)), rng);
        try {
            const auto text = serialize_newick(p);
            const auto q = parse_newick(text);
            const auto sq = summarize(q);
            const bool good = equivalent(p, q, 1e-9) && validate(q).empty() && sq.well_formed() &&
                              sq.lineages().back() == 1 && serialize_newick(q) == text &&
                              q.tip_count() == static_cast<std::size_t>(n);
            violations += !good;
        } catch (const std::exception&) {
            ++violations;
        }
    }
    const std::vector<std::string> bases{"(('x y':1.5,B:2e-1)[c]:0.25,(C:1,D:1):1);", "((A:1,B:1):1,C:2);",
                                         "(((a:0.1,b:0.2):0.3,(c:0.4,d:0.5):0.6):0.7,e:1.4):0.2;"};
    const std::string alphabet = "();:,'[]AB0.1-e \"\t\n9E+";
    std::size_t graceful = 0, accepted = 0, bad = 0;
    const std::size_t fuzz = 20000;
    for (std::size_t trial = 0; trial < fuzz; ++trial) {
        std::string s = bases[trial % bases.size()];
        const int edits = 1 + static_cast<int>(rng() % 6);
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng() % (s.size() + 1);
            switch (rng() % 4) {
            case 0: s.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
            case 1: if (pos < s.size()) s.erase(pos, 1); break;
            case 2: s = s.substr(0, pos); break;
            default: if (pos < s.size()) s[pos] = alphabet[rng() % alphabet.size()];
            }
        }
        try {
            const auto p = parse_newick(s);
            (void)validate(p);
            (void)summarize(p);
            (void)serialize_newick(p);
            ++accepted;
        } catch (const Error&) {
            ++graceful;
        } catch (...) {
            ++bad;
        }
    }
    return {violations == 0 && bad == 0,
            std::to_string(corpus) + " random trees round-tripped, " + std::to_string(violations) +
                " invariant violations; fuzz corpus " + std::to_string(fuzz) + ": " + std::to_string(graceful) +
                " graceful errors, " + std::to_string(accepted) + " accepted, " + std::to_string(bad) +
                " unexpected exceptions"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria 1-10"};
    std::vector<int> only;
    std::string scratch = (fs::temp_directory_path() / "phylokit_acceptance").string();
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
    app.add_option("--seed", base_seed, "base seed")->capture_default_str();
    app.add_option("--scratch", scratch, "directory for the reproducibility runs")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"likelihood oracles", likelihood_oracles},
        {"simulator/density consistency", simulator_consistency},
        {"variant-test calibration", variant_calibration},
        {"skyline simulation-based calibration", skyline_sbc},
        {"preferential-sampling information gain", prefsamp_gain},
        {"CP-EPI identities", epi_identities},
        {"BDSP structural invariants", bdsp_invariants},
        {"tree metrics", tree_metrics},
        {"reproducibility", [&] { return reproducibility(scratch); }},
        {"parser", parser_corpus},
    };
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[k].first << " | "
                  << o.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
