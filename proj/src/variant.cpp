#include "phylokit/variant.hpp"

#include <algorithm>
#include <cmath>

#include "phylokit/error.hpp"
#include "phylokit/skyline.hpp"
#include "phylokit/stats.hpp"

namespace phylokit {

ModelSpec variant_model(const CoalescentGridStats& baseline, const CoalescentGridStats& variant,
                        const VariantPriors& priors) {
    const std::size_t cells = baseline.exposure.size();
    if (cells < 2) throw Error("variant test: grid needs at least 2 cells");
    if (variant.exposure.size() != cells) throw Error("variant test: trees must share one grid");
    ModelSpec m;
    ParameterBlock field{"log_ne", cells, Support::Real, {}, {}};
    ParameterBlock tau{"tau", 1, Support::Positive, {}, {}};
    const GmrfPrior fp = priors.field;
    tau.exact = [cells, fp](std::span<double> x, Rng& rng) {
        x[cells] = gibbs_tau(x.first(cells), fp.shape, fp.rate, rng);
    };
    ParameterBlock growth{"growth", 2, Support::Real, {}, {"log_alpha", "beta"}};
    m.blocks = {field, tau, growth};
    m.log_posterior = [baseline, variant, priors, cells](std::span<const double> x) {
        auto log_ne = x.first(cells);
        const double log_alpha = x[cells + 1];
        const double beta = x[cells + 2];
        double lp = coalescent_loglik(baseline, log_ne);
        // variant log-EPS = log_alpha + beta * log_ne, cell by cell
        for (std::size_t c = 0; c < cells; ++c) {
            const double v = log_alpha + beta * log_ne[c];
            if (variant.exposure[c] > 0) lp -= variant.exposure[c] * std::exp(-v);
            lp -= variant.coalescences[c] * v;
        }
        lp += gmrf_log_prior(log_ne, x[cells], priors.field);
        lp += stats::normal_logpdf(log_alpha, 0.0, priors.sigma_log_alpha);
        lp += stats::normal_logpdf(beta, 0.0, priors.sigma_beta);
        return lp;
    };
    return m;
}

namespace {

// log(exposure / events) pooled over a +-2 cell window; half an event keeps empty windows finite.
std::vector<double> pooled_log_ne(const CoalescentGridStats& s, std::vector<double>& weight) {
    const std::size_t n = s.exposure.size();
    std::vector<double> out(n);
    weight.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t lo = c >= 2 ? c - 2 : 0, hi = std::min(n, c + 3);
        double e = 0.0, k = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
            e += s.exposure[j];
            k += s.coalescences[j];
        }
        out[c] = e > 0 ? std::log(e / (k + 0.5)) : 0.0;
        weight[c] = e > 0 ? k : 0.0;
    }
    return out;
}

}  // namespace

std::vector<double> variant_init(const CoalescentGridStats& baseline, const CoalescentGridStats& variant) {
    std::vector<double> wb, wv;
    auto init = pooled_log_ne(baseline, wb);
    const auto v = pooled_log_ne(variant, wv);
    double sw = 0.0, sx = 0.0, sy = 0.0;
    std::vector<double> w(init.size());
    for (std::size_t c = 0; c < init.size(); ++c) {
        w[c] = std::min(wb[c], wv[c]);
        sw += w[c];
        sx += w[c] * init[c];
        sy += w[c] * v[c];
    }
    double log_alpha = 0.0, beta = 1.0;
    if (sw > 0) {
        const double mx = sx / sw, my = sy / sw;
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t c = 0; c < init.size(); ++c) {
            sxx += w[c] * (init[c] - mx) * (init[c] - mx);
            sxy += w[c] * (init[c] - mx) * (v[c] - my);
        }
        if (sxx > 1e-8 * sw) beta = sxy / sxx;
        log_alpha = my - beta * mx;
    }
    init.push_back(1.0);  // tau
    init.push_back(log_alpha);
    init.push_back(beta);
    return init;
}

std::pair<CoalescentSummary, CoalescentSummary> align_summaries(const Phylogeny& baseline, const Phylogeny& variant) {
    const auto da = baseline.youngest_date(), db = variant.youngest_date();
    if (da.has_value() != db.has_value())
        throw Error("either both trees or neither must carry calendar dates");
    double sa, sb;
    if (da) {
        const double newest = std::max(*da, *db);
        sa = newest - *da;
        sb = newest - *db;
    } else {
        const double first = std::min(baseline.axis_offset(), variant.axis_offset());
        sa = baseline.axis_offset() - first;
        sb = variant.axis_offset() - first;
    }
    return {summarize(baseline, sa), summarize(variant, sb)};
}

Trace fit_variant(const CoalescentSummary& baseline, const CoalescentSummary& variant, const VariantConfig& config) {
    if (config.cells < 2) throw Error("variant test: grid needs at least 2 cells");
    const double end = config.grid_end.value_or(std::max(baseline.root_time(), variant.root_time()));
    auto s0 = grid_statistics(baseline, end, config.cells);
    auto s1 = grid_statistics(variant, end, config.cells);
    return run_mcmc(variant_model(s0, s1, config.priors), config.mcmc, variant_init(s0, s1));
}

ScalarSummary summarize_scalar(std::vector<double> draws) {
    if (draws.empty()) throw Error("summary of empty draws");
    const double mean = stats::mean(draws);
    std::sort(draws.begin(), draws.end());
    return {mean, stats::quantile_sorted(draws, 0.025), stats::quantile_sorted(draws, 0.5),
            stats::quantile_sorted(draws, 0.975)};
}

BetaTest test_beta(const Trace& trace, double threshold) {
    auto idx = trace.column_index("beta");
    if (!idx) throw Error("trace has no 'beta' column");
    auto draws = trace.coordinate(*idx);
    if (draws.empty()) throw Error("trace has no draws");
    BetaTest t;
    t.threshold = threshold;
    std::size_t above = 0;
    for (double b : draws)
        if (b > threshold) ++above;
    t.p_greater = static_cast<double>(above) / static_cast<double>(draws.size());
    auto s = summarize_scalar(std::move(draws));
    t.mean = s.mean;
    t.lower = s.lower;
    t.upper = s.upper;
    return t;
}

VariantSummary summarize_variant(const Trace& trace) {
    const std::size_t off = trace.block_offset("log_ne");
    const std::size_t cells = trace.block_dim("log_ne");
    auto ia = trace.column_index("log_alpha");
    auto ib = trace.column_index("beta");
    if (!ia || !ib) throw Error("trace lacks log_alpha/beta columns");
    VariantSummary s;
    s.baseline = summarize_field(trace, "log_ne", FieldTransform::Exp);
    s.variant = summarize_draws(trace, cells, [&](std::size_t c, std::size_t d, std::span<double> out) {
        const double la = trace.at(c, d, *ia), b = trace.at(c, d, *ib);
        for (std::size_t i = 0; i < cells; ++i) out[i] = std::exp(la + b * trace.at(c, d, off + i));
    });
    s.log_alpha = summarize_scalar(trace.coordinate(*ia));
    s.beta = summarize_scalar(trace.coordinate(*ib));
    return s;
}

}  // namespace phylokit
