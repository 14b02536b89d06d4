#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "phylokit/coalescent.hpp"
#include "phylokit/gmrf.hpp"
#include "phylokit/mcmc.hpp"

namespace phylokit {

// Joint model for a baseline tree (EPS Ne) and a variant tree (EPS alpha * Ne^beta).
struct VariantPriors {
    GmrfPrior field;
    double sigma_log_alpha = 2.0;
    double sigma_beta = 2.0;
};

struct VariantConfig {
    std::size_t cells = 50;
    std::optional<double> grid_end;  // default: max of both root times
    VariantPriors priors;
    McmcConfig mcmc;
};

// Blocks: log_ne (cells), tau (Gibbs), growth = (log_alpha, beta) as one 2-D block.
ModelSpec variant_model(const CoalescentGridStats& baseline, const CoalescentGridStats& variant,
                        const VariantPriors& priors);
// Starting point: both fields from locally pooled per-cell estimates, then
// (log_alpha, beta) by weighted least squares of variant on baseline. A flat
// start lets chains drift into a sign-flipped local mode.
std::vector<double> variant_init(const CoalescentGridStats& baseline, const CoalescentGridStats& variant);

// Places both trees on one backwards-time axis whose t = 0 is the most recent
// sample over the two: by calendar date of the youngest tip when both trees
// carry dates, otherwise by their numeric axis offsets.
std::pair<CoalescentSummary, CoalescentSummary> align_summaries(const Phylogeny& baseline, const Phylogeny& variant);

// Both summaries must already sit on the same backwards-time axis.
Trace fit_variant(const CoalescentSummary& baseline, const CoalescentSummary& variant, const VariantConfig& config);

struct BetaTest {
    double threshold = 1.0;
    double p_greater = 0.0;  // posterior P(beta > threshold)
    double lower = 0.0;      // 2.5%
    double upper = 0.0;      // 97.5%
    double mean = 0.0;
};

BetaTest test_beta(const Trace& trace, double threshold = 1.0);

struct ScalarSummary {
    double mean, lower, median, upper;
};

struct VariantSummary {
    FieldSummary baseline;  // exp(log_ne)
    FieldSummary variant;   // exp(log_alpha + beta log_ne)
    ScalarSummary log_alpha;
    ScalarSummary beta;
};

VariantSummary summarize_variant(const Trace& trace);
ScalarSummary summarize_scalar(std::vector<double> draws);

}  // namespace phylokit
