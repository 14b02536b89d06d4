#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "phylokit/coalescent.hpp"
#include "phylokit/gmrf.hpp"
#include "phylokit/mcmc.hpp"

namespace phylokit {

struct SkylineConfig {
    std::size_t cells = 50;
    std::optional<double> grid_end;  // default: root time
    GmrfPrior prior;
    McmcConfig mcmc;
};

struct SkylineFit {
    Trace trace;
    FieldSummary ne;  // per-cell quantiles of exp(log_ne)
    double grid_end = 0.0;
    std::vector<double> cell_left;
};

// Blocks: log_ne (cells, real) and tau (positive, exact Gibbs update).
ModelSpec skyline_model(const CoalescentGridStats& stats, const GmrfPrior& prior);
// log Ne initialised at the constant-Ne maximum likelihood value, tau at 1.
std::vector<double> skyline_init(const CoalescentGridStats& stats);

SkylineFit fit_ne(const CoalescentSummary& s, const SkylineConfig& config);

std::vector<double> cell_left_edges(double end, std::size_t cells);

}  // namespace phylokit
