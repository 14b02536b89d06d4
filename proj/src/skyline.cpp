#include "phylokit/skyline.hpp"

#include <cmath>
#include <numeric>

#include "phylokit/error.hpp"

namespace phylokit {

std::vector<double> cell_left_edges(double end, std::size_t cells) {
    GridFunction g = GridFunction::constant(end, cells, 1.0);
    std::vector<double> out;
    for (std::size_t i = 0; i < cells; ++i) out.push_back(g.left(i));
    return out;
}

ModelSpec skyline_model(const CoalescentGridStats& stats, const GmrfPrior& prior) {
    const std::size_t cells = stats.exposure.size();
    if (cells < 2) throw Error("skyline: grid needs at least 2 cells");
    ModelSpec m;
    ParameterBlock field{"log_ne", cells, Support::Real, {}, {}};
    ParameterBlock tau{"tau", 1, Support::Positive, {}, {}};
    tau.exact = [cells, prior](std::span<double> x, Rng& rng) {
        x[cells] = gibbs_tau(x.first(cells), prior.shape, prior.rate, rng);
    };
    m.blocks = {field, tau};
    m.log_posterior = [stats, prior, cells](std::span<const double> x) {
        auto log_ne = x.first(cells);
        return coalescent_loglik(stats, log_ne) + gmrf_log_prior(log_ne, x[cells], prior);
    };
    return m;
}

std::vector<double> skyline_init(const CoalescentGridStats& stats) {
    const double exposure = std::accumulate(stats.exposure.begin(), stats.exposure.end(), 0.0);
    const double events = std::accumulate(stats.coalescences.begin(), stats.coalescences.end(), 0.0);
    const double ne = events > 0 && exposure > 0 ? exposure / events : 1.0;
    std::vector<double> init(stats.exposure.size(), std::log(ne));
    init.push_back(1.0);
    return init;
}

SkylineFit fit_ne(const CoalescentSummary& s, const SkylineConfig& config) {
    if (config.cells < 2) throw Error("skyline: grid needs at least 2 cells");
    const double end = config.grid_end.value_or(s.root_time());
    auto stats = grid_statistics(s, end, config.cells);
    auto model = skyline_model(stats, config.prior);
    SkylineFit fit;
    fit.trace = run_mcmc(model, config.mcmc, skyline_init(stats));
    fit.ne = summarize_field(fit.trace, "log_ne", FieldTransform::Exp);
    fit.grid_end = end;
    fit.cell_left = cell_left_edges(end, config.cells);
    return fit;
}

}  // namespace phylokit
