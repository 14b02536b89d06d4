#include "phylokit/gmrf.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "phylokit/error.hpp"

namespace phylokit {

double sum_squared_increments(std::span<const double> x) {
    double ss = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        double d = x[i] - x[i - 1];
        ss += d * d;
    }
    return ss;
}

double gmrf_logdensity(std::span<const double> x, double tau) {
    if (x.size() < 2) throw Error("gmrf: field dimension must be at least 2");
    if (!(tau > 0)) throw Error("gmrf: precision must be positive");
    const double rank = static_cast<double>(x.size() - 1);
    return 0.5 * rank * std::log(tau) - 0.5 * tau * sum_squared_increments(x);
}

double gamma_logdensity(double tau, double shape, double rate) {
    if (!(tau > 0)) return -INFINITY;
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(tau) - rate * tau;
}

double gmrf_log_prior(std::span<const double> x, double tau, const GmrfPrior& prior) {
    double lp = gmrf_logdensity(x, tau) + gamma_logdensity(tau, prior.shape, prior.rate);
    if (prior.anchor_sd) {
        const double s = *prior.anchor_sd;
        lp += -0.5 * (x[0] / s) * (x[0] / s) - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
}

double gibbs_tau(std::span<const double> x, double shape, double rate, Rng& rng) {
    if (x.size() < 2) throw Error("gmrf: field dimension must be at least 2");
    const double post_shape = shape + 0.5 * static_cast<double>(x.size() - 1);
    const double post_rate = rate + 0.5 * sum_squared_increments(x);
    std::gamma_distribution<double> g(post_shape, 1.0 / post_rate);
    return g(rng);
}

std::vector<double> sample_field(double tau, std::size_t cells, double anchor_sd, Rng& rng) {
    if (!(tau > 0) || !(anchor_sd > 0)) throw Error("gmrf: tau and anchor sd must be positive");
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> x(cells);
    if (cells == 0) return x;
    x[0] = anchor_sd * z(rng);
    const double step = 1.0 / std::sqrt(tau);
    for (std::size_t i = 1; i < cells; ++i) x[i] = x[i - 1] + step * z(rng);
    return x;
}

}  // namespace phylokit
