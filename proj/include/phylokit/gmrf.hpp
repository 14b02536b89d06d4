#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "phylokit/error.hpp"
#include "phylokit/random.hpp"

namespace phylokit {

// First-order intrinsic GMRF on a grid field with precision tau ~ Gamma(shape, rate).
// anchor_sd, when set, adds a Normal(0, anchor_sd^2) prior on the first cell and
// makes the prior proper (needed for prior-predictive simulation and calibration).
struct GmrfPrior {
    double shape = 0.01;
    double rate = 0.01;
    std::optional<double> anchor_sd;
};

double sum_squared_increments(std::span<const double> x);

// ((B-1)/2) log tau - (tau/2) sum (x[i+1]-x[i])^2; the -(B-1)/2 log(2 pi)
// constant is omitted. Throws if B < 2 or tau <= 0.
double gmrf_logdensity(std::span<const double> x, double tau);

// log Gamma(tau; shape, rate) including its normalizing constant
double gamma_logdensity(double tau, double shape, double rate);

// Field density + anchor (if any) + Gamma hyperprior on tau.
double gmrf_log_prior(std::span<const double> x, double tau, const GmrfPrior& prior);

// Exact full conditional: tau | x ~ Gamma(shape + (B-1)/2, rate + SS/2).
double gibbs_tau(std::span<const double> x, double shape, double rate, Rng& rng);

// x[0] ~ Normal(0, anchor_sd^2), increments i.i.d. Normal(0, 1/tau).
std::vector<double> sample_field(double tau, std::size_t cells, double anchor_sd, Rng& rng);

}  // namespace phylokit
