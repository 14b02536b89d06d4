#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "phylokit/coalescent.hpp"
#include "phylokit/mcmc.hpp"

namespace phylokit {

// Straight-line per-capita transmission rate beta(t) = intercept + slope * t in
// forward time from the epidemic origin, floored at 1e-12.
struct TransmissionLine {
    double intercept = 0.0;
    double slope = 0.0;
    double operator()(double t) const;
};

struct SirState {
    double s, i, r;
};

struct SirTrajectory {
    TransmissionLine beta;
    double gamma = 0.0;
    double dt = 0.0;
    std::vector<double> time;  // forward, time[k] = k * dt
    std::vector<double> S, I, R;
    double conservation_error = 0.0;  // max relative drift of S + I + R

    double horizon() const { return time.back(); }
    double incidence(std::size_t k) const { return beta(time[k]) * S[k] * I[k]; }
    // S, I, R linearly interpolated between grid points
    SirState state(double t) const;
    double incidence_at(double t) const;
};

// Fixed-step RK4. dt defaults to horizon / 2000. Throws if the trajectory goes
// negative or drifts off S + I + R by more than 1e-8 relative.
SirTrajectory solve_sir(TransmissionLine beta, double gamma, SirState initial, double horizon,
                        std::optional<double> dt = {});

// Ne = I^2 / (2 f)
double effective_size(double infected, double incidence);
// Ne at forward time t; throws naming t when f = 0 there.
double sir_ne_at(const SirTrajectory& traj, double t);

// Ne on the backward axis of a tree whose most recent sample sits at forward
// time origin_offset. Cells have width dt, start at the most recent sample and
// stop at the epidemic origin; each takes the trajectory value at its midpoint.
GridFunction ne_from_sir(const SirTrajectory& traj, double origin_offset);
std::size_t sir_grid_cells(double origin_offset, double dt);

enum class EpiRateForm { Approximate, Exact };

// Pairwise coalescence rate among A lineages at forward time t:
// approximate C(A) * 2 f / I^2, exact f * C(A) / C(I). Throws if A > I(t).
double coalescent_rate_epi(int lineages, const SirTrajectory& traj, double t,
                           EpiRateForm form = EpiRateForm::Approximate);

struct LogNormalPrior {
    double log_mean = 0.0;
    double log_sd = 1.0;
};

struct SirPriors {
    std::optional<LogNormalPrior> intercept;  // default: centred on R0 = 2
    std::optional<double> slope_sd;           // default: prior intercept median / origin offset
    LogNormalPrior i0{0.0, 2.0};
    LogNormalPrior gamma{0.0, 1.0};           // used only when gamma is free
    LogNormalPrior s0{std::log(1000.0), 1.0}; // used only when S0 is free
};

struct SirFitConfig {
    std::optional<double> gamma;  // at most one of gamma, s0 may be left free
    std::optional<double> s0;
    double origin_offset = 0.0;  // most recent sample, forward time from the origin
    std::optional<double> dt;    // default origin_offset / 2000
    bool fit_slope = true;
    std::optional<double> fixed_i0;
    bool use_likelihood = true;
    SirPriors priors;
    McmcConfig mcmc;
};

struct SirFit {
    Trace trace;
    FieldSummary ne;
    std::vector<double> cell_left;
    double grid_end = 0.0;
    std::size_t invalid_evaluations = 0;  // trajectories with undefined Ne
};

// Throws Error when gamma and S0 are both free or the tree predates the origin.
SirFit fit_sir(const CoalescentSummary& s, const SirFitConfig& config);

}  // namespace phylokit
