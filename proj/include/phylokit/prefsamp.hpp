#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phylokit/coalescent.hpp"
#include "phylokit/gmrf.hpp"
#include "phylokit/mcmc.hpp"

namespace phylokit {

enum class SamplingModelKind { Parametric, Epoch, Adaptive, Covariate };

SamplingModelKind parse_sampling_model_kind(const std::string& name);
std::string to_string(SamplingModelKind kind);

// Sampling-time intensity lambda(t) as a function of Ne(t):
//   parametric  exp(beta0) Ne^beta1
//   epoch       c_j Ne                     (c_j constant within epoch j)
//   adaptive    beta(t) Ne                 (log beta(t) a grid field)
//   covariate   exp(beta0) Ne^beta1 + sum_k coef_k X_k(t)
struct SamplingModel {
    SamplingModelKind kind = SamplingModelKind::Parametric;
    double beta0 = 0.0;
    double beta1 = 1.0;
    std::vector<double> epoch_bounds;  // interior change-points, ascending
    std::vector<double> epoch_coef;    // one per epoch
    std::vector<double> log_beta;      // per cell
    std::vector<std::vector<double>> covariates;  // [covariate][cell]
    std::vector<double> covariate_coef;
};

struct SamplingRate {
    GridFunction rate;
    std::size_t clipped_cells = 0;  // covariate model: cells raised to the 1e-12 floor
};

inline constexpr double kRateFloor = 1e-12;

SamplingRate sampling_rate(const SamplingModel& model, const GridFunction& ne);

// Epoch index of each cell, by the cell midpoint.
std::vector<std::size_t> epoch_of_cells(std::span<const double> bounds, double end, std::size_t cells);

struct SamplingWindow {
    double end;  // samples could be collected on [0, end]
};

// sum_i count_i log lambda(y_i) - integral_0^end lambda(t) dt; throws if a
// sample lies outside the window.
double ipp_loglik(std::span<const SamplingEvent> samples, SamplingWindow window, const GridFunction& rate);

// Draws sampling times from the process on [0, window.end], one event per
// sample, ascending in time.
std::vector<SamplingEvent> simulate_ipp(const GridFunction& rate, SamplingWindow window, Rng& rng);

// Per-cell sample counts and window overlap lengths on a regular grid.
struct IppGridStats {
    std::vector<double> counts;
    std::vector<double> window_length;
};

IppGridStats ipp_grid_statistics(std::span<const SamplingEvent> samples, SamplingWindow window, double end,
                                 std::size_t cells);
double ipp_loglik(const IppGridStats& stats, std::span<const double> log_rate);

struct SamplingPriors {
    double beta0_sd = 2.0;       // Normal(0, sd^2)
    double beta1_scale = 1.0;    // half-Normal(scale)
    double epoch_log_sd = 2.0;   // lognormal(0, sd^2) per epoch coefficient
    double coef_sd = 2.0;        // Normal(0, sd^2) per covariate coefficient
    GmrfPrior beta_field;        // adaptive model: GMRF on log beta(t)
};

struct PrefsampConfig {
    SamplingModelKind kind = SamplingModelKind::Parametric;
    std::size_t cells = 50;
    std::optional<double> grid_end;    // default: root time
    std::optional<double> window_end;  // default: oldest sampling time
    GmrfPrior prior;
    SamplingPriors sampling;
    std::vector<double> epoch_bounds;
    std::vector<std::vector<double>> covariates;  // [covariate][cell]
    std::optional<double> fixed_beta1;            // parametric: hold beta1 fixed
    McmcConfig mcmc;
};

struct PrefsampModel {
    ModelSpec spec;
    std::vector<double> init;
    std::shared_ptr<std::atomic<std::size_t>> clipped;  // covariate-model floor hits
};

PrefsampModel prefsamp_model(const CoalescentGridStats& coalescent, const IppGridStats& sampling,
                             const PrefsampConfig& config);

struct PrefsampFit {
    Trace trace;
    FieldSummary ne;
    double grid_end = 0.0;
    double window_end = 0.0;
    std::vector<double> cell_left;
    std::size_t clipped_evaluations = 0;
};

PrefsampFit fit_prefsamp(const CoalescentSummary& s, const PrefsampConfig& config);

}  // namespace phylokit
