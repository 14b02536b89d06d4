#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "phylokit/random.hpp"
#include "phylokit/tree.hpp"

namespace phylokit {

// Piecewise-constant positive function on B equal half-open cells covering
// [0, end); the last cell extends to infinity. Used for Ne(t), lambda(t), beta(t).
class GridFunction {
public:
    GridFunction(double end, std::vector<double> values);
    static GridFunction constant(double end, std::size_t cells, double value);

    double end() const { return end_; }
    std::size_t size() const { return values_.size(); }
    double width() const { return end_ / static_cast<double>(values_.size()); }
    double left(std::size_t cell) const {
        return end_ * static_cast<double>(cell) / static_cast<double>(values_.size());
    }
    std::span<const double> values() const { return values_; }

    std::size_t cell_index(double t) const;
    double operator()(double t) const { return values_[cell_index(t)]; }

    // exact integrals of f and 1/f over [a, b]
    double integral(double a, double b) const;
    double reciprocal_integral(double a, double b) const;

private:
    double end_;
    std::vector<double> values_;
};

// Per-cell sufficient statistics of a summary on a regular grid: the exposure
// integral of C(t) over each cell and the number of coalescences per cell.
// With these, the log-likelihood for any per-cell Ne is
//   -sum_c exposure_c / Ne_c - sum_c coalescences_c * log Ne_c.
struct CoalescentGridStats {
    double end = 0.0;
    std::vector<double> exposure;
    std::vector<double> coalescences;
};

CoalescentGridStats grid_statistics(const CoalescentSummary& s, double end, std::size_t cells);

// Log-density of the tree given Ne; the integral is split at every event and
// cell boundary, so it is exact. Throws if A < 2 at a coalescence.
double coalescent_loglik(const CoalescentSummary& s, const GridFunction& ne);
double coalescent_loglik(const CoalescentGridStats& stats, std::span<const double> log_ne);
// Density of the coalescence times alone (topology summed out): the genealogy
// density plus log C just before each coalescence.
double coalescent_times_loglik(const CoalescentSummary& s, const GridFunction& ne);

// Simulates a heterochronous coalescent tree. Tips are labelled t1..tn in
// sampling order; tip times keep their position on the input axis through
// Phylogeny::axis_offset().
Phylogeny simulate_coalescent(std::span<const SamplingEvent> samples, const GridFunction& ne, Rng& rng);

// E[t2] for two contemporaneous samples at time 0, by adaptive quadrature of
// the survival function. Returns +inf if the integral does not converge.
double pairwise_tmrca_expectation(const GridFunction& ne);

}  // namespace phylokit
