#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phylokit/random.hpp"
#include "phylokit/tree.hpp"

namespace phylokit {

// Piecewise-constant birth-death-sampling rates in forward time. Interval i
// (0-based) is [bounds[i], bounds[i+1]) with bounds[0] = 0 and bounds[p] the
// present; rho[i] is the bulk-sampling probability at bounds[i+1].
struct BdspParams {
    std::vector<double> bounds;  // p + 1 values, bounds[0] = 0
    std::vector<double> lambda, mu, psi, rho;

    std::size_t intervals() const { return lambda.size(); }
    double present() const { return bounds.back(); }
    // i with t in [bounds[i], bounds[i+1]); the present maps to the last interval
    std::size_t interval_of(double t) const;
    void check() const;  // throws on inadmissible parameters
};

// JSON object with arrays u, lambda, mu, psi, rho. `u` lists either the p
// breakpoints u_1..u_p or all p+1 values starting at 0.
BdspParams bdsp_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BdspParams& p);

// Per-interval solutions of the single-type master equations, evaluated on
// demand by adaptive Dormand-Prince integration backwards from the interval's
// right end, where q = 1.
class DwellingSolution {
public:
    DwellingSolution(BdspParams params, double tol);

    const BdspParams& params() const { return params_; }
    double tolerance() const { return tol_; }
    // p0 at the right end of interval i (after the (1 - rho) boundary factor)
    double p0_end(std::size_t i) const { return p0_end_[i]; }

    // (p0, log q) of interval i at time t in [bounds[i], bounds[i+1]]
    std::pair<double, double> evaluate(std::size_t i, double t) const;
    double p0(std::size_t i, double t) const { return evaluate(i, t).first; }
    double log_q(std::size_t i, double t) const { return evaluate(i, t).second; }
    double q(std::size_t i, double t) const;

private:
    BdspParams params_;
    double tol_;
    std::vector<double> p0_end_;
};

DwellingSolution solve_dwelling(const BdspParams& params, double tol = 1e-10);

enum class BdEnd { Branching, Serial, Bulk };

// One edge of a sampled tree in forward time; every node has one incoming edge,
// the first starting at the origin (t = 0).
struct BdEdge {
    double start;
    double end;
    BdEnd kind;
    std::size_t bulk_interval = 0;  // for Bulk: the interval whose right end samples it
};

class SampledBdTree {
public:
    // Validates: one edge per node, bulk tips sit on breakpoints (within 1e-9),
    // times inside [0, present].
    SampledBdTree(std::vector<BdEdge> edges, const BdspParams& params);

    // Forward times from a timed tree whose root sits `stem` after the origin.
    // Tips within 1e-9 of a breakpoint with rho > 0 are bulk samples unless
    // `claims` (per tip, in Phylogeny::tips() order) says otherwise.
    static SampledBdTree from_phylogeny(const Phylogeny& p, double stem, const BdspParams& params,
                                        const std::vector<BdEnd>* claims = nullptr);

    const std::vector<BdEdge>& edges() const { return edges_; }
    const std::vector<double>& branching_times() const { return branching_; }
    const std::vector<double>& serial_times() const { return serial_; }
    const std::vector<int>& bulk_counts() const { return bulk_; }
    // n_i: lineages just before bounds[i+1], excluding those bulk-sampled there (i < p-1)
    const std::vector<int>& lineages_at_breakpoints() const { return crossing_; }
    std::size_t tip_count() const { return serial_.size() + static_cast<std::size_t>(total_bulk()); }

private:
    int total_bulk() const;

    std::vector<BdEdge> edges_;
    std::vector<double> branching_, serial_;
    std::vector<int> bulk_, crossing_;
};

// Unconditioned log-density of the sampled tree; -inf when a bulk sample sits
// at a breakpoint with rho = 0 (or lineages cross a breakpoint with rho = 1).
double bdsp_logdensity(const SampledBdTree& tree, const DwellingSolution& d);

enum class LineageFate { Birth, Death, Serial, Bulk, Unsampled };

struct FullLineage {
    double start;
    double end;
    int parent;  // -1 for the initial lineage
    LineageFate fate;
    std::size_t bulk_interval = 0;
};

struct BdspSimulation {
    std::vector<FullLineage> lineages;  // full process record, parents before children
    std::size_t samples = 0;
    std::optional<SampledBdTree> tree;  // absent when nothing was sampled
    std::optional<Phylogeny> phylogeny; // present when >= 2 tips were sampled
    double stem = 0.0;                  // origin to the first retained node
};

class EventLimitExceeded : public Error {
public:
    using Error::Error;
};

// Exact forward simulation from one lineage at t = 0 to the present.
BdspSimulation simulate_bdsp(const BdspParams& params, Rng& rng, std::size_t max_events = 1000000);

}  // namespace phylokit
