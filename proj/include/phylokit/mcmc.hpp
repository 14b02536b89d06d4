#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "phylokit/error.hpp"
#include "phylokit/random.hpp"

namespace phylokit {

enum class Support { Real, Positive };

// Replaces the block's values inside the full natural-space state with an exact
// draw from its full conditional.
using ExactUpdate = std::function<void(std::span<double> state, Rng& rng)>;

struct ParameterBlock {
    std::string name;
    std::size_t dim = 1;
    Support support = Support::Real;
    ExactUpdate exact;                          // optional
    std::vector<std::string> coordinate_names;  // optional; defaults to name[i] / name
};

// Log-posterior on the natural parameter space. The sampler works on the
// transformed space (log for positive blocks) and adds the Jacobian itself.
using LogDensity = std::function<double(std::span<const double>)>;
using Gradient = std::function<void(std::span<const double>, std::span<double>)>;

struct ModelSpec {
    std::vector<ParameterBlock> blocks;
    LogDensity log_posterior;
    Gradient gradient;  // optional; not used by the random-walk kernels

    std::size_t dimension() const;
    std::size_t offset(std::string_view block) const;
    const ParameterBlock& block(std::string_view name) const;
    std::vector<std::string> column_names() const;
};

struct McmcConfig {
    std::size_t iterations = 20000;  // including burn-in
    std::size_t burn_in = 10000;
    std::size_t thin = 10;
    std::size_t chains = 2;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
};

nlohmann::json to_json(const McmcConfig& c);

struct ChainTrace {
    std::uint64_t seed = 0;
    std::vector<double> draws;          // row-major: recorded draw x dimension
    std::vector<double> log_posterior;  // one per recorded draw
    std::vector<double> acceptance;     // post-burn-in acceptance rate per block
    std::vector<double> proposal_scale; // frozen scale per block
};

struct Trace {
    std::vector<std::string> columns;
    std::vector<std::string> block_names;
    std::vector<std::size_t> block_offsets;
    std::vector<std::size_t> block_dims;
    McmcConfig config;
    std::vector<ChainTrace> chains;

    std::size_t dimension() const { return columns.size(); }
    std::size_t draws_per_chain() const;
    double at(std::size_t chain, std::size_t draw, std::size_t coord) const {
        return chains[chain].draws[draw * dimension() + coord];
    }
    std::optional<std::size_t> column_index(std::string_view name) const;
    std::size_t block_offset(std::string_view name) const;  // throws on unknown block
    std::size_t block_dim(std::string_view name) const;
    std::vector<double> coordinate(std::size_t coord) const;  // pooled across chains
    std::vector<std::vector<double>> coordinate_by_chain(std::size_t coord) const;
};

// Builds a trace from raw per-chain draws (rows x columns); for diagnostics on
// externally produced samples.
Trace make_trace(std::vector<std::string> columns, std::vector<std::vector<std::vector<double>>> chains);

// Blockwise MCMC. Each sweep visits every block in order: blocks with an exact
// conditional are drawn from it, the rest get a random-walk Metropolis step
// whose scale (and, for multivariate blocks, covariance) adapts during burn-in
// only, targeting acceptance 0.44 for scalars and 0.234 otherwise.
Trace run_mcmc(const ModelSpec& model, const McmcConfig& config, std::span<const double> init);

// Multi-chain ESS with Geyer's initial positive sequence truncation.
double effective_sample_size(const std::vector<std::vector<double>>& chains);
// Split R-hat (chains halved, then the classic between/within variance ratio).
double split_rhat(const std::vector<std::vector<double>>& chains);

struct Diagnostics {
    std::vector<double> ess;
    std::vector<double> rhat;
    std::vector<std::vector<double>> acceptance;  // [chain][block]
};

// Requires >= 2 chains and >= 100 retained draws per chain.
Diagnostics diagnostics(const Trace& trace);
nlohmann::json to_json(const Trace& trace, const Diagnostics& d);

enum class FieldTransform { Identity, Exp };

struct FieldSummary {
    std::vector<double> lower;   // 2.5%
    std::vector<double> median;
    std::vector<double> upper;   // 97.5%
};

FieldSummary summarize_field(const Trace& trace, std::string_view block, FieldTransform transform);
// Pointwise quantiles of per-draw vectors produced by `value(chain, draw)`.
FieldSummary summarize_draws(const Trace& trace, std::size_t cells,
                             const std::function<void(std::size_t chain, std::size_t draw, std::span<double> out)>& value);

void write_trace_csv(const Trace& trace, std::ostream& out);

}  // namespace phylokit
