#include "phylokit/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <random>
#include <thread>

#include <Eigen/Dense>

#include "phylokit/error.hpp"
#include "phylokit/stats.hpp"

namespace phylokit {

std::size_t ModelSpec::dimension() const {
    std::size_t d = 0;
    for (const auto& b : blocks) d += b.dim;
    return d;
}

std::size_t ModelSpec::offset(std::string_view name) const {
    std::size_t off = 0;
    for (const auto& b : blocks) {
        if (b.name == name) return off;
        off += b.dim;
    }
    throw Error("model has no block '" + std::string(name) + "'");
}

const ParameterBlock& ModelSpec::block(std::string_view name) const {
    for (const auto& b : blocks)
        if (b.name == name) return b;
    throw Error("model has no block '" + std::string(name) + "'");
}

std::vector<std::string> ModelSpec::column_names() const {
    std::vector<std::string> out;
    for (const auto& b : blocks) {
        if (!b.coordinate_names.empty()) {
            if (b.coordinate_names.size() != b.dim) throw Error("block '" + b.name + "': coordinate name count");
            out.insert(out.end(), b.coordinate_names.begin(), b.coordinate_names.end());
        } else if (b.dim == 1) {
            out.push_back(b.name);
        } else {
            for (std::size_t i = 0; i < b.dim; ++i) out.push_back(b.name + "[" + std::to_string(i) + "]");
        }
    }
    return out;
}

nlohmann::json to_json(const McmcConfig& c) {
    return {{"iterations", c.iterations}, {"burn_in", c.burn_in}, {"thin", c.thin},
            {"chains", c.chains},         {"seed", c.seed},       {"threads", c.threads}};
}

// ---------------------------------------------------------------------------

std::size_t Trace::draws_per_chain() const { return chains.empty() ? 0 : chains.front().log_posterior.size(); }

std::optional<std::size_t> Trace::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    return std::nullopt;
}

std::size_t Trace::block_offset(std::string_view name) const {
    for (std::size_t i = 0; i < block_names.size(); ++i)
        if (block_names[i] == name) return block_offsets[i];
    throw Error("trace has no block '" + std::string(name) + "'");
}

std::size_t Trace::block_dim(std::string_view name) const {
    for (std::size_t i = 0; i < block_names.size(); ++i)
        if (block_names[i] == name) return block_dims[i];
    throw Error("trace has no block '" + std::string(name) + "'");
}

std::vector<double> Trace::coordinate(std::size_t coord) const {
    std::vector<double> out;
    out.reserve(chains.size() * draws_per_chain());
    for (std::size_t c = 0; c < chains.size(); ++c)
        for (std::size_t d = 0; d < draws_per_chain(); ++d) out.push_back(at(c, d, coord));
    return out;
}

std::vector<std::vector<double>> Trace::coordinate_by_chain(std::size_t coord) const {
    std::vector<std::vector<double>> out(chains.size());
    for (std::size_t c = 0; c < chains.size(); ++c)
        for (std::size_t d = 0; d < draws_per_chain(); ++d) out[c].push_back(at(c, d, coord));
    return out;
}

Trace make_trace(std::vector<std::string> columns, std::vector<std::vector<std::vector<double>>> chains) {
    Trace t;
    t.columns = std::move(columns);
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
        t.block_names.push_back(t.columns[i]);
        t.block_offsets.push_back(i);
        t.block_dims.push_back(1);
    }
    for (auto& rows : chains) {
        ChainTrace ct;
        for (auto& r : rows) {
            if (r.size() != t.columns.size()) throw Error("make_trace: row width mismatch");
            ct.draws.insert(ct.draws.end(), r.begin(), r.end());
            ct.log_posterior.push_back(0.0);
        }
        t.chains.push_back(std::move(ct));
    }
    for (const auto& c : t.chains)
        if (c.log_posterior.size() != t.draws_per_chain()) throw Error("make_trace: chains differ in length");
    return t;
}

// ---------------------------------------------------------------------------

namespace {

struct BlockLayout {
    std::size_t offset;
    std::size_t dim;
    bool positive;
    const ParameterBlock* spec;
};

// Random-walk proposal state for one block.
class Proposal {
public:
    explicit Proposal(std::size_t dim)
        : dim_(dim),
          target_(dim == 1 ? 0.44 : 0.234),
          log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(dim)))),
          chol_(Eigen::MatrixXd::Identity(dim, dim) * 0.1),
          mean_(Eigen::VectorXd::Zero(dim)),
          scatter_(Eigen::MatrixXd::Zero(dim, dim)) {}

    void draw(Rng& rng, std::normal_distribution<double>& z, std::span<double> step) {
        Eigen::VectorXd e(dim_);
        for (std::size_t i = 0; i < dim_; ++i) e[i] = z(rng);
        Eigen::VectorXd s = chol_.triangularView<Eigen::Lower>() * e;
        s *= std::exp(log_scale_);
        for (std::size_t i = 0; i < dim_; ++i) step[i] = s[i];
    }

    void adapt(bool accepted, std::span<const double> current, bool learn_covariance) {
        ++steps_;
        const double gain = std::pow(1.0 + static_cast<double>(steps_), -0.6);
        log_scale_ += gain * ((accepted ? 1.0 : 0.0) - target_);
        log_scale_ = std::clamp(log_scale_, -30.0, 10.0);
        if (!learn_covariance || dim_ == 1) return;
        // Welford update of the block's empirical covariance
        ++samples_;
        Eigen::Map<const Eigen::VectorXd> x(current.data(), static_cast<Eigen::Index>(dim_));
        Eigen::VectorXd delta = x - mean_;
        mean_ += delta / static_cast<double>(samples_);
        scatter_ += delta * (x - mean_).transpose();
        const std::size_t needed = 10 * dim_ + 20;
        if (samples_ >= needed && samples_ % 50 == 0) {
            Eigen::MatrixXd cov = scatter_ / static_cast<double>(samples_ - 1);
            const double ridge = 1e-10 * std::max(cov.trace() / static_cast<double>(dim_), 1e-300);
            cov.diagonal().array() += ridge;
            Eigen::LLT<Eigen::MatrixXd> llt(cov);
            if (llt.info() == Eigen::Success) {
                chol_ = llt.matrixL();
                if (!using_covariance_) {
                    using_covariance_ = true;
                    log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(dim_)));
                }
            }
        }
    }

    double scale() const { return std::exp(log_scale_); }

private:
    std::size_t dim_;
    double target_;
    double log_scale_;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd scatter_;
    std::size_t steps_ = 0;
    std::size_t samples_ = 0;
    bool using_covariance_ = false;
};

ChainTrace run_chain(const ModelSpec& model, const std::vector<BlockLayout>& layout, const McmcConfig& cfg,
                     std::span<const double> init, std::uint64_t seed) {
    const std::size_t dim = model.dimension();
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);

    std::vector<double> x(init.begin(), init.end());
    std::vector<double> proposal(dim);
    double lp = model.log_posterior(x);
    if (!std::isfinite(lp)) throw Error("non-finite log-posterior at the initial point");

    std::vector<Proposal> kernels;
    for (const auto& b : layout) kernels.emplace_back(b.dim);
    std::vector<std::size_t> accepted(layout.size(), 0), attempted(layout.size(), 0);
    std::vector<double> step;

    ChainTrace out;
    out.seed = seed;
    const std::size_t learn_from = cfg.burn_in / 4;

    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const bool adapting = iter < cfg.burn_in;
        for (std::size_t bi = 0; bi < layout.size(); ++bi) {
            const auto& b = layout[bi];
            if (b.spec->exact) {
                b.spec->exact(x, rng);
                lp = model.log_posterior(x);
                if (std::isnan(lp)) throw Error("log-posterior is NaN after exact update of '" + b.spec->name + "'");
                continue;
            }
            step.resize(b.dim);
            kernels[bi].draw(rng, z, step);
            std::copy(x.begin(), x.end(), proposal.begin());
            double log_jacobian_ratio = 0.0;
            bool finite = true;
            for (std::size_t i = 0; i < b.dim; ++i) {
                double& v = proposal[b.offset + i];
                if (b.positive) {
                    const double zi = std::log(v) + step[i];
                    v = std::exp(zi);
                    log_jacobian_ratio += step[i];
                    if (!(v > 0) || !std::isfinite(v)) finite = false;
                } else {
                    v += step[i];
                }
            }
            double lp_new = finite ? model.log_posterior(proposal) : -INFINITY;
            if (std::isnan(lp_new)) throw Error("non-finite (NaN) proposal density in block '" + b.spec->name + "'");
            const double log_ratio = lp_new - lp + log_jacobian_ratio;
            const bool accept = lp_new > -INFINITY && std::log(uniform_open(rng)) < log_ratio;
            if (accept) {
                std::swap(x, proposal);
                lp = lp_new;
            }
            if (adapting) {
                std::vector<double> current(b.dim);
                for (std::size_t i = 0; i < b.dim; ++i)
                    current[i] = b.positive ? std::log(x[b.offset + i]) : x[b.offset + i];
                kernels[bi].adapt(accept, current, iter >= learn_from);
            } else {
                ++attempted[bi];
                if (accept) ++accepted[bi];
            }
        }
        if (iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thin == 0) {
            out.draws.insert(out.draws.end(), x.begin(), x.end());
            out.log_posterior.push_back(lp);
        }
    }
    for (std::size_t bi = 0; bi < layout.size(); ++bi) {
        if (layout[bi].spec->exact) {
            out.acceptance.push_back(1.0);
            out.proposal_scale.push_back(0.0);
        } else {
            out.acceptance.push_back(attempted[bi] ? static_cast<double>(accepted[bi]) / attempted[bi] : 0.0);
            out.proposal_scale.push_back(kernels[bi].scale());
        }
    }
    return out;
}

}  // namespace

Trace run_mcmc(const ModelSpec& model, const McmcConfig& cfg, std::span<const double> init) {
    if (cfg.iterations == 0 || cfg.thin == 0 || cfg.chains == 0)
        throw Error("mcmc: iterations, thin and chains must be positive");
    if (cfg.burn_in >= cfg.iterations) throw Error("mcmc: burn-in must be smaller than iterations");
    if (!model.log_posterior) throw Error("mcmc: model has no log-posterior");
    const std::size_t dim = model.dimension();
    if (init.size() != dim) throw Error("mcmc: initial point has wrong dimension");

    std::vector<BlockLayout> layout;
    std::size_t off = 0;
    for (const auto& b : model.blocks) {
        if (b.dim == 0) throw Error("mcmc: block '" + b.name + "' has zero dimension");
        layout.push_back({off, b.dim, b.support == Support::Positive, &b});
        if (b.support == Support::Positive)
            for (std::size_t i = 0; i < b.dim; ++i)
                if (!(init[off + i] > 0)) throw Error("mcmc: initial value of '" + b.name + "' outside support");
        off += b.dim;
    }

    Trace trace;
    trace.columns = model.column_names();
    off = 0;
    for (const auto& b : model.blocks) {
        trace.block_names.push_back(b.name);
        trace.block_offsets.push_back(off);
        trace.block_dims.push_back(b.dim);
        off += b.dim;
    }
    trace.config = cfg;
    trace.chains.resize(cfg.chains);

    std::vector<std::exception_ptr> errors(cfg.chains);
    auto work = [&](std::size_t c) {
        try {
            trace.chains[c] = run_chain(model, layout, cfg, init, derive_seed(cfg.seed, c));
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.chains));
    if (threads == 1) {
        for (std::size_t c = 0; c < cfg.chains; ++c) work(c);
    } else {
        for (std::size_t start = 0; start < cfg.chains; start += threads) {
            std::vector<std::jthread> pool;
            for (std::size_t c = start; c < std::min(cfg.chains, start + threads); ++c) pool.emplace_back(work, c);
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return trace;
}

// ---------------------------------------------------------------------------

namespace {

struct ChainMoments {
    double mean;
    double var;  // unbiased
};

ChainMoments moments(const std::vector<double>& x, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x[i];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
    return {m, v / static_cast<double>(n - 1)};
}

std::size_t common_length(const std::vector<std::vector<double>>& chains) {
    if (chains.empty()) throw Error("diagnostics: no chains");
    std::size_t n = chains.front().size();
    for (const auto& c : chains) n = std::min(n, c.size());
    return n;
}

}  // namespace

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
    const std::size_t n = common_length(chains);
    const std::size_t m = chains.size();
    if (n < 4) throw Error("diagnostics: insufficient draws");
    std::vector<ChainMoments> mom;
    for (const auto& c : chains) mom.push_back(moments(c, n));
    double w = 0.0;
    for (const auto& mm : mom) w += mm.var;
    w /= static_cast<double>(m);
    double between = 0.0;
    if (m > 1) {
        double grand = 0.0;
        for (const auto& mm : mom) grand += mm.mean;
        grand /= static_cast<double>(m);
        for (const auto& mm : mom) between += (mm.mean - grand) * (mm.mean - grand);
        between /= static_cast<double>(m - 1);
    }
    const double nn = static_cast<double>(n);
    const double var_plus = (nn - 1.0) / nn * w + between;
    if (!(var_plus > 0)) return static_cast<double>(n * m);

    auto rho = [&](std::size_t lag) {
        double acov = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const auto& x = chains[c];
            const double mu = mom[c].mean;
            double s = 0.0;
            for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mu) * (x[i + lag] - mu);
            acov += s / nn;
        }
        acov /= static_cast<double>(m);
        return 1.0 - (w - acov) / var_plus;
    };

    // Geyer initial positive (monotone) sequence over lag pairs.
    double tau = -1.0;
    double prev_pair = INFINITY;
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = rho(2 * k) + rho(2 * k + 1);
        if (pair < 0) break;
        pair = std::min(pair, prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n * m)));
    return static_cast<double>(n * m) / tau;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
    const std::size_t n = common_length(chains);
    const std::size_t half = n / 2;
    if (half < 2) throw Error("diagnostics: insufficient draws");
    std::vector<std::vector<double>> split;
    for (const auto& c : chains) {
        split.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        split.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half), c.begin() + static_cast<std::ptrdiff_t>(n));
    }
    const double m = static_cast<double>(split.size());
    const double hn = static_cast<double>(half);
    double w = 0.0, grand = 0.0;
    std::vector<ChainMoments> mom;
    for (const auto& s : split) {
        mom.push_back(moments(s, half));
        w += mom.back().var;
        grand += mom.back().mean;
    }
    w /= m;
    grand /= m;
    double b_over_n = 0.0;
    for (const auto& mm : mom) b_over_n += (mm.mean - grand) * (mm.mean - grand);
    b_over_n /= (m - 1.0);
    if (!(w > 0)) return b_over_n > 0 ? INFINITY : 1.0;
    const double var_plus = (hn - 1.0) / hn * w + b_over_n;
    return std::sqrt(var_plus / w);
}

Diagnostics diagnostics(const Trace& trace) {
    if (trace.chains.size() < 2) throw Error("diagnostics: at least 2 chains required");
    if (trace.draws_per_chain() < 100) throw Error("diagnostics: insufficient draws (need >= 100 per chain)");
    Diagnostics d;
    for (std::size_t k = 0; k < trace.dimension(); ++k) {
        auto by_chain = trace.coordinate_by_chain(k);
        d.ess.push_back(effective_sample_size(by_chain));
        d.rhat.push_back(split_rhat(by_chain));
    }
    for (const auto& c : trace.chains) d.acceptance.push_back(c.acceptance);
    return d;
}

nlohmann::json to_json(const Trace& trace, const Diagnostics& d) {
    nlohmann::json j;
    j["config"] = to_json(trace.config);
    j["draws_per_chain"] = trace.draws_per_chain();
    nlohmann::json chains = nlohmann::json::array();
    for (const auto& c : trace.chains) {
        nlohmann::json acc;
        for (std::size_t b = 0; b < trace.block_names.size() && b < c.acceptance.size(); ++b)
            acc[trace.block_names[b]] = c.acceptance[b];
        chains.push_back({{"seed", c.seed}, {"acceptance", acc}});
    }
    j["chains"] = chains;
    nlohmann::json per;
    for (std::size_t k = 0; k < trace.dimension() && k < d.ess.size(); ++k)
        per[trace.columns[k]] = {{"ess", d.ess[k]}, {"rhat", d.rhat[k]}};
    j["coordinates"] = per;
    return j;
}

// ---------------------------------------------------------------------------

FieldSummary summarize_draws(
    const Trace& trace, std::size_t cells,
    const std::function<void(std::size_t chain, std::size_t draw, std::span<double> out)>& value) {
    const std::size_t per_chain = trace.draws_per_chain();
    const std::size_t total = per_chain * trace.chains.size();
    if (total == 0) throw Error("summarize: trace has no draws");
    std::vector<std::vector<double>> by_cell(cells, std::vector<double>(total));
    std::vector<double> row(cells);
    std::size_t k = 0;
    for (std::size_t c = 0; c < trace.chains.size(); ++c) {
        for (std::size_t d = 0; d < per_chain; ++d, ++k) {
            value(c, d, row);
            for (std::size_t i = 0; i < cells; ++i) by_cell[i][k] = row[i];
        }
    }
    FieldSummary s;
    for (auto& v : by_cell) {
        std::sort(v.begin(), v.end());
        s.lower.push_back(stats::quantile_sorted(v, 0.025));
        s.median.push_back(stats::quantile_sorted(v, 0.5));
        s.upper.push_back(stats::quantile_sorted(v, 0.975));
    }
    return s;
}

FieldSummary summarize_field(const Trace& trace, std::string_view block, FieldTransform transform) {
    const std::size_t off = trace.block_offset(block);
    const std::size_t dim = trace.block_dim(block);
    return summarize_draws(trace, dim, [&](std::size_t c, std::size_t d, std::span<double> out) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double v = trace.at(c, d, off + i);
            out[i] = transform == FieldTransform::Exp ? std::exp(v) : v;
        }
    });
}

void write_trace_csv(const Trace& trace, std::ostream& out) {
    out << "chain,draw,log_posterior";
    for (const auto& c : trace.columns) out << ',' << c;
    out << '\n';
    const auto old = out.precision(17);
    for (std::size_t c = 0; c < trace.chains.size(); ++c) {
        for (std::size_t d = 0; d < trace.draws_per_chain(); ++d) {
            out << c << ',' << d << ',' << trace.chains[c].log_posterior[d];
            for (std::size_t k = 0; k < trace.dimension(); ++k) out << ',' << trace.at(c, d, k);
            out << '\n';
        }
    }
    out.precision(old);
}

}  // namespace phylokit
