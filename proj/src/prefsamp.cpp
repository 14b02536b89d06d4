#include "phylokit/prefsamp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "phylokit/error.hpp"
#include "phylokit/skyline.hpp"
#include "phylokit/stats.hpp"

namespace phylokit {

SamplingModelKind parse_sampling_model_kind(const std::string& name) {
    if (name == "parametric") return SamplingModelKind::Parametric;
    if (name == "epoch") return SamplingModelKind::Epoch;
    if (name == "adaptive") return SamplingModelKind::Adaptive;
    if (name == "covariate") return SamplingModelKind::Covariate;
    throw Error("unknown sampling model '" + name + "'");
}

std::string to_string(SamplingModelKind kind) {
    switch (kind) {
        case SamplingModelKind::Parametric: return "parametric";
        case SamplingModelKind::Epoch: return "epoch";
        case SamplingModelKind::Adaptive: return "adaptive";
        case SamplingModelKind::Covariate: return "covariate";
    }
    return "?";
}

std::vector<std::size_t> epoch_of_cells(std::span<const double> bounds, double end, std::size_t cells) {
    if (!std::is_sorted(bounds.begin(), bounds.end())) throw Error("epoch change-points must be ascending");
    std::vector<std::size_t> out(cells);
    const double w = end / static_cast<double>(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        const double mid = (static_cast<double>(c) + 0.5) * w;
        out[c] = static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), mid) - bounds.begin());
    }
    return out;
}

SamplingRate sampling_rate(const SamplingModel& m, const GridFunction& ne) {
    const std::size_t cells = ne.size();
    std::vector<double> rate(cells);
    std::size_t clipped = 0;
    switch (m.kind) {
        case SamplingModelKind::Parametric:
            if (m.beta1 < 0) throw Error("parametric sampling model: beta1 must be >= 0");
            for (std::size_t c = 0; c < cells; ++c) rate[c] = std::exp(m.beta0) * std::pow(ne.values()[c], m.beta1);
            break;
        case SamplingModelKind::Epoch: {
            if (m.epoch_coef.size() != m.epoch_bounds.size() + 1)
                throw Error("epoch sampling model: need one coefficient per epoch");
            for (double c : m.epoch_coef)
                if (!(c > 0)) throw Error("epoch sampling model: coefficients must be positive");
            auto epoch = epoch_of_cells(m.epoch_bounds, ne.end(), cells);
            for (std::size_t c = 0; c < cells; ++c) rate[c] = m.epoch_coef[epoch[c]] * ne.values()[c];
            break;
        }
        case SamplingModelKind::Adaptive:
            if (m.log_beta.size() != cells) throw Error("adaptive sampling model: beta field must match the grid");
            for (std::size_t c = 0; c < cells; ++c) rate[c] = std::exp(m.log_beta[c]) * ne.values()[c];
            break;
        case SamplingModelKind::Covariate:
            if (m.beta1 < 0) throw Error("covariate sampling model: beta1 must be >= 0");
            if (m.covariates.size() != m.covariate_coef.size())
                throw Error("covariate sampling model: one coefficient per covariate");
            for (const auto& x : m.covariates)
                if (x.size() != cells) throw Error("covariate sampling model: covariates must match the grid");
            for (std::size_t c = 0; c < cells; ++c) {
                double r = std::exp(m.beta0) * std::pow(ne.values()[c], m.beta1);
                for (std::size_t k = 0; k < m.covariates.size(); ++k) r += m.covariate_coef[k] * m.covariates[k][c];
                if (!(r >= kRateFloor)) {
                    r = kRateFloor;
                    ++clipped;
                }
                rate[c] = r;
            }
            break;
    }
    return {GridFunction(ne.end(), std::move(rate)), clipped};
}

double ipp_loglik(std::span<const SamplingEvent> samples, SamplingWindow window, const GridFunction& rate) {
    if (!(window.end > 0)) throw Error("sampling window must have positive length");
    double ll = -rate.integral(0.0, window.end);
    for (const auto& s : samples) {
        if (s.time < 0 || s.time > window.end)
            throw Error("sample at time " + std::to_string(s.time) + " lies outside the sampling window");
        ll += s.count * std::log(rate(s.time));
    }
    return ll;
}

std::vector<SamplingEvent> simulate_ipp(const GridFunction& rate, SamplingWindow window, Rng& rng) {
    if (!(window.end > 0)) throw Error("sampling window must have positive length");
    std::vector<double> times;
    for (std::size_t c = 0; c < rate.size(); ++c) {
        const double lo = rate.left(c);
        if (lo >= window.end) break;
        const double hi = c + 1 < rate.size() ? std::min(rate.left(c + 1), window.end) : window.end;
        std::poisson_distribution<long> count(rate.values()[c] * (hi - lo));
        std::uniform_real_distribution<double> where(lo, hi);
        for (long k = count(rng); k > 0; --k) times.push_back(where(rng));
    }
    std::sort(times.begin(), times.end());
    std::vector<SamplingEvent> out;
    for (double t : times) out.push_back({t, 1});
    return out;
}

IppGridStats ipp_grid_statistics(std::span<const SamplingEvent> samples, SamplingWindow window, double end,
                                 std::size_t cells) {
    if (!(window.end > 0)) throw Error("sampling window must have positive length");
    GridFunction grid = GridFunction::constant(end, cells, 1.0);
    IppGridStats st;
    st.counts.assign(cells, 0.0);
    st.window_length.assign(cells, 0.0);
    for (const auto& s : samples) {
        if (s.time < 0 || s.time > window.end)
            throw Error("sample at time " + std::to_string(s.time) + " lies outside the sampling window");
        st.counts[grid.cell_index(s.time)] += s.count;
    }
    for (std::size_t c = 0; c < cells; ++c) {
        const double lo = grid.left(c);
        const double hi = c + 1 < cells ? grid.left(c + 1) : INFINITY;
        st.window_length[c] = std::max(0.0, std::min(hi, window.end) - lo);
    }
    return st;
}

namespace {

double ipp_exposure(double length, double log_rate) { return length > 0 ? length * std::exp(log_rate) : 0.0; }

}  // namespace

double ipp_loglik(const IppGridStats& st, std::span<const double> log_rate) {
    double ll = 0.0;
    for (std::size_t c = 0; c < log_rate.size(); ++c)
        ll += st.counts[c] * log_rate[c] - ipp_exposure(st.window_length[c], log_rate[c]);
    return ll;
}

// ---------------------------------------------------------------------------

namespace {

double half_normal_logpdf(double x, double scale) {
    return std::log(2.0) + stats::normal_logpdf(x, 0.0, scale);
}

double lognormal_logpdf(double x, double sd) { return stats::normal_logpdf(std::log(x), 0.0, sd) - std::log(x); }

}  // namespace

PrefsampModel prefsamp_model(const CoalescentGridStats& coal, const IppGridStats& samp, const PrefsampConfig& cfg) {
    const std::size_t cells = coal.exposure.size();
    if (cells < 2) throw Error("prefsamp: grid needs at least 2 cells");
    if (samp.counts.size() != cells) throw Error("prefsamp: sampling statistics must share the grid");

    PrefsampModel out;
    out.clipped = std::make_shared<std::atomic<std::size_t>>(0);
    ModelSpec& m = out.spec;
    const GmrfPrior fp = cfg.prior;
    ParameterBlock field{"log_ne", cells, Support::Real, {}, {}};
    ParameterBlock tau{"tau", 1, Support::Positive, {}, {}};
    tau.exact = [cells, fp](std::span<double> x, Rng& rng) {
        x[cells] = gibbs_tau(x.first(cells), fp.shape, fp.rate, rng);
    };
    m.blocks = {field, tau};

    out.init = skyline_init(coal);
    double total = 0.0, exposure = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
        total += samp.counts[c];
        exposure += samp.window_length[c] * std::exp(out.init[c]);
    }
    const double log_intensity = std::log(std::max(total, 1.0) / exposure);

    const std::size_t base = cells + 1;
    const SamplingPriors sp = cfg.sampling;

    switch (cfg.kind) {
        case SamplingModelKind::Parametric: {
            m.blocks.push_back({"beta0", 1, Support::Real, {}, {}});
            out.init.push_back(log_intensity);
            const bool free_beta1 = !cfg.fixed_beta1;
            if (free_beta1) {
                m.blocks.push_back({"beta1", 1, Support::Positive, {}, {}});
                out.init.push_back(1.0);
            }
            const double fixed = cfg.fixed_beta1.value_or(0.0);
            if (fixed < 0) throw Error("prefsamp: fixed beta1 must be >= 0");
            if (!free_beta1) {
                double w = 0.0;
                for (std::size_t c = 0; c < cells; ++c) w += samp.window_length[c] * std::exp(fixed * out.init[c]);
                out.init[base] = std::log(std::max(total, 1.0) / w);
            }
            m.log_posterior = [coal, samp, fp, sp, cells, base, free_beta1, fixed](std::span<const double> x) {
                auto log_ne = x.first(cells);
                const double b0 = x[base];
                const double b1 = free_beta1 ? x[base + 1] : fixed;
                double ll = coalescent_loglik(coal, log_ne) + gmrf_log_prior(log_ne, x[cells], fp);
                for (std::size_t c = 0; c < cells; ++c) {
                    const double lr = b0 + b1 * log_ne[c];
                    ll += samp.counts[c] * lr - ipp_exposure(samp.window_length[c], lr);
                }
                ll += stats::normal_logpdf(b0, 0.0, sp.beta0_sd);
                if (free_beta1) ll += half_normal_logpdf(b1, sp.beta1_scale);
                return ll;
            };
            break;
        }
        case SamplingModelKind::Epoch: {
            auto epoch = epoch_of_cells(cfg.epoch_bounds, coal.end, cells);
            const std::size_t j = cfg.epoch_bounds.size() + 1;
            ParameterBlock coef{"epoch_coef", j, Support::Positive, {}, {}};
            if (j == 1) coef.coordinate_names = {"epoch_coef[0]"};
            m.blocks.push_back(coef);
            for (std::size_t e = 0; e < j; ++e) out.init.push_back(std::exp(log_intensity));
            m.log_posterior = [coal, samp, fp, sp, cells, base, epoch, j](std::span<const double> x) {
                auto log_ne = x.first(cells);
                double ll = coalescent_loglik(coal, log_ne) + gmrf_log_prior(log_ne, x[cells], fp);
                for (std::size_t c = 0; c < cells; ++c) {
                    const double lr = std::log(x[base + epoch[c]]) + log_ne[c];
                    ll += samp.counts[c] * lr - ipp_exposure(samp.window_length[c], lr);
                }
                for (std::size_t e = 0; e < j; ++e) ll += lognormal_logpdf(x[base + e], sp.epoch_log_sd);
                return ll;
            };
            break;
        }
        case SamplingModelKind::Adaptive: {
            const GmrfPrior bp = sp.beta_field;
            m.blocks.push_back({"log_beta", cells, Support::Real, {}, {}});
            ParameterBlock tau_beta{"tau_beta", 1, Support::Positive, {}, {}};
            tau_beta.exact = [cells, base, bp](std::span<double> x, Rng& rng) {
                x[base + cells] = gibbs_tau(x.subspan(base, cells), bp.shape, bp.rate, rng);
            };
            m.blocks.push_back(tau_beta);
            for (std::size_t c = 0; c < cells; ++c) out.init.push_back(log_intensity);
            out.init.push_back(1.0);
            m.log_posterior = [coal, samp, fp, bp, cells, base](std::span<const double> x) {
                auto log_ne = x.first(cells);
                auto log_beta = x.subspan(base, cells);
                double ll = coalescent_loglik(coal, log_ne) + gmrf_log_prior(log_ne, x[cells], fp);
                for (std::size_t c = 0; c < cells; ++c) {
                    const double lr = log_beta[c] + log_ne[c];
                    ll += samp.counts[c] * lr - ipp_exposure(samp.window_length[c], lr);
                }
                ll += gmrf_log_prior(log_beta, x[base + cells], bp);
                return ll;
            };
            break;
        }
        case SamplingModelKind::Covariate: {
            const std::size_t k = cfg.covariates.size();
            if (k == 0) throw Error("covariate sampling model needs at least one covariate");
            for (const auto& xk : cfg.covariates)
                if (xk.size() != cells) throw Error("covariates must have one value per grid cell");
            m.blocks.push_back({"beta0", 1, Support::Real, {}, {}});
            m.blocks.push_back({"beta1", 1, Support::Positive, {}, {}});
            ParameterBlock coef{"coef", k, Support::Real, {}, {}};
            if (k == 1) coef.coordinate_names = {"coef[0]"};
            m.blocks.push_back(coef);
            out.init.push_back(log_intensity);
            out.init.push_back(1.0);
            for (std::size_t i = 0; i < k; ++i) out.init.push_back(0.0);
            auto covariates = cfg.covariates;
            auto clipped = out.clipped;
            m.log_posterior = [coal, samp, fp, sp, cells, base, covariates, k, clipped](std::span<const double> x) {
                auto log_ne = x.first(cells);
                const double b0 = x[base], b1 = x[base + 1];
                double ll = coalescent_loglik(coal, log_ne) + gmrf_log_prior(log_ne, x[cells], fp);
                for (std::size_t c = 0; c < cells; ++c) {
                    double r = std::exp(b0 + b1 * log_ne[c]);
                    for (std::size_t i = 0; i < k; ++i) r += x[base + 2 + i] * covariates[i][c];
                    if (!(r >= kRateFloor)) {
                        r = kRateFloor;
                        clipped->fetch_add(1, std::memory_order_relaxed);
                    }
                    ll += samp.counts[c] * std::log(r) - samp.window_length[c] * r;
                }
                ll += stats::normal_logpdf(b0, 0.0, sp.beta0_sd) + half_normal_logpdf(b1, sp.beta1_scale);
                for (std::size_t i = 0; i < k; ++i) ll += stats::normal_logpdf(x[base + 2 + i], 0.0, sp.coef_sd);
                return ll;
            };
            break;
        }
    }
    return out;
}

PrefsampFit fit_prefsamp(const CoalescentSummary& s, const PrefsampConfig& cfg) {
    if (cfg.cells < 2) throw Error("prefsamp: grid needs at least 2 cells");
    const auto samples = s.sampling_events();
    double oldest = 0.0;
    for (const auto& e : samples) oldest = std::max(oldest, e.time);
    const double window = cfg.window_end.value_or(oldest);
    if (!(window > 0))
        throw Error("prefsamp: sampling window has zero length (all samples contemporaneous); set a window end");
    const double end = cfg.grid_end.value_or(s.root_time());
    auto coal = grid_statistics(s, end, cfg.cells);
    auto samp = ipp_grid_statistics(samples, {window}, end, cfg.cells);
    auto model = prefsamp_model(coal, samp, cfg);
    PrefsampFit fit;
    fit.trace = run_mcmc(model.spec, cfg.mcmc, model.init);
    fit.ne = summarize_field(fit.trace, "log_ne", FieldTransform::Exp);
    fit.grid_end = end;
    fit.window_end = window;
    fit.cell_left = cell_left_edges(end, cfg.cells);
    fit.clipped_evaluations = model.clipped->load();
    return fit;
}

}  // namespace phylokit
