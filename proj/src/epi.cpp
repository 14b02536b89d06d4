#include "phylokit/epi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include "phylokit/error.hpp"
#include "phylokit/skyline.hpp"

namespace phylokit {

namespace {

constexpr double kBetaFloor = 1e-12;

double lognormal_logpdf(double x, const LogNormalPrior& p) {
    if (!(x > 0)) return -std::numeric_limits<double>::infinity();
    const double z = (std::log(x) - p.log_mean) / p.log_sd;
    return -0.5 * z * z - std::log(p.log_sd) - std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double normal_logpdf(double x, double sd) {
    const double z = x / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

std::string describe_time(double t) {
    std::ostringstream os;
    os.precision(10);
    os << t;
    return os.str();
}

}  // namespace

double TransmissionLine::operator()(double t) const { return std::max(intercept + slope * t, kBetaFloor); }

SirState SirTrajectory::state(double t) const {
    if (t < -1e-12 || t > horizon() + 1e-9 * std::max(1.0, horizon()))
        throw Error("time " + describe_time(t) + " lies outside the SIR trajectory");
    const std::size_t last = time.size() - 1;
    double pos = std::clamp(t / dt, 0.0, static_cast<double>(last));
    std::size_t k = std::min(static_cast<std::size_t>(pos), last);
    if (k == last) return {S[k], I[k], R[k]};
    const double w = pos - static_cast<double>(k);
    if (w == 0.0) return {S[k], I[k], R[k]};
    return {S[k] + w * (S[k + 1] - S[k]), I[k] + w * (I[k + 1] - I[k]), R[k] + w * (R[k + 1] - R[k])};
}

double SirTrajectory::incidence_at(double t) const {
    const SirState x = state(t);
    return beta(t) * x.s * x.i;
}

SirTrajectory solve_sir(TransmissionLine beta, double gamma, SirState init, double horizon, std::optional<double> dt) {
    if (!(horizon > 0) || !std::isfinite(horizon)) throw Error("SIR horizon must be positive");
    if (!(gamma >= 0)) throw Error("SIR recovery rate must be nonnegative");
    if (!(init.i > 0) || !(init.s >= 0) || !(init.r >= 0)) throw Error("SIR initial state needs I0 > 0, S0, R0 >= 0");
    const double h = dt.value_or(horizon / 2000.0);
    if (!(h > 0)) throw Error("SIR step must be positive");

    const auto steps = static_cast<std::size_t>(std::ceil(horizon / h - 1e-9));
    SirTrajectory tr;
    tr.beta = beta;
    tr.gamma = gamma;
    tr.dt = h;
    tr.time.reserve(steps + 1);
    tr.S.reserve(steps + 1);
    tr.I.reserve(steps + 1);
    tr.R.reserve(steps + 1);

    const double total = init.s + init.i + init.r;
    auto deriv = [&](double t, const SirState& x) {
        const double inf = beta(t) * x.s * x.i;
        return SirState{-inf, inf - gamma * x.i, gamma * x.i};
    };
    SirState x = init;
    for (std::size_t k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) * h;
        tr.time.push_back(t);
        tr.S.push_back(x.s);
        tr.I.push_back(x.i);
        tr.R.push_back(x.r);
        const double drift = std::abs(x.s + x.i + x.r - total) / total;
        tr.conservation_error = std::max(tr.conservation_error, drift);
        if (!(x.s >= 0) || !(x.i >= 0) || !(x.r >= 0) || !(drift <= 1e-8)) {
            throw Error("SIR integration lost positivity or conservation at t = " + describe_time(t) +
                        "; use a smaller dt");
        }
        if (k == steps) break;
        const SirState k1 = deriv(t, x);
        const SirState k2 = deriv(t + h / 2, {x.s + h / 2 * k1.s, x.i + h / 2 * k1.i, x.r + h / 2 * k1.r});
        const SirState k3 = deriv(t + h / 2, {x.s + h / 2 * k2.s, x.i + h / 2 * k2.i, x.r + h / 2 * k2.r});
        const SirState k4 = deriv(t + h, {x.s + h * k3.s, x.i + h * k3.i, x.r + h * k3.r});
        x.s += h / 6 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s);
        x.i += h / 6 * (k1.i + 2 * k2.i + 2 * k3.i + k4.i);
        x.r += h / 6 * (k1.r + 2 * k2.r + 2 * k3.r + k4.r);
    }
    return tr;
}

double effective_size(double infected, double incidence) { return infected * infected / (2.0 * incidence); }

double sir_ne_at(const SirTrajectory& traj, double t) {
    const SirState x = traj.state(t);
    const double f = traj.beta(t) * x.s * x.i;
    if (!(f > 0)) throw Error("Ne undefined at forward time " + describe_time(t) + ": incidence is zero");
    const double ne = effective_size(x.i, f);
    if (!std::isfinite(ne)) throw Error("Ne undefined at forward time " + describe_time(t));
    return ne;
}

std::size_t sir_grid_cells(double origin_offset, double dt) {
    if (!(origin_offset > 0) || !(dt > 0)) throw Error("origin offset and dt must be positive");
    return static_cast<std::size_t>(std::floor(origin_offset / dt + 1e-9));
}

GridFunction ne_from_sir(const SirTrajectory& traj, double origin_offset) {
    const std::size_t cells = sir_grid_cells(origin_offset, traj.dt);
    if (cells == 0) throw Error("origin offset is shorter than one SIR step");
    std::vector<double> ne(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        const double back = (static_cast<double>(c) + 0.5) * traj.dt;
        ne[c] = sir_ne_at(traj, origin_offset - back);
    }
    return GridFunction(static_cast<double>(cells) * traj.dt, std::move(ne));
}

double coalescent_rate_epi(int a, const SirTrajectory& traj, double t, EpiRateForm form) {
    if (a < 2) throw Error("coalescence needs at least 2 lineages");
    const SirState x = traj.state(t);
    if (static_cast<double>(a) > x.i)
        throw Error("more ancestral lineages than infected hosts at forward time " + describe_time(t));
    const double f = traj.beta(t) * x.s * x.i;
    const double pairs = 0.5 * a * (a - 1.0);
    if (form == EpiRateForm::Exact) return f * pairs / (0.5 * x.i * (x.i - 1.0));
    return pairs * 2.0 * f / (x.i * x.i);
}

SirFit fit_sir(const CoalescentSummary& s, const SirFitConfig& cfg) {
    if (!cfg.gamma && !cfg.s0)
        throw Error("fit_sir: gamma and S0 cannot both be free; fix at least one of them");
    if (cfg.gamma && !(*cfg.gamma >= 0)) throw Error("fit_sir: gamma must be nonnegative");
    if (cfg.s0 && !(*cfg.s0 > 0)) throw Error("fit_sir: S0 must be positive");
    if (!(cfg.origin_offset > 0)) throw Error("fit_sir: origin offset must be positive");
    if (s.root_time() > cfg.origin_offset)
        throw Error("fit_sir: the tree root predates the epidemic origin; increase the origin offset");

    const double dt = cfg.dt.value_or(cfg.origin_offset / 2000.0);
    const std::size_t cells = sir_grid_cells(cfg.origin_offset, dt);
    if (cells < 1) throw Error("fit_sir: origin offset is shorter than one step");
    const double end = static_cast<double>(cells) * dt;
    const auto stats = grid_statistics(s, end, cells);

    const double gamma_guess = cfg.gamma.value_or(std::exp(cfg.priors.gamma.log_mean));
    const double s0_guess = cfg.s0.value_or(std::exp(cfg.priors.s0.log_mean));
    const LogNormalPrior intercept_prior =
        cfg.priors.intercept.value_or(LogNormalPrior{std::log(2.0 * std::max(gamma_guess, 1e-3) / s0_guess), 1.0});
    const double slope_sd = cfg.priors.slope_sd.value_or(std::exp(intercept_prior.log_mean) / cfg.origin_offset);

    ModelSpec m;
    m.blocks.push_back({"beta_intercept", 1, Support::Positive, {}, {}});
    if (cfg.fit_slope) m.blocks.push_back({"beta_slope", 1, Support::Real, {}, {}});
    if (!cfg.fixed_i0) m.blocks.push_back({"i0", 1, Support::Positive, {}, {}});
    if (!cfg.gamma) m.blocks.push_back({"gamma", 1, Support::Positive, {}, {}});
    if (!cfg.s0) m.blocks.push_back({"s0", 1, Support::Positive, {}, {}});

    struct Unpacked {
        TransmissionLine line;
        double gamma, s0, i0;
    };
    auto unpack = [cfg](std::span<const double> x) {
        std::size_t k = 0;
        Unpacked u{};
        u.line.intercept = x[k++];
        u.line.slope = cfg.fit_slope ? x[k++] : 0.0;
        u.i0 = cfg.fixed_i0 ? *cfg.fixed_i0 : x[k++];
        u.gamma = cfg.gamma ? *cfg.gamma : x[k++];
        u.s0 = cfg.s0 ? *cfg.s0 : x[k++];
        return u;
    };
    auto trajectory_ne = [cfg, dt, cells](const Unpacked& u, std::span<double> log_ne) {
        auto traj = solve_sir(u.line, u.gamma, {u.s0, u.i0, 0.0}, cfg.origin_offset, dt);
        for (std::size_t c = 0; c < cells; ++c)
            log_ne[c] = std::log(sir_ne_at(traj, cfg.origin_offset - (static_cast<double>(c) + 0.5) * dt));
    };

    auto invalid = std::make_shared<std::atomic<std::size_t>>(0);
    const SirPriors priors = cfg.priors;
    m.log_posterior = [=](std::span<const double> x) {
        const Unpacked u = unpack(x);
        double lp = lognormal_logpdf(u.line.intercept, intercept_prior);
        if (cfg.fit_slope) lp += normal_logpdf(u.line.slope, slope_sd);
        if (!cfg.fixed_i0) lp += lognormal_logpdf(u.i0, priors.i0);
        if (!cfg.gamma) lp += lognormal_logpdf(u.gamma, priors.gamma);
        if (!cfg.s0) lp += lognormal_logpdf(u.s0, priors.s0);
        if (!cfg.use_likelihood || !std::isfinite(lp)) return lp;
        std::vector<double> log_ne(cells);
        try {
            trajectory_ne(u, log_ne);
        } catch (const Error&) {
            invalid->fetch_add(1, std::memory_order_relaxed);
            return -std::numeric_limits<double>::infinity();
        }
        return lp + coalescent_loglik(stats, log_ne);
    };

    std::vector<double> init{std::exp(intercept_prior.log_mean)};
    if (cfg.fit_slope) init.push_back(0.0);
    if (!cfg.fixed_i0) init.push_back(std::exp(priors.i0.log_mean));
    if (!cfg.gamma) init.push_back(std::exp(priors.gamma.log_mean));
    if (!cfg.s0) init.push_back(std::exp(priors.s0.log_mean));

    SirFit fit;
    fit.trace = run_mcmc(m, cfg.mcmc, init);
    fit.invalid_evaluations = invalid->load();
    fit.grid_end = end;
    fit.cell_left = cell_left_edges(end, cells);

    const std::size_t dim = fit.trace.dimension();
    std::vector<double> row(dim);
    const double undefined = std::numeric_limits<double>::infinity();
    fit.ne = summarize_draws(fit.trace, cells, [&](std::size_t c, std::size_t d, std::span<double> out) {
        for (std::size_t k = 0; k < dim; ++k) row[k] = fit.trace.at(c, d, k);
        try {
            trajectory_ne(unpack(row), out);
            for (double& v : out) v = std::exp(v);
        } catch (const Error&) {
            std::fill(out.begin(), out.end(), undefined);
        }
    });
    return fit;
}

}  // namespace phylokit
