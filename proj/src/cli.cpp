#include "phylokit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "phylokit/bdsp.hpp"
#include "phylokit/epi.hpp"
#include "phylokit/prefsamp.hpp"
#include "phylokit/skyline.hpp"
#include "phylokit/treedist.hpp"
#include "phylokit/variant.hpp"

#ifndef PHYLOKIT_VERSION
#define PHYLOKIT_VERSION "0.0.0"
#endif

namespace phylokit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flag combinations detected after parsing; reported like parse errors.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Declares options on a subcommand and copies their parsed values into a JSON
// config, so that a manifest can re-run the command without the command line.
class Flags {
public:
    Flags(CLI::App* app, json& cfg) : app_(app), cfg_(cfg) {}

    CLI::App* app() { return app_; }

    template <class T>
    CLI::Option* value(const std::string& flag, const std::string& key, T def, const std::string& help) {
        auto v = std::make_shared<T>(std::move(def));
        commits_.push_back([this, v, key] { cfg_[key] = *v; });
        return app_->add_option(flag, *v, help)->capture_default_str();
    }

    template <class T>
    CLI::Option* required(const std::string& flag, const std::string& key, const std::string& help) {
        auto v = std::make_shared<T>();
        commits_.push_back([this, v, key] { cfg_[key] = *v; });
        return app_->add_option(flag, *v, help)->required();
    }

    template <class T>
    CLI::Option* optional(const std::string& flag, const std::string& key, const std::string& help) {
        auto v = std::make_shared<T>();
        auto* opt = app_->add_option(flag, *v, help);
        commits_.push_back([this, v, key, opt] {
            if (opt->count() > 0) cfg_[key] = *v;
        });
        return opt;
    }

    CLI::Option* flag(const std::string& flag, const std::string& key, const std::string& help) {
        auto v = std::make_shared<bool>(false);
        commits_.push_back([this, v, key] { cfg_[key] = *v; });
        return app_->add_flag(flag, *v, help);
    }

    // Input paths are stored absolute so a manifest replays from any directory.
    CLI::Option* file(const std::string& flag, const std::string& key, const std::string& help, bool needed) {
        auto v = std::make_shared<std::string>();
        auto* opt = app_->add_option(flag, *v, help)->check(CLI::ExistingFile);
        if (needed) opt->required();
        commits_.push_back([this, v, key, opt] {
            if (opt->count() > 0) cfg_[key] = fs::absolute(*v).lexically_normal().string();
        });
        return opt;
    }

    void mcmc(std::size_t chains = 2) {
        value<std::size_t>("--iters", "iters", 20000, "MCMC iterations per chain, burn-in included")
            ->check(CLI::PositiveNumber);
        optional<std::size_t>("--burn-in", "burn_in", "burn-in iterations (default: half of --iters)");
        value<std::size_t>("--thin", "thin", 10, "keep every k-th draw")->check(CLI::PositiveNumber);
        value<std::size_t>("--chains", "chains", chains, "independent chains")->check(CLI::PositiveNumber);
        optional<std::size_t>("--threads", "threads", "threads for chains (capped by PHYLOKIT_THREADS)")
            ->check(CLI::PositiveNumber);
    }

    void seed() { value<std::uint64_t>("--seed", "seed", 1, "base random seed"); }

    void commit() {
        for (auto& c : commits_) c();
    }

private:
    CLI::App* app_;
    json& cfg_;
    std::vector<std::function<void()>> commits_;
};

struct Run {
    const json& cfg;
    fs::path out;  // empty when --out was not given
    std::ostream& os;
    std::size_t thread_cap = 1;
    json seeds = json::object();
    json diagnostics = json::object();
    int exit_code = 0;
};

struct Command {
    std::string name;
    std::string help;
    bool needs_out = false;
    std::vector<std::string> files;  // config keys holding input paths
    std::function<void(Flags&)> define;
    std::function<void(Run&)> run;
};

// ---------------------------------------------------------------------------
// small helpers

template <class T>
T get(const json& cfg, const std::string& key) {
    return cfg.at(key).get<T>();
}

template <class T>
std::optional<T> maybe(const json& cfg, const std::string& key) {
    if (!cfg.contains(key)) return std::nullopt;
    return cfg.at(key).get<T>();
}

std::size_t env_thread_cap() {
    if (const char* s = std::getenv("PHYLOKIT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(s, &end, 10);
        if (end != s && v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

McmcConfig mcmc_config(const Run& r) {
    McmcConfig m;
    m.iterations = get<std::size_t>(r.cfg, "iters");
    m.burn_in = maybe<std::size_t>(r.cfg, "burn_in").value_or(m.iterations / 2);
    m.thin = get<std::size_t>(r.cfg, "thin");
    m.chains = get<std::size_t>(r.cfg, "chains");
    m.seed = get<std::uint64_t>(r.cfg, "seed");
    m.threads = std::min(maybe<std::size_t>(r.cfg, "threads").value_or(m.chains), r.thread_cap);
    if (m.burn_in >= m.iterations) throw UsageError("--burn-in must be smaller than --iters");
    return m;
}

Phylogeny load_tree(const json& cfg, const std::string& tree_key, const std::string& dates_key) {
    return read_newick_file(get<std::string>(cfg, tree_key), maybe<std::string>(cfg, dates_key));
}

std::ofstream open_output(const fs::path& dir, const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    f << std::setprecision(17);
    return f;
}

void write_json(const fs::path& dir, const std::string& name, const json& j) {
    auto f = open_output(dir, name);
    f << j.dump(2) << '\n';
}

void write_field_csv(const fs::path& dir, const std::string& name, const std::vector<double>& left,
                     const FieldSummary& s) {
    auto f = open_output(dir, name);
    f << "cell_left,median,lower,upper\n";
    for (std::size_t c = 0; c < left.size(); ++c)
        f << left[c] << ',' << s.median[c] << ',' << s.lower[c] << ',' << s.upper[c] << '\n';
}

void write_trace(const fs::path& dir, const Trace& t) {
    auto f = open_output(dir, "trace.csv");
    write_trace_csv(t, f);
}

void record_chains(Run& r, const Trace& t) {
    json seeds = json::array();
    for (const auto& c : t.chains) seeds.push_back(c.seed);
    r.seeds["base"] = t.config.seed;
    r.seeds["chains"] = seeds;
    if (t.chains.size() >= 2 && t.draws_per_chain() >= 100) {
        r.diagnostics["convergence"] = to_json(t, diagnostics(t));
    } else {
        r.diagnostics["convergence"] = "skipped: needs at least 2 chains and 100 retained draws per chain";
    }
}

GmrfPrior gmrf_prior(const json& cfg) {
    GmrfPrior p;
    p.shape = get<double>(cfg, "tau_shape");
    p.rate = get<double>(cfg, "tau_rate");
    return p;
}

void gmrf_flags(Flags& f) {
    f.value<double>("--tau-shape", "tau_shape", 0.01, "Gamma shape of the GMRF precision prior")
        ->check(CLI::PositiveNumber);
    f.value<double>("--tau-rate", "tau_rate", 0.01, "Gamma rate of the GMRF precision prior")
        ->check(CLI::PositiveNumber);
}

void grid_flags(Flags& f) {
    f.value<std::size_t>("--grid", "grid", 50, "number of grid cells")->check(CLI::Range(2, 1000000));
    f.optional<double>("--grid-end", "grid_end", "grid end in tree time units (default: root time)")
        ->check(CLI::PositiveNumber);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell.erase(0, cell.find_first_not_of(" \t\r"));
        cell.erase(cell.find_last_not_of(" \t\r") + 1);
        out.push_back(cell);
    }
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw Error(where + ": '" + s + "' is not a number");
    return v;
}

// Rows of cell index, X1, X2, ... -> [covariate][cell]
std::vector<std::vector<double>> read_covariates(const std::string& path, std::size_t cells) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    std::getline(in, line);
    const auto header = split_csv_line(line);
    if (header.size() < 2) throw Error(path + ": expected a cell column and at least one covariate column");
    std::vector<std::vector<double>> cov(header.size() - 1);
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cellsv = split_csv_line(line);
        if (cellsv.size() != header.size())
            throw Error(path + ":" + std::to_string(row) + ": expected " + std::to_string(header.size()) + " columns");
        for (std::size_t k = 1; k < cellsv.size(); ++k)
            cov[k - 1].push_back(parse_number(cellsv[k], path + ":" + std::to_string(row)));
    }
    if (cov[0].size() != cells)
        throw Error(path + ": " + std::to_string(cov[0].size()) + " covariate rows for " + std::to_string(cells) +
                    " grid cells");
    return cov;
}

// ---------------------------------------------------------------------------
// subcommands

void define_simulate_coalescent(Flags& f) {
    f.value<std::vector<double>>("--ne", "ne", {1.0}, "Ne per grid cell, comma separated")->delimiter(',');
    f.value<double>("--grid-end", "grid_end", 1.0, "end of the Ne grid")->check(CLI::PositiveNumber);
    f.value<double>("--alpha", "alpha", 1.0, "scale: simulate under alpha * Ne^beta")->check(CLI::PositiveNumber);
    f.value<double>("--beta", "beta", 1.0, "power: simulate under alpha * Ne^beta");
    f.value<int>("--samples", "samples", 20, "number of tips")->check(CLI::Range(2, 100000000));
    f.value<double>("--spread", "spread", 0.0, "tips after the first are sampled uniformly on [0, spread]")
        ->check(CLI::NonNegativeNumber);
    f.file("--dates", "dates", "sampling table fixing the tip times (overrides --samples/--spread)", false);
    f.value<std::size_t>("--reps", "reps", 1, "replicate trees")->check(CLI::PositiveNumber);
    f.seed();
}

void run_simulate_coalescent(Run& r) {
    const auto& c = r.cfg;
    std::vector<double> ne = get<std::vector<double>>(c, "ne");
    const double alpha = get<double>(c, "alpha"), beta = get<double>(c, "beta");
    for (double& v : ne) {
        if (!(v > 0)) throw Error("--ne values must be positive");
        v = alpha * std::pow(v, beta);
    }
    const GridFunction grid(get<double>(c, "grid_end"), ne);

    std::optional<std::vector<SamplingEvent>> fixed;
    if (auto dates = maybe<std::string>(c, "dates")) {
        const auto table = read_sampling_table(*dates);
        const double newest = *std::max_element(table.values.begin(), table.values.end());
        std::vector<SamplingEvent> ev;
        for (double v : table.values)
            ev.push_back({table.kind == SamplingTable::Kind::CalendarDate ? newest - v : v, 1});
        std::sort(ev.begin(), ev.end(), [](auto& a, auto& b) { return a.time < b.time; });
        fixed = std::move(ev);
    }
    const auto reps = get<std::size_t>(c, "reps");
    const auto base = get<std::uint64_t>(c, "seed");
    const int n = get<int>(c, "samples");
    const double spread = get<double>(c, "spread");

    auto trees = open_output(r.out, reps == 1 ? "tree.nwk" : "trees.nwk");
    auto summary = open_output(r.out, "summary.csv");
    summary << "replicate,tips,root_time,first_coalescence,axis_offset\n";
    json seeds = json::array();
    for (std::size_t k = 0; k < reps; ++k) {
        const auto seed = derive_seed(base, k);
        seeds.push_back(seed);
        Rng rng(seed);
        std::vector<SamplingEvent> samples;
        if (fixed) {
            samples = *fixed;
        } else {
            samples.push_back({0.0, 1});
            std::uniform_real_distribution<double> u(0.0, spread);
            for (int i = 1; i < n; ++i) samples.push_back({spread > 0 ? u(rng) : 0.0, 1});
        }
        const auto p = simulate_coalescent(samples, grid, rng);
        trees << serialize_newick(p) << '\n';
        summary << k + 1 << ',' << p.tip_count() << ',' << p.root_time() << ',' << p.coalescent_times().front()
                << ',' << p.axis_offset() << '\n';
        if (reps == 1) {
            auto dates = open_output(r.out, "dates.csv");
            dates << "label,time\n";
            const auto labels = p.tip_labels();
            const auto times = p.sampling_times();
            for (std::size_t i = 0; i < labels.size(); ++i) dates << labels[i] << ',' << times[i] + p.axis_offset() << '\n';
        }
    }
    r.seeds["base"] = base;
    r.seeds["replicates"] = seeds;
}

void define_coalescent_loglik(Flags& f) {
    f.file("--tree", "tree", "Newick tree", true);
    f.file("--dates", "dates", "sampling table (label,time or label,date)", false);
    f.value<std::vector<double>>("--ne", "ne", {1.0}, "Ne per grid cell, comma separated")->delimiter(',');
    f.optional<double>("--grid-end", "grid_end", "end of the Ne grid (default: root time)")
        ->check(CLI::PositiveNumber);
    f.flag("--times-only", "times_only", "density of the coalescence times with the topology summed out");
}

void run_coalescent_loglik(Run& r) {
    const auto s = summarize(load_tree(r.cfg, "tree", "dates"));
    const GridFunction ne(maybe<double>(r.cfg, "grid_end").value_or(s.root_time()), get<std::vector<double>>(r.cfg, "ne"));
    const double ll = get<bool>(r.cfg, "times_only") ? coalescent_times_loglik(s, ne) : coalescent_loglik(s, ne);
    r.os << std::setprecision(17) << ll << '\n';
    if (!r.out.empty()) write_json(r.out, "result.json", {{"loglik", ll}});
}

void define_fit_ne(Flags& f) {
    f.file("--tree", "tree", "Newick tree", true);
    f.file("--dates", "dates", "sampling table (label,time or label,date)", false);
    grid_flags(f);
    gmrf_flags(f);
    f.mcmc();
    f.seed();
}

void run_fit_ne(Run& r) {
    const auto s = summarize(load_tree(r.cfg, "tree", "dates"));
    SkylineConfig cfg;
    cfg.cells = get<std::size_t>(r.cfg, "grid");
    cfg.grid_end = maybe<double>(r.cfg, "grid_end");
    cfg.prior = gmrf_prior(r.cfg);
    cfg.mcmc = mcmc_config(r);
    const auto fit = fit_ne(s, cfg);
    write_trace(r.out, fit.trace);
    write_field_csv(r.out, "summary.csv", fit.cell_left, fit.ne);
    record_chains(r, fit.trace);
    r.diagnostics["grid_end"] = fit.grid_end;
    r.diagnostics["cells"] = cfg.cells;
}

void define_test_variant(Flags& f) {
    f.file("--tree0", "tree0", "baseline Newick tree", true);
    f.file("--tree1", "tree1", "variant Newick tree", true);
    f.file("--dates0", "dates0", "baseline sampling table", false);
    f.file("--dates1", "dates1", "variant sampling table", false);
    grid_flags(f);
    gmrf_flags(f);
    f.value<double>("--sigma0", "sigma0", 2.0, "prior sd of log alpha")->check(CLI::PositiveNumber);
    f.value<double>("--sigma1", "sigma1", 2.0, "prior sd of beta")->check(CLI::PositiveNumber);
    f.mcmc();
    f.seed();
}

void run_test_variant(Run& r) {
    const auto t0 = load_tree(r.cfg, "tree0", "dates0");
    const auto t1 = load_tree(r.cfg, "tree1", "dates1");
    const auto [s0, s1] = align_summaries(t0, t1);
    VariantConfig cfg;
    cfg.cells = get<std::size_t>(r.cfg, "grid");
    cfg.grid_end = maybe<double>(r.cfg, "grid_end");
    cfg.priors.field = gmrf_prior(r.cfg);
    cfg.priors.sigma_log_alpha = get<double>(r.cfg, "sigma0");
    cfg.priors.sigma_beta = get<double>(r.cfg, "sigma1");
    cfg.mcmc = mcmc_config(r);
    const auto trace = fit_variant(s0, s1, cfg);
    const double end = cfg.grid_end.value_or(std::max(s0.root_time(), s1.root_time()));
    const auto left = cell_left_edges(end, cfg.cells);
    const auto summary = summarize_variant(trace);
    const auto verdict = test_beta(trace, 1.0);
    write_trace(r.out, trace);
    write_field_csv(r.out, "baseline.csv", left, summary.baseline);
    write_field_csv(r.out, "variant.csv", left, summary.variant);
    write_json(r.out, "verdict.json",
               {{"beta_mean", verdict.mean},
                {"ci_lo", verdict.lower},
                {"ci_hi", verdict.upper},
                {"p_gt_1", verdict.p_greater},
                {"log_alpha_mean", summary.log_alpha.mean}});
    record_chains(r, trace);
    r.diagnostics["grid_end"] = end;
}

void define_fit_prefsamp(Flags& f) {
    f.file("--tree", "tree", "Newick tree", true);
    f.file("--dates", "dates", "sampling table (label,time or label,date)", false);
    f.value<std::string>("--model", "model", "parametric", "sampling model")
        ->check(CLI::IsMember({"parametric", "epoch", "adaptive", "covariate"}));
    f.optional<std::vector<double>>("--epochs", "epochs", "epoch change-points t1,t2,... (epoch model)")
        ->delimiter(',');
    f.file("--covariates", "covariates", "CSV: cell column, then X1, X2, ... (covariate model)", false);
    f.optional<double>("--window-end", "window_end", "end of the sampling window (default: oldest sample)")
        ->check(CLI::PositiveNumber);
    f.optional<double>("--beta1", "beta1", "hold the parametric Ne exponent fixed");
    grid_flags(f);
    gmrf_flags(f);
    f.mcmc();
    f.seed();
}

void run_fit_prefsamp(Run& r) {
    const auto s = summarize(load_tree(r.cfg, "tree", "dates"));
    PrefsampConfig cfg;
    cfg.kind = parse_sampling_model_kind(get<std::string>(r.cfg, "model"));
    cfg.cells = get<std::size_t>(r.cfg, "grid");
    cfg.grid_end = maybe<double>(r.cfg, "grid_end");
    cfg.window_end = maybe<double>(r.cfg, "window_end");
    cfg.prior = gmrf_prior(r.cfg);
    cfg.fixed_beta1 = maybe<double>(r.cfg, "beta1");
    if (cfg.kind == SamplingModelKind::Epoch) {
        if (!r.cfg.contains("epochs")) throw UsageError("--model epoch requires --epochs");
        cfg.epoch_bounds = get<std::vector<double>>(r.cfg, "epochs");
    }
    if (cfg.kind == SamplingModelKind::Covariate) {
        if (!r.cfg.contains("covariates")) throw UsageError("--model covariate requires --covariates");
        cfg.covariates = read_covariates(get<std::string>(r.cfg, "covariates"), cfg.cells);
    }
    cfg.mcmc = mcmc_config(r);
    const auto fit = fit_prefsamp(s, cfg);
    write_trace(r.out, fit.trace);
    write_field_csv(r.out, "summary.csv", fit.cell_left, fit.ne);
    record_chains(r, fit.trace);
    r.diagnostics["grid_end"] = fit.grid_end;
    r.diagnostics["window_end"] = fit.window_end;
    r.diagnostics["clipped_rate_evaluations"] = fit.clipped_evaluations;
    if (fit.clipped_evaluations > 0)
        std::cerr << "warning: sampling intensity clipped at " << kRateFloor << " in " << fit.clipped_evaluations
                  << " evaluations\n";
}

void define_fit_sir(Flags& f) {
    f.file("--tree", "tree", "Newick tree", true);
    f.file("--dates", "dates", "sampling table (label,time or label,date)", false);
    f.optional<double>("--gamma", "gamma", "removal rate (free if omitted)")->check(CLI::PositiveNumber);
    f.optional<double>("--s0", "s0", "initial susceptibles (free if omitted)")->check(CLI::PositiveNumber);
    f.required<double>("--origin-offset", "origin_offset", "time from the epidemic origin to the latest sample")
        ->check(CLI::PositiveNumber);
    f.optional<double>("--dt", "dt", "ODE step and Ne cell width (default: origin offset / 2000)")
        ->check(CLI::PositiveNumber);
    f.optional<double>("--i0", "i0", "hold the initial infected count fixed")->check(CLI::PositiveNumber);
    f.flag("--no-slope", "no_slope", "constant transmission rate");
    f.mcmc();
    f.seed();
}

void run_fit_sir(Run& r) {
    const auto s = summarize(load_tree(r.cfg, "tree", "dates"));
    SirFitConfig cfg;
    cfg.gamma = maybe<double>(r.cfg, "gamma");
    cfg.s0 = maybe<double>(r.cfg, "s0");
    if (!cfg.gamma && !cfg.s0) throw UsageError("at least one of --gamma and --s0 must be given");
    cfg.origin_offset = get<double>(r.cfg, "origin_offset");
    cfg.dt = maybe<double>(r.cfg, "dt");
    cfg.fixed_i0 = maybe<double>(r.cfg, "i0");
    cfg.fit_slope = !get<bool>(r.cfg, "no_slope");
    cfg.mcmc = mcmc_config(r);
    const auto fit = fit_sir(s, cfg);
    write_trace(r.out, fit.trace);
    write_field_csv(r.out, "summary.csv", fit.cell_left, fit.ne);
    record_chains(r, fit.trace);
    r.diagnostics["grid_end"] = fit.grid_end;
    r.diagnostics["invalid_trajectories"] = fit.invalid_evaluations;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path + ": " + e.what());
    }
}

BdspParams load_rates(const json& cfg) {
    try {
        return bdsp_params_from_json(read_json_file(get<std::string>(cfg, "rates")));
    } catch (const json::exception& e) {
        throw Error(get<std::string>(cfg, "rates") + ": " + e.what());
    }
}

void define_simulate_bdsp(Flags& f) {
    f.file("--rates", "rates", "JSON with arrays u, lambda, mu, psi, rho", true);
    f.value<std::size_t>("--reps", "reps", 1, "replicate simulations")->check(CLI::PositiveNumber);
    f.value<std::size_t>("--max-events", "max_events", 1000000, "event budget per replicate")
        ->check(CLI::PositiveNumber);
    f.seed();
}

void run_simulate_bdsp(Run& r) {
    const auto params = load_rates(r.cfg);
    const auto dwelling = solve_dwelling(params);
    const auto reps = get<std::size_t>(r.cfg, "reps");
    const auto base = get<std::uint64_t>(r.cfg, "seed");
    auto trees = open_output(r.out, "trees.nwk");
    auto summary = open_output(r.out, "summary.csv");
    summary << "replicate,samples,stem,first_branching,log_density,tree_line\n";
    json seeds = json::array();
    std::size_t line = 0, sampled = 0;
    for (std::size_t k = 0; k < reps; ++k) {
        const auto seed = derive_seed(base, k);
        seeds.push_back(seed);
        Rng rng(seed);
        const auto sim = simulate_bdsp(params, rng, get<std::size_t>(r.cfg, "max_events"));
        summary << k + 1 << ',' << sim.samples << ',';
        if (sim.tree) {
            ++sampled;
            const auto& b = sim.tree->branching_times();
            summary << sim.stem << ',';
            if (!b.empty()) summary << *std::min_element(b.begin(), b.end());
            summary << ',' << bdsp_logdensity(*sim.tree, dwelling) << ',';
        } else {
            summary << ",,,";
        }
        if (sim.phylogeny) {
            trees << serialize_newick(*sim.phylogeny) << '\n';
            summary << ++line;
        }
        summary << '\n';
    }
    r.seeds["base"] = base;
    r.seeds["replicates"] = seeds;
    r.diagnostics["sampled_replicates"] = sampled;
    r.diagnostics["trees_written"] = line;
}

void define_bdsp_density(Flags& f) {
    f.file("--tree", "tree", "Newick tree; the root edge is the stem from the origin", true);
    f.file("--rates", "rates", "JSON with arrays u, lambda, mu, psi, rho", true);
    f.optional<double>("--stem", "stem", "origin-to-root time (default: the Newick root edge)")
        ->check(CLI::NonNegativeNumber);
    f.value<double>("--tol", "tol", 1e-10, "ODE tolerance")->check(CLI::PositiveNumber);
}

void run_bdsp_density(Run& r) {
    const auto params = load_rates(r.cfg);
    const auto tree = load_tree(r.cfg, "tree", "");
    const double stem = maybe<double>(r.cfg, "stem").value_or(tree.node(tree.root()).length);
    const auto sampled = SampledBdTree::from_phylogeny(tree, stem, params);
    const double ld = bdsp_logdensity(sampled, solve_dwelling(params, get<double>(r.cfg, "tol")));
    r.os << std::setprecision(17) << ld << '\n';
    if (!r.out.empty()) write_json(r.out, "result.json", {{"log_density", ld}, {"stem", stem}});
}

void define_sir_ne(Flags& f) {
    f.required<double>("--beta", "beta", "transmission rate at the origin")->check(CLI::NonNegativeNumber);
    f.value<double>("--beta-slope", "beta_slope", 0.0, "change of the transmission rate per unit time");
    f.required<double>("--gamma", "gamma", "removal rate")->check(CLI::NonNegativeNumber);
    f.required<double>("--s0", "s0", "initial susceptibles")->check(CLI::NonNegativeNumber);
    f.required<double>("--i0", "i0", "initial infected")->check(CLI::PositiveNumber);
    f.required<double>("--origin-offset", "origin_offset", "time from the origin to the latest sample")
        ->check(CLI::PositiveNumber);
    f.optional<double>("--dt", "dt", "step and cell width (default: origin offset / 2000)")->check(CLI::PositiveNumber);
}

void run_sir_ne(Run& r) {
    const double offset = get<double>(r.cfg, "origin_offset");
    const auto traj = solve_sir({get<double>(r.cfg, "beta"), get<double>(r.cfg, "beta_slope")}, get<double>(r.cfg, "gamma"),
                                {get<double>(r.cfg, "s0"), get<double>(r.cfg, "i0"), 0.0}, offset,
                                maybe<double>(r.cfg, "dt"));
    const auto ne = ne_from_sir(traj, offset);
    std::ostringstream csv;
    csv << std::setprecision(17) << "cell_left,ne\n";
    for (std::size_t c = 0; c < ne.size(); ++c) csv << ne.left(c) << ',' << ne.values()[c] << '\n';
    if (r.out.empty()) {
        r.os << csv.str();
    } else {
        open_output(r.out, "ne.csv") << csv.str();
    }
    r.diagnostics["conservation_error"] = traj.conservation_error;
}

void define_tree_mds(Flags& f) {
    auto* opt = f.required<std::vector<std::string>>("--group", "groups", "LABEL=FILE of Newick trees; repeatable");
    opt->check([](const std::string& s) -> std::string {
        const auto eq = s.find('=');
        if (eq == 0 || eq == std::string::npos) return "expected LABEL=FILE, got '" + s + "'";
        if (!fs::is_regular_file(s.substr(eq + 1))) return "file does not exist: " + s.substr(eq + 1);
        return {};
    });
    f.value<std::size_t>("--dim", "dim", 2, "embedding dimension")->check(CLI::PositiveNumber);
}

void run_tree_mds(Run& r) {
    std::vector<std::pair<std::string, std::vector<Phylogeny>>> sets;
    for (const auto& g : get<std::vector<std::string>>(r.cfg, "groups")) {
        const auto eq = g.find('=');
        const std::string label = g.substr(0, eq), path = g.substr(eq + 1);
        std::ifstream in(path);
        if (!in) throw Error("cannot read " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        std::vector<Phylogeny> trees;
        for (const auto& text : split_newick_trees(ss.str())) trees.push_back(parse_newick(text));
        sets.emplace_back(label, std::move(trees));
    }
    const auto report = stability_report(sets, get<std::size_t>(r.cfg, "dim"));
    write_stability_report(report, r.out);
    r.diagnostics["mode"] = report.mode;
    r.diagnostics["common_labels"] = report.common_labels.size();
    if (report.mode == "restricted") {
        r.diagnostics["smallest_eigenvalue"] = report.mds.smallest_eigenvalue;
        r.diagnostics["converged"] = report.mds.converged;
    }
}

void define_validate_tree(Flags& f) {
    f.file("--tree", "tree", "Newick tree", true);
    f.file("--dates", "dates", "sampling table (label,time or label,date)", false);
}

void run_validate_tree(Run& r) {
    const auto v = validate(load_tree(r.cfg, "tree", "dates"));
    const auto text = violations_json(v);
    r.os << text << '\n';
    if (!r.out.empty()) open_output(r.out, "violations.json") << text << '\n';
    r.diagnostics["violations"] = v.size();
    r.exit_code = v.empty() ? 0 : 1;
}

std::vector<Command> commands() {
    return {
        {"simulate-coalescent", "simulate heterochronous coalescent trees", true, {"dates"},
         define_simulate_coalescent, run_simulate_coalescent},
        {"coalescent-loglik", "print the coalescent log-likelihood of a tree", false, {"tree", "dates"},
         define_coalescent_loglik, run_coalescent_loglik},
        {"simulate-bdsp", "simulate birth-death-sampling trees", true, {"rates"}, define_simulate_bdsp,
         run_simulate_bdsp},
        {"fit-ne", "skyline posterior of Ne(t)", true, {"tree", "dates"}, define_fit_ne, run_fit_ne},
        {"test-variant", "test whether a variant grows faster than the baseline", true,
         {"tree0", "tree1", "dates0", "dates1"}, define_test_variant, run_test_variant},
        {"fit-prefsamp", "Ne(t) jointly with a sampling-time model", true, {"tree", "dates", "covariates"},
         define_fit_prefsamp, run_fit_prefsamp},
        {"fit-sir", "SIR transmission-rate posterior from a genealogy", true, {"tree", "dates"}, define_fit_sir,
         run_fit_sir},
        {"bdsp-density", "print the birth-death-sampling log density of a tree", false, {"tree", "rates"},
         define_bdsp_density, run_bdsp_density},
        {"sir-ne", "Ne grid implied by an SIR trajectory", false, {}, define_sir_ne, run_sir_ne},
        {"tree-mds", "Robinson-Foulds embedding and medoids of tree groups", true, {"groups"}, define_tree_mds,
         run_tree_mds},
        {"validate-tree", "check a tree's structural and timing invariants", false, {"tree", "dates"},
         define_validate_tree, run_validate_tree},
    };
}

json input_digests(const Command& cmd, const json& cfg) {
    json out = json::object();
    for (const auto& key : cmd.files) {
        if (!cfg.contains(key)) continue;
        if (cfg[key].is_array()) {
            for (const auto& item : cfg[key]) {
                const auto s = item.get<std::string>();
                const auto eq = s.find('=');
                const auto path = eq == std::string::npos ? s : s.substr(eq + 1);
                out[key + ":" + s.substr(0, eq)] = {{"path", path}, {"sha256", sha256_file(path)}};
            }
        } else {
            const auto path = cfg[key].get<std::string>();
            out[key] = {{"path", path}, {"sha256", sha256_file(path)}};
        }
    }
    return out;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

// Runs a command and writes its manifest when there is an output directory.
int execute(const Command& cmd, const json& cfg, const fs::path& out, std::ostream& os,
             const json& extra = json::object()) {
    if (!out.empty()) fs::create_directories(out);
    json manifest = {{"command", cmd.name}, {"version", version()}, {"config", cfg}, {"started_utc", utc_now()}};
    manifest["inputs"] = input_digests(cmd, cfg);
    Run run{cfg, out, os};
    run.thread_cap = env_thread_cap();
    const auto t0 = std::chrono::steady_clock::now();
    cmd.run(run);
    manifest["duration_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest["seeds"] = run.seeds;
    manifest["thread_cap"] = run.thread_cap;
    manifest["diagnostics"] = run.diagnostics;
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
    if (!out.empty()) write_json(out, "manifest.json", manifest);
    return run.exit_code;
}

int replay(const fs::path& manifest_path, const fs::path& out, bool check, std::ostream& os, std::ostream& err) {
    const json manifest = read_json_file(manifest_path.string());
    const auto name = manifest.at("command").get<std::string>();
    const auto all = commands();
    const auto it = std::find_if(all.begin(), all.end(), [&](const Command& c) { return c.name == name; });
    if (it == all.end()) throw Error(manifest_path.string() + ": unknown command '" + name + "'");
    const fs::path original = fs::absolute(manifest_path).parent_path();
    if (fs::exists(out) && fs::equivalent(out, original)) throw UsageError("--out must differ from the replayed run");
    const json& cfg = manifest.at("config");
    const auto now = input_digests(*it, cfg);
    for (const auto& [key, rec] : manifest.at("inputs").items()) {
        if (!now.contains(key) || now[key]["sha256"] != rec["sha256"])
            throw Error("input '" + rec["path"].get<std::string>() + "' changed since the recorded run");
    }
    const int code = execute(*it, cfg, out, os, {{"replay_of", fs::absolute(manifest_path).string()}});
    if (!check || code != 0) return code;
    const auto cmp = compare_outputs(original, out);
    os << std::setprecision(17) << "replay: " << cmp.files << " files, " << cmp.values
       << " values, max abs diff " << cmp.max_abs_diff << '\n';
    for (const auto& p : cmp.problems) err << "replay mismatch: " << p << '\n';
    return cmp.problems.empty() && cmp.max_abs_diff <= 1e-10 ? 0 : 1;
}

}  // namespace

std::string version() { return PHYLOKIT_VERSION; }

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

DirComparison compare_outputs(const fs::path& reference, const fs::path& candidate) {
    DirComparison r;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    for (const auto& entry : fs::directory_iterator(reference)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (name == "manifest.json") continue;
        const auto other = candidate / name;
        if (!fs::exists(other)) {
            r.problems.push_back(name + " missing from " + candidate.string());
            continue;
        }
        ++r.files;
        if (entry.path().extension() != ".csv") {
            if (slurp(entry.path()) != slurp(other)) r.problems.push_back(name + " differs");
            continue;
        }
        std::ifstream a(entry.path()), b(other);
        std::string la, lb;
        std::size_t row = 0;
        while (true) {
            const bool ga = static_cast<bool>(std::getline(a, la)), gb = static_cast<bool>(std::getline(b, lb));
            if (!ga || !gb) {
                if (ga != gb) r.problems.push_back(name + ": row counts differ");
                break;
            }
            ++row;
            const auto ca = split_csv_line(la), cb = split_csv_line(lb);
            if (ca.size() != cb.size()) {
                r.problems.push_back(name + ":" + std::to_string(row) + ": column counts differ");
                continue;
            }
            for (std::size_t k = 0; k < ca.size(); ++k) {
                char *ea = nullptr, *eb = nullptr;
                const double va = std::strtod(ca[k].c_str(), &ea), vb = std::strtod(cb[k].c_str(), &eb);
                const bool na = !ca[k].empty() && *ea == '\0', nb = !cb[k].empty() && *eb == '\0';
                if (na && nb) {
                    ++r.values;
                    if (va != vb) r.max_abs_diff = std::max(r.max_abs_diff, std::abs(va - vb));
                } else if (ca[k] != cb[k]) {
                    r.problems.push_back(name + ":" + std::to_string(row) + ": '" + ca[k] + "' vs '" + cb[k] + "'");
                }
            }
        }
    }
    return r;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"phylokit: phylodynamic inference from timed genealogies", "phylokit"};
    app.set_version_flag("--version", version());
    app.require_subcommand(1);

    const auto all = commands();
    std::map<std::string, json> configs;
    std::vector<std::unique_ptr<Flags>> flags;
    std::map<std::string, std::string> outs;
    for (const auto& cmd : all) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        flags.push_back(std::make_unique<Flags>(sub, configs[cmd.name]));
        cmd.define(*flags.back());
        auto* o = sub->add_option("--out", outs[cmd.name], "output directory");
        if (cmd.needs_out) o->required();
    }
    auto* rp = app.add_subcommand("replay", "re-run a command from its manifest.json");
    std::string manifest, replay_out;
    bool check = false;
    rp->add_option("--manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rp->add_option("--out", replay_out, "output directory for the replay")->required();
    rp->add_flag("--check", check, "compare the replayed outputs with the original run (tolerance 1e-10)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help, --version
        err << "usage error: " << e.what() << "\nrun 'phylokit --help' for the list of subcommands and flags\n";
        return 2;
    }

    try {
        if (rp->parsed()) return replay(manifest, replay_out, check, out, err);
        for (std::size_t k = 0; k < all.size(); ++k) {
            auto* sub = flags[k]->app();
            if (!sub->parsed()) continue;
            flags[k]->commit();
            return execute(all[k], configs[all[k].name], outs[all[k].name], out);
        }
        return 2;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace phylokit::cli
