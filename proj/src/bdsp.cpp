#include "phylokit/bdsp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace phylokit {

namespace {

constexpr double kBulkTol = 1e-9;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Rates {
    double lambda, mu, psi;
};

using State = std::array<double, 2>;  // (p0, log q)

// Right-hand side in the backward variable s = u_i - t.
State rhs(const Rates& r, const State& y) {
    const double total = r.lambda + r.mu + r.psi;
    const double p0 = y[0];
    return {r.mu - total * p0 + r.lambda * p0 * p0, -(total - 2.0 * r.lambda * p0)};
}

// Dormand-Prince 5(4) with mixed absolute/relative error control.
State integrate(const Rates& r, State y, double span, double tol) {
    if (span <= 0.0) return y;

    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                            a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                            a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
    static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                            b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    static constexpr double e1 = b1 - 5179.0 / 57600.0, e3 = b3 - 7571.0 / 16695.0,
                            e4 = b4 - 393.0 / 640.0, e5 = b5 + 92097.0 / 339200.0,
                            e6 = b6 - 187.0 / 2100.0, e7 = -1.0 / 40.0;

    const double scale = 1.0 + r.lambda + r.mu + r.psi;
    double h = std::min(span, 0.05 / scale);
    double s = 0.0;
    double last_err = 0.0;
    std::size_t steps = 0;
    State k1 = rhs(r, y);

    while (s < span) {
        if (s + h > span) h = span - s;
        auto at = [&](std::initializer_list<std::pair<double, const State*>> terms) {
            State out = y;
            for (const auto& [c, k] : terms)
                for (int j = 0; j < 2; ++j) out[j] += h * c * (*k)[j];
            return out;
        };
        const State k2 = rhs(r, at({{a21, &k1}}));
        const State k3 = rhs(r, at({{a31, &k1}, {a32, &k2}}));
        const State k4 = rhs(r, at({{a41, &k1}, {a42, &k2}, {a43, &k3}}));
        const State k5 = rhs(r, at({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}));
        const State k6 = rhs(r, at({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}));
        const State next = at({{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
        const State k7 = rhs(r, next);

        double err = 0.0;
        for (int j = 0; j < 2; ++j) {
            const double ej = h * (e1 * k1[j] + e3 * k3[j] + e4 * k4[j] + e5 * k5[j] + e6 * k6[j] + e7 * k7[j]);
            const double sc = tol + tol * std::max(std::abs(y[j]), std::abs(next[j]));
            err = std::max(err, std::abs(ej) / sc);
        }
        last_err = err * tol;
        if (!std::isfinite(err)) err = 1e10;

        if (err <= 1.0) {
            s += h;
            y = next;
            k1 = k7;
        }
        const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        h *= factor;
        if (++steps > 10000000 || (s < span && h < 1e-14 * std::max(1.0, span))) {
            std::ostringstream msg;
            msg << "dwelling-time integration did not reach tolerance " << tol
                << " (achieved error estimate " << last_err << ")";
            throw Error(msg.str());
        }
    }
    return y;
}

}  // namespace

std::size_t BdspParams::interval_of(double t) const {
    const auto it = std::upper_bound(bounds.begin() + 1, bounds.end(), t);
    const auto i = static_cast<std::size_t>(it - (bounds.begin() + 1));
    return std::min(i, intervals() - 1);
}

void BdspParams::check() const {
    const std::size_t p = lambda.size();
    if (p == 0) throw Error("BDSP parameters need at least one interval");
    if (mu.size() != p || psi.size() != p || rho.size() != p || bounds.size() != p + 1)
        throw Error("BDSP rate vectors must all have one entry per interval");
    if (bounds[0] != 0.0) throw Error("BDSP breakpoints must start at 0");
    for (std::size_t i = 0; i < p; ++i) {
        if (!(bounds[i + 1] > bounds[i]) || !std::isfinite(bounds[i + 1]))
            throw Error("BDSP breakpoints must be finite and strictly increasing");
        if (!(lambda[i] >= 0.0) || !(mu[i] >= 0.0) || !(psi[i] >= 0.0) || !std::isfinite(lambda[i]) ||
            !std::isfinite(mu[i]) || !std::isfinite(psi[i]))
            throw Error("BDSP rates must be finite and nonnegative");
        if (!(rho[i] >= 0.0 && rho[i] <= 1.0)) throw Error("BDSP rho must lie in [0, 1]");
    }
}

BdspParams bdsp_params_from_json(const nlohmann::json& j) {
    BdspParams p;
    try {
        p.lambda = j.at("lambda").get<std::vector<double>>();
        p.mu = j.at("mu").get<std::vector<double>>();
        p.psi = j.at("psi").get<std::vector<double>>();
        p.rho = j.at("rho").get<std::vector<double>>();
        auto u = j.at("u").get<std::vector<double>>();
        if (u.size() == p.lambda.size() + 1 && !u.empty() && u[0] == 0.0) {
            p.bounds = std::move(u);
        } else {
            p.bounds.assign(1, 0.0);
            p.bounds.insert(p.bounds.end(), u.begin(), u.end());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("rates JSON: ") + e.what());
    }
    p.check();
    return p;
}

nlohmann::json to_json(const BdspParams& p) {
    return {{"u", std::vector<double>(p.bounds.begin() + 1, p.bounds.end())},
            {"lambda", p.lambda},
            {"mu", p.mu},
            {"psi", p.psi},
            {"rho", p.rho}};
}

DwellingSolution::DwellingSolution(BdspParams params, double tol) : params_(std::move(params)), tol_(tol) {
    params_.check();
    if (!(tol > 0.0)) throw Error("dwelling tolerance must be positive");
    const std::size_t p = params_.intervals();
    p0_end_.assign(p, 0.0);
    p0_end_[p - 1] = 1.0 - params_.rho[p - 1];
    for (std::size_t i = p - 1; i-- > 0;) {
        const double inner = evaluate(i + 1, params_.bounds[i + 1]).first;
        p0_end_[i] = (1.0 - params_.rho[i]) * inner;
    }
}

std::pair<double, double> DwellingSolution::evaluate(std::size_t i, double t) const {
    const double lo = params_.bounds[i];
    const double hi = params_.bounds[i + 1];
    if (t < lo - kBulkTol || t > hi + kBulkTol) throw Error("time outside the rate interval");
    t = std::clamp(t, lo, hi);
    const Rates r{params_.lambda[i], params_.mu[i], params_.psi[i]};
    const State y = integrate(r, {p0_end_[i], 0.0}, hi - t, tol_);
    return {y[0], y[1]};
}

double DwellingSolution::q(std::size_t i, double t) const { return std::exp(log_q(i, t)); }

DwellingSolution solve_dwelling(const BdspParams& params, double tol) { return DwellingSolution(params, tol); }

SampledBdTree::SampledBdTree(std::vector<BdEdge> edges, const BdspParams& params) : edges_(std::move(edges)) {
    params.check();
    const std::size_t p = params.intervals();
    const double present = params.present();
    bulk_.assign(p, 0);
    std::size_t origin_edges = 0;
    for (auto& e : edges_) {
        if (!(e.start >= -kBulkTol) || !(e.end >= e.start - kBulkTol) || !(e.end <= present + kBulkTol))
            throw Error("sampled tree times must lie in [0, present] and increase along edges");
        if (std::abs(e.start) <= kBulkTol) ++origin_edges;
        switch (e.kind) {
        case BdEnd::Branching: branching_.push_back(e.end); break;
        case BdEnd::Serial: serial_.push_back(e.end); break;
        case BdEnd::Bulk:
            if (e.bulk_interval >= p || std::abs(e.end - params.bounds[e.bulk_interval + 1]) > kBulkTol)
                throw Error("tip claimed as a bulk sample does not sit on a breakpoint");
            e.end = params.bounds[e.bulk_interval + 1];
            ++bulk_[e.bulk_interval];
            break;
        }
    }
    if (edges_.size() != 2 * branching_.size() + 1 || origin_edges < 1)
        throw Error("edge list does not describe a binary tree rooted at the origin");
    std::sort(branching_.begin(), branching_.end());
    std::sort(serial_.begin(), serial_.end());

    // lineages alive just before each interior breakpoint, minus the ones
    // bulk-sampled there
    crossing_.assign(p > 0 ? p - 1 : 0, 0);
    int earlier_bulk = 0;
    for (std::size_t i = 0; i + 1 < p; ++i) {
        const double u = params.bounds[i + 1];
        const auto births = std::lower_bound(branching_.begin(), branching_.end(), u) - branching_.begin();
        const auto serial = std::lower_bound(serial_.begin(), serial_.end(), u) - serial_.begin();
        const int alive = 1 + static_cast<int>(births) - static_cast<int>(serial) - earlier_bulk;
        crossing_[i] = alive - bulk_[i];
        earlier_bulk += bulk_[i];
    }
}

int SampledBdTree::total_bulk() const {
    int m = 0;
    for (int b : bulk_) m += b;
    return m;
}

SampledBdTree SampledBdTree::from_phylogeny(const Phylogeny& tree, double stem, const BdspParams& params,
                                            const std::vector<BdEnd>* claims) {
    if (!(stem >= 0.0) || !std::isfinite(stem)) throw Error("stem length must be finite and nonnegative");
    if (claims && claims->size() != tree.tip_count()) throw Error("one sample-kind claim is needed per tip");
    const double root_fwd = stem;
    const double root_time = tree.root_time();
    auto forward = [&](int v) { return root_fwd + (root_time - tree.node(v).time); };

    std::vector<BdEnd> kinds(tree.nodes().size(), BdEnd::Branching);
    std::vector<std::size_t> bulk_index(tree.nodes().size(), 0);
    const auto& tips = tree.tips();
    for (std::size_t k = 0; k < tips.size(); ++k) {
        const int v = tips[k];
        const double f = forward(v);
        std::optional<std::size_t> at_break;
        for (std::size_t j = 0; j < params.intervals(); ++j)
            if (std::abs(f - params.bounds[j + 1]) <= kBulkTol) at_break = j;
        BdEnd kind = BdEnd::Serial;
        if (claims) {
            kind = (*claims)[k];
            if (kind == BdEnd::Branching) throw Error("tips cannot be claimed as branchings");
            if (kind == BdEnd::Bulk && !at_break)
                throw Error("tip '" + tree.node(v).label + "' claimed as a bulk sample is not at a breakpoint");
        } else if (at_break && params.rho[*at_break] > 0.0) {
            kind = BdEnd::Bulk;
        }
        kinds[static_cast<std::size_t>(v)] = kind;
        if (kind == BdEnd::Bulk) bulk_index[static_cast<std::size_t>(v)] = *at_break;
    }

    std::vector<BdEdge> edges;
    edges.reserve(tree.nodes().size());
    for (std::size_t v = 0; v < tree.nodes().size(); ++v) {
        const int iv = static_cast<int>(v);
        const double start = iv == tree.root() ? 0.0 : forward(tree.node(iv).parent);
        edges.push_back({start, forward(iv), kinds[v], bulk_index[v]});
    }
    return SampledBdTree(std::move(edges), params);
}

double bdsp_logdensity(const SampledBdTree& tree, const DwellingSolution& d) {
    const BdspParams& par = d.params();
    const std::size_t p = par.intervals();

    double ll = d.log_q(0, 0.0);
    for (double x : tree.branching_times()) {
        const std::size_t i = par.interval_of(x);
        ll += std::log(par.lambda[i]) + d.log_q(i, x);
    }
    for (double y : tree.serial_times()) {
        const std::size_t i = par.interval_of(y);
        ll += std::log(par.psi[i]) - d.log_q(i, y);
    }
    const auto& m = tree.bulk_counts();
    for (std::size_t i = 0; i < p; ++i) {
        if (m[i] == 0) continue;
        if (par.rho[i] == 0.0) return kNegInf;
        ll += m[i] * (std::log(par.rho[i]) - d.log_q(i, par.bounds[i + 1]));
    }
    const auto& n = tree.lineages_at_breakpoints();
    for (std::size_t i = 0; i + 1 < p; ++i) {
        if (n[i] == 0) continue;
        if (n[i] < 0) throw Error("negative lineage count at a breakpoint");
        const double u = par.bounds[i + 1];
        ll += n[i] * (std::log1p(-par.rho[i]) + d.log_q(i + 1, u) - d.log_q(i, u));
    }
    return ll;
}

BdspSimulation simulate_bdsp(const BdspParams& params, Rng& rng, std::size_t max_events) {
    params.check();
    BdspSimulation sim;
    auto& lin = sim.lineages;
    lin.push_back({0.0, 0.0, -1, LineageFate::Unsampled, 0});
    std::vector<int> active{0};
    std::vector<std::array<int, 2>> kids(1, {-1, -1});

    const std::size_t p = params.intervals();
    double t = 0.0;
    std::size_t events = 0;
    std::exponential_distribution<double> expo(1.0);

    auto remove_active = [&](std::size_t pos) {
        active[pos] = active.back();
        active.pop_back();
    };

    for (std::size_t i = 0; i < p && !active.empty(); ++i) {
        const double end = params.bounds[i + 1];
        const double per = params.lambda[i] + params.mu[i] + params.psi[i];
        while (!active.empty()) {
            const double total = per * static_cast<double>(active.size());
            const double dt = total > 0.0 ? expo(rng) / total : std::numeric_limits<double>::infinity();
            if (t + dt >= end) break;
            t += dt;
            if (++events > max_events) throw EventLimitExceeded("BDSP simulation exceeded the event limit");
            const auto pos = static_cast<std::size_t>(std::min<double>(
                std::floor(uniform_open(rng) * static_cast<double>(active.size())),
                static_cast<double>(active.size() - 1)));
            const int k = active[pos];
            const double which = uniform_open(rng) * per;
            lin[static_cast<std::size_t>(k)].end = t;
            if (which < params.lambda[i]) {
                lin[static_cast<std::size_t>(k)].fate = LineageFate::Birth;
                remove_active(pos);
                for (int c = 0; c < 2; ++c) {
                    const int id = static_cast<int>(lin.size());
                    lin.push_back({t, t, k, LineageFate::Unsampled, 0});
                    kids.push_back({-1, -1});
                    kids[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] = id;
                    active.push_back(id);
                }
            } else if (which < params.lambda[i] + params.mu[i]) {
                lin[static_cast<std::size_t>(k)].fate = LineageFate::Death;
                remove_active(pos);
            } else {
                lin[static_cast<std::size_t>(k)].fate = LineageFate::Serial;
                remove_active(pos);
                ++sim.samples;
            }
        }
        t = end;
        std::vector<int> survivors;
        for (int k : active) {
            auto& l = lin[static_cast<std::size_t>(k)];
            l.end = end;
            if (params.rho[i] > 0.0 && uniform_open(rng) < params.rho[i]) {
                l.fate = LineageFate::Bulk;
                l.bulk_interval = i;
                ++sim.samples;
            } else {
                survivors.push_back(k);
            }
        }
        active = std::move(survivors);
    }
    for (int k : active) lin[static_cast<std::size_t>(k)].end = params.present();

    if (sim.samples == 0) return sim;

    std::vector<char> has_sample(lin.size(), 0);
    for (std::size_t k = lin.size(); k-- > 0;) {
        const auto f = lin[k].fate;
        if (f == LineageFate::Serial || f == LineageFate::Bulk) has_sample[k] = 1;
        else if (f == LineageFate::Birth)
            has_sample[k] = static_cast<char>(has_sample[static_cast<std::size_t>(kids[k][0])] |
                                              has_sample[static_cast<std::size_t>(kids[k][1])]);
    }

    // Walk down from the origin, collapsing lineages with one sampled child.
    std::vector<BdEdge> edges;
    std::vector<TreeNode> nodes;
    std::vector<double> node_fwd;
    struct Pending {
        int lineage;
        double start;
        int parent_node;
    };
    std::vector<Pending> stack{{0, 0.0, -1}};
    int tip_counter = 0;
    while (!stack.empty()) {
        auto [cur, start, parent] = stack.back();
        stack.pop_back();
        for (;;) {
            const auto& l = lin[static_cast<std::size_t>(cur)];
            if (l.fate == LineageFate::Birth) {
                const auto& kk = kids[static_cast<std::size_t>(cur)];
                const bool a = has_sample[static_cast<std::size_t>(kk[0])];
                const bool b = has_sample[static_cast<std::size_t>(kk[1])];
                if (a && b) {
                    const int id = static_cast<int>(nodes.size());
                    edges.push_back({start, l.end, BdEnd::Branching, 0});
                    nodes.push_back({"", parent, {}, l.end - start, 0.0});
                    node_fwd.push_back(l.end);
                    if (parent >= 0) nodes[static_cast<std::size_t>(parent)].children.push_back(id);
                    stack.push_back({kk[1], l.end, id});
                    stack.push_back({kk[0], l.end, id});
                    break;
                }
                cur = a ? kk[0] : kk[1];
                continue;
            }
            const int id = static_cast<int>(nodes.size());
            const BdEnd kind = l.fate == LineageFate::Bulk ? BdEnd::Bulk : BdEnd::Serial;
            edges.push_back({start, l.end, kind, l.bulk_interval});
            nodes.push_back({"s" + std::to_string(++tip_counter), parent, {}, l.end - start, 0.0});
            node_fwd.push_back(l.end);
            if (parent >= 0) nodes[static_cast<std::size_t>(parent)].children.push_back(id);
            break;
        }
    }
    sim.stem = edges.front().end;
    sim.tree.emplace(edges, params);

    if (tip_counter >= 2) {
        const double newest = *std::max_element(node_fwd.begin(), node_fwd.end());
        for (std::size_t v = 0; v < nodes.size(); ++v) nodes[v].time = newest - node_fwd[v];
        Phylogeny phy(std::move(nodes), 0);
        phy.set_axis_offset(params.present() - newest);
        sim.phylogeny.emplace(std::move(phy));
    }
    return sim;
}

}  // namespace phylokit
