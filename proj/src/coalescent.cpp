#include "phylokit/coalescent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace phylokit {

GridFunction::GridFunction(double end, std::vector<double> values) : end_(end), values_(std::move(values)) {
    if (!(end_ > 0) || !std::isfinite(end_)) throw Error("grid function: end must be positive and finite");
    if (values_.empty()) throw Error("grid function: at least one cell required");
    for (double v : values_)
        if (!(v > 0) || !std::isfinite(v)) throw Error("grid function: values must be positive and finite");
}

GridFunction GridFunction::constant(double end, std::size_t cells, double value) {
    return GridFunction(end, std::vector<double>(cells, value));
}

std::size_t GridFunction::cell_index(double t) const {
    const std::size_t b = values_.size();
    if (!(t > 0)) return 0;
    double raw = std::floor(t * static_cast<double>(b) / end_);
    std::size_t i = raw >= static_cast<double>(b) ? b - 1 : static_cast<std::size_t>(raw);
    while (i + 1 < b && t >= left(i + 1)) ++i;
    while (i > 0 && t < left(i)) --i;
    return i;
}

namespace {

template <class F>
double integrate_cells(const GridFunction& g, double a, double b, F weight) {
    if (!(b > a)) return 0.0;
    double total = 0.0;
    std::size_t i = g.cell_index(a);
    double lo = a;
    while (lo < b) {
        double hi = i + 1 < g.size() ? std::min(b, g.left(i + 1)) : b;
        total += (hi - lo) * weight(g.values()[i]);
        lo = hi;
        ++i;
    }
    return total;
}

}  // namespace

double GridFunction::integral(double a, double b) const {
    return integrate_cells(*this, a, b, [](double v) { return v; });
}

double GridFunction::reciprocal_integral(double a, double b) const {
    return integrate_cells(*this, a, b, [](double v) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------

namespace {

void require_well_formed(const CoalescentSummary& s) {
    if (!s.well_formed()) throw Error("invalid summary: fewer than 2 lineages at a coalescence");
}

double pairs(int a) { return 0.5 * a * (a - 1.0); }

}  // namespace

CoalescentGridStats grid_statistics(const CoalescentSummary& s, double end, std::size_t cells) {
    require_well_formed(s);
    // Positive all-ones grid to reuse the cell walk.
    GridFunction grid = GridFunction::constant(end, cells, 1.0);
    CoalescentGridStats st;
    st.end = end;
    st.exposure.assign(cells, 0.0);
    st.coalescences.assign(cells, 0.0);
    const auto& ev = s.events();
    const auto& a = s.lineages();
    for (std::size_t j = 0; j < ev.size(); ++j) {
        if (ev[j].kind == EventKind::Coalescence) st.coalescences[grid.cell_index(ev[j].time)] += 1.0;
        if (j + 1 == ev.size()) break;
        double c = pairs(a[j]);
        double lo = ev[j].time, hi = ev[j + 1].time;
        if (c <= 0 || !(hi > lo)) continue;
        std::size_t i = grid.cell_index(lo);
        while (lo < hi) {
            double r = i + 1 < cells ? std::min(hi, grid.left(i + 1)) : hi;
            st.exposure[i] += c * (r - lo);
            lo = r;
            ++i;
        }
    }
    return st;
}

double coalescent_loglik(const CoalescentSummary& s, const GridFunction& ne) {
    require_well_formed(s);
    const auto& ev = s.events();
    const auto& a = s.lineages();
    double ll = 0.0;
    for (std::size_t j = 0; j < ev.size(); ++j) {
        if (ev[j].kind == EventKind::Coalescence) ll -= std::log(ne(ev[j].time));
        if (j + 1 < ev.size()) ll -= pairs(a[j]) * ne.reciprocal_integral(ev[j].time, ev[j + 1].time);
    }
    return ll;
}

double coalescent_times_loglik(const CoalescentSummary& s, const GridFunction& ne) {
    double ll = coalescent_loglik(s, ne);
    const auto& ev = s.events();
    const auto& a = s.lineages();
    for (std::size_t j = 1; j < ev.size(); ++j)
        if (ev[j].kind == EventKind::Coalescence) ll += std::log(pairs(a[j - 1]));
    return ll;
}

double coalescent_loglik(const CoalescentGridStats& stats, std::span<const double> log_ne) {
    double ll = 0.0;
    for (std::size_t c = 0; c < log_ne.size(); ++c) {
        // empty cells contribute nothing, even where exp overflows
        if (stats.exposure[c] > 0) ll -= stats.exposure[c] * std::exp(-log_ne[c]);
        ll -= stats.coalescences[c] * log_ne[c];
    }
    return ll;
}

// ---------------------------------------------------------------------------

Phylogeny simulate_coalescent(std::span<const SamplingEvent> samples, const GridFunction& ne, Rng& rng) {
    std::vector<SamplingEvent> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.time < y.time; });
    int total = 0;
    for (const auto& s : sorted) {
        if (s.count < 0 || s.time < 0) throw Error("simulate_coalescent: negative sample count or time");
        total += s.count;
    }
    if (total < 2) throw Error("simulate_coalescent: at least 2 samples required");

    std::vector<TreeNode> nodes;
    nodes.reserve(2 * static_cast<std::size_t>(total) - 1);
    std::vector<int> active;
    std::size_t next = 0;
    int label = 0;
    double t = sorted.front().time;

    auto add_samples = [&] {
        while (next < sorted.size() && sorted[next].time <= t) {
            for (int k = 0; k < sorted[next].count; ++k) {
                TreeNode tip;
                tip.label = "t" + std::to_string(++label);
                tip.time = sorted[next].time;
                active.push_back(static_cast<int>(nodes.size()));
                nodes.push_back(std::move(tip));
            }
            ++next;
        }
    };
    add_samples();

    const double inf = std::numeric_limits<double>::infinity();
    double budget = -std::log(uniform_open(rng));
    while (true) {
        double next_sample = next < sorted.size() ? sorted[next].time : inf;
        const auto lineages = static_cast<int>(active.size());
        if (lineages < 2) {
            if (next_sample == inf) break;
            t = next_sample;
            add_samples();
            continue;
        }
        std::size_t cell = ne.cell_index(t);
        double boundary = cell + 1 < ne.size() ? ne.left(cell + 1) : inf;
        double seg_end = std::min(boundary, next_sample);
        double rate = pairs(lineages) / ne.values()[cell];
        if (budget <= rate * (seg_end - t)) {
            t += budget / rate;
            budget = -std::log(uniform_open(rng));
            auto i = static_cast<std::size_t>(uniform_open(rng) * lineages);
            auto j = static_cast<std::size_t>(uniform_open(rng) * (lineages - 1));
            if (j >= i) ++j;
            TreeNode parent;
            parent.time = t;
            parent.children = {active[i], active[j]};
            int idx = static_cast<int>(nodes.size());
            nodes[active[i]].parent = idx;
            nodes[active[j]].parent = idx;
            nodes.push_back(std::move(parent));
            if (i < j) std::swap(i, j);
            active[i] = active.back();
            active.pop_back();
            active[j] = active.back();
            active.pop_back();
            active.push_back(idx);
        } else {
            budget -= rate * (seg_end - t);
            t = seg_end;
            add_samples();
        }
    }
    const double offset = sorted.front().time;
    for (auto& nd : nodes) nd.time -= offset;
    for (auto& nd : nodes)
        if (nd.parent != -1) nd.length = nodes[nd.parent].time - nd.time;
    int root = active.front();
    Phylogeny p(std::move(nodes), root);
    p.set_axis_offset(offset);
    return p;
}

// ---------------------------------------------------------------------------

double pairwise_tmrca_expectation(const GridFunction& ne) {
    using boost::math::quadrature::gauss_kronrod;
    double total = 0.0;
    double hazard = 0.0;  // cumulative hazard at the current cell's left edge
    for (std::size_t i = 0; i < ne.size(); ++i) {
        const double lo = ne.left(i);
        const double hi = i + 1 < ne.size() ? ne.left(i + 1) : ne.end();
        const double v = ne.values()[i];
        auto survival = [&](double t) { return std::exp(-(hazard + (t - lo) / v)); };
        double err = 0.0;
        total += gauss_kronrod<double, 31>::integrate(survival, lo, hi, 15, 1e-12, &err);
        hazard += (hi - lo) / v;
    }
    const double v_last = ne.values().back();
    const double h_end = hazard;
    auto tail = [&](double s) { return std::exp(-(h_end + s / v_last)); };
    boost::math::quadrature::exp_sinh<double> integrator;
    total += integrator.integrate(tail, 0.0, std::numeric_limits<double>::infinity(), 1e-12);
    return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

}  // namespace phylokit
