#include "phylokit/treedist.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

#include "phylokit/error.hpp"
#include "phylokit/random.hpp"

namespace phylokit {

DistanceMatrix::DistanceMatrix(std::size_t k, std::vector<std::string> groups)
    : k_(k), d_(k * k, 0.0), groups_(std::move(groups)) {
    if (groups_.empty()) groups_.assign(k, "");
    if (groups_.size() != k) throw Error("distance matrix: one group label per row required");
}

DistanceMatrix::DistanceMatrix(std::vector<std::vector<double>> rows, std::vector<std::string> groups)
    : DistanceMatrix(rows.size(), std::move(groups)) {
    for (std::size_t i = 0; i < k_; ++i) {
        if (rows[i].size() != k_) throw Error("distance matrix must be square");
        if (rows[i][i] != 0.0) throw Error("distance matrix diagonal must be zero");
        for (std::size_t j = 0; j < i; ++j) {
            if (rows[i][j] != rows[j][i]) throw Error("distance matrix must be symmetric");
            set(i, j, rows[i][j]);
        }
    }
}

void DistanceMatrix::set(std::size_t i, std::size_t j, double v) {
    if (!(v >= 0) || !std::isfinite(v)) throw Error("distances must be finite and nonnegative");
    if (i == j && v != 0.0) throw Error("distance matrix diagonal must be zero");
    d_[i * k_ + j] = v;
    d_[j * k_ + i] = v;
}

std::vector<std::size_t> DistanceMatrix::members(const std::string& group) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k_; ++i)
        if (groups_[i] == group) out.push_back(i);
    return out;
}

std::vector<std::vector<std::uint64_t>> unrooted_splits(const Phylogeny& p) {
    auto labels = p.tip_labels();
    std::sort(labels.begin(), labels.end());
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;
    const std::size_t n = labels.size();
    const std::size_t words = (n + 63) / 64;

    std::vector<std::vector<std::uint64_t>> mask(p.nodes().size(), std::vector<std::uint64_t>(words, 0));
    std::set<std::vector<std::uint64_t>> splits;
    for (int v : p.postorder()) {
        auto& m = mask[static_cast<std::size_t>(v)];
        if (p.is_tip(v)) {
            const std::size_t b = index.at(p.node(v).label);
            m[b / 64] |= std::uint64_t{1} << (b % 64);
        } else {
            for (int c : p.node(v).children)
                for (std::size_t w = 0; w < words; ++w) m[w] |= mask[static_cast<std::size_t>(c)][w];
        }
        if (v == p.root()) continue;
        std::vector<std::uint64_t> s = m;
        if (s[0] & 1U) {
            for (std::size_t w = 0; w < words; ++w) s[w] = ~s[w];
            if (n % 64) s[words - 1] &= (std::uint64_t{1} << (n % 64)) - 1;
        }
        std::size_t bits = 0;
        for (auto w : s) bits += static_cast<std::size_t>(std::popcount(w));
        if (bits >= 2 && bits + 2 <= n) splits.insert(std::move(s));
    }
    return {splits.begin(), splits.end()};
}

int rf_distance(const Phylogeny& a, const Phylogeny& b) {
    auto la = a.tip_labels();
    auto lb = b.tip_labels();
    std::sort(la.begin(), la.end());
    std::sort(lb.begin(), lb.end());
    if (la != lb) throw Error("rf_distance: trees have different tip label sets");
    const auto sa = unrooted_splits(a);
    const auto sb = unrooted_splits(b);
    std::vector<std::vector<std::uint64_t>> diff;
    std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(diff));
    return static_cast<int>(diff.size());
}

DistanceMatrix rf_matrix(const std::vector<Phylogeny>& trees, std::vector<std::string> groups) {
    DistanceMatrix d(trees.size(), std::move(groups));
    std::vector<std::vector<std::vector<std::uint64_t>>> splits;
    splits.reserve(trees.size());
    std::vector<std::string> reference;
    for (const auto& t : trees) {
        auto labels = t.tip_labels();
        std::sort(labels.begin(), labels.end());
        if (reference.empty()) reference = labels;
        else if (labels != reference) throw Error("rf_distance: trees have different tip label sets");
        splits.push_back(unrooted_splits(t));
    }
    for (std::size_t i = 0; i < trees.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            std::size_t diff = 0;
            auto x = splits[i].begin(), y = splits[j].begin();
            while (x != splits[i].end() && y != splits[j].end()) {
                if (*x < *y) ++diff, ++x;
                else if (*y < *x) ++diff, ++y;
                else ++x, ++y;
            }
            diff += static_cast<std::size_t>(splits[i].end() - x) + static_cast<std::size_t>(splits[j].end() - y);
            d.set(i, j, static_cast<double>(diff));
        }
    }
    return d;
}

namespace {

using Matrix = std::vector<double>;  // row-major k x k

struct EigenPair {
    double value;
    std::vector<double> vector;
    bool converged;
};

// Dominant eigenpair of a symmetric positive semidefinite matrix.
EigenPair power_iteration(const Matrix& m, std::size_t k, double tol, std::uint64_t stream) {
    std::vector<double> v(k), w(k);
    for (std::size_t i = 0; i < k; ++i)
        v[i] = static_cast<double>(derive_seed(0x6d6473ULL + stream, i) >> 11) / 9007199254740992.0 - 0.5;
    auto normalize = [](std::vector<double>& x) {
        double n = 0;
        for (double e : x) n += e * e;
        n = std::sqrt(n);
        if (n > 0)
            for (double& e : x) e /= n;
        return n;
    };
    normalize(v);
    double scale = 0;
    for (double e : m) scale = std::max(scale, std::abs(e));
    if (scale == 0) return {0.0, v, true};

    double lambda = 0;
    for (std::size_t it = 0; it < 200000; ++it) {
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) s += m[i * k + j] * v[j];
            w[i] = s;
        }
        lambda = 0;
        for (std::size_t i = 0; i < k; ++i) lambda += v[i] * w[i];
        double resid = 0;
        for (std::size_t i = 0; i < k; ++i) resid += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
        if (std::sqrt(resid) <= tol * scale * static_cast<double>(k)) return {lambda, v, true};
        if (normalize(w) == 0) return {0.0, v, true};
        v.swap(w);
    }
    return {lambda, v, false};
}

}  // namespace

MdsResult classical_mds(const DistanceMatrix& d, std::size_t dim, double tol) {
    const std::size_t k = d.size();
    if (k < 3) throw Error("classical_mds: need at least 3 points");
    if (dim == 0 || dim >= k) throw Error("classical_mds: dimension must be in [1, k)");

    Matrix b(k * k);
    std::vector<double> row_mean(k, 0.0);
    double grand = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double sq = d(i, j) * d(i, j);
            b[i * k + j] = sq;
            row_mean[i] += sq / static_cast<double>(k);
        }
    for (double r : row_mean) grand += r / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) b[i * k + j] = -0.5 * (b[i * k + j] - row_mean[i] - row_mean[j] + grand);

    // Gershgorin bound g: B + gI and gI - B are both positive semidefinite
    double g = 0;
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::abs(b[i * k + j]);
        g = std::max(g, s);
    }

    MdsResult out;
    out.coords.assign(k, std::vector<double>(dim, 0.0));
    if (g == 0) {
        out.eigenvalues.assign(dim, 0.0);
        return out;
    }

    // smallest eigenvalue first; its magnitude is the least shift that makes
    // the top-eigenpair iteration work on a positive semidefinite matrix
    Matrix flipped(k * k);
    for (std::size_t i = 0; i < k * k; ++i) flipped[i] = -b[i];
    for (std::size_t i = 0; i < k; ++i) flipped[i * k + i] += g;
    EigenPair low = power_iteration(flipped, k, tol, dim);
    out.converged = low.converged;
    out.smallest_eigenvalue = g - low.value;
    const double shift = std::max(0.0, -out.smallest_eigenvalue);

    Matrix shifted = b;
    for (std::size_t i = 0; i < k; ++i) shifted[i * k + i] += shift;
    for (std::size_t c = 0; c < dim; ++c) {
        EigenPair e = power_iteration(shifted, k, tol, c);
        out.converged = out.converged && e.converged;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) shifted[i * k + j] -= e.value * e.vector[i] * e.vector[j];
        const double lambda = e.value - shift;
        out.eigenvalues.push_back(lambda);
        if (lambda > 0) {
            const double s = std::sqrt(lambda);
            for (std::size_t i = 0; i < k; ++i) out.coords[i][c] = s * e.vector[i];
        } else {
            out.negative_dims.push_back(c);
        }
    }
    return out;
}

std::size_t medoid(const DistanceMatrix& d, const std::string& group) {
    const auto rows = d.members(group);
    if (rows.empty()) throw Error("medoid: unknown group '" + group + "'");
    std::size_t best = rows.front();
    double best_sum = std::numeric_limits<double>::infinity();
    for (std::size_t i : rows) {
        double s = 0;
        for (std::size_t j : rows) s += d(i, j);
        if (s < best_sum) {
            best_sum = s;
            best = i;
        }
    }
    return best;
}

namespace {

std::vector<std::string> shared_labels(const std::vector<const Phylogeny*>& trees) {
    std::vector<std::string> common;
    bool first = true;
    for (const auto* t : trees) {
        auto labels = t->tip_labels();
        std::sort(labels.begin(), labels.end());
        if (first) {
            common = labels;
            first = false;
            continue;
        }
        std::vector<std::string> next;
        std::set_intersection(common.begin(), common.end(), labels.begin(), labels.end(), std::back_inserter(next));
        common.swap(next);
    }
    return common;
}

std::vector<Phylogeny> restricted(const std::vector<const Phylogeny*>& trees, const std::vector<std::string>& keep) {
    std::vector<Phylogeny> out;
    out.reserve(trees.size());
    for (const auto* t : trees) {
        if (t->tip_count() == keep.size()) out.push_back(*t);
        else out.push_back(restrict_to_labels(*t, keep));
    }
    return out;
}

double mean_within(const DistanceMatrix& d, const std::vector<std::size_t>& rows) {
    if (rows.size() < 2) return 0.0;
    double s = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b, ++pairs) s += d(rows[a], rows[b]);
    return s / static_cast<double>(pairs);
}

}  // namespace

StabilityReport stability_report(const std::vector<std::pair<std::string, std::vector<Phylogeny>>>& sets,
                                 std::size_t dim) {
    if (sets.size() < 2) throw Error("stability report: at least 2 groups required");
    StabilityReport r;
    std::vector<const Phylogeny*> all;
    std::set<std::string> seen;
    for (const auto& [label, trees] : sets) {
        if (trees.empty()) throw Error("stability report: group '" + label + "' is empty");
        if (!seen.insert(label).second) throw Error("stability report: duplicate group '" + label + "'");
        for (std::size_t i = 0; i < trees.size(); ++i) {
            all.push_back(&trees[i]);
            r.tree_group.push_back(label);
            r.tree_index.push_back(i);
        }
    }

    r.common_labels = shared_labels(all);
    if (r.common_labels.size() >= 4) {
        r.mode = "restricted";
        const auto pooled = restricted(all, r.common_labels);
        const DistanceMatrix d = rf_matrix(pooled, r.tree_group);
        if (d.size() > dim) r.mds = classical_mds(d, dim);
        for (const auto& [label, trees] : sets) {
            GroupSummary g{label, trees.size(), medoid(d, label), mean_within(d, d.members(label))};
            r.groups.push_back(g);
        }
        for (const auto& a : r.groups) {
            std::vector<double> row;
            for (const auto& b : r.groups) row.push_back(d(a.medoid, b.medoid));
            r.medoid_distances.push_back(std::move(row));
        }
        return r;
    }

    r.mode = "dispersion-only";
    for (const auto& [label, trees] : sets) {
        std::vector<const Phylogeny*> own;
        for (const auto& t : trees) own.push_back(&t);
        const auto labels = shared_labels(own);
        GroupSummary g{label, trees.size(), 0, 0.0};
        if (labels.size() >= 4) {
            const DistanceMatrix d = rf_matrix(restricted(own, labels), std::vector<std::string>(trees.size(), label));
            g.medoid = medoid(d, label);
            g.dispersion = mean_within(d, d.members(label));
        }
        r.groups.push_back(g);
    }
    return r;
}

nlohmann::json medoids_json(const StabilityReport& r) {
    nlohmann::json j;
    j["mode"] = r.mode;
    j["common_labels"] = r.common_labels.size();
    j["groups"] = nlohmann::json::array();
    for (const auto& g : r.groups) {
        j["groups"].push_back(
            {{"group", g.label}, {"trees", g.trees}, {"medoid_row", g.medoid}, {"dispersion", g.dispersion}});
    }
    if (r.mode == "restricted") {
        j["medoid_distances"] = r.medoid_distances;
        j["mds_converged"] = r.mds.converged;
        j["negative_dims"] = r.mds.negative_dims;
    }
    return j;
}

void write_stability_report(const StabilityReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "coords.csv");
        out.precision(17);
        const std::size_t dim = r.mds.eigenvalues.size();
        out << "tree_id,group,index";
        if (dim == 2) out << ",x,y";
        else
            for (std::size_t c = 0; c < dim; ++c) out << ",x" << c + 1;
        out << ",medoid\n";
        for (std::size_t i = 0; i < r.tree_group.size(); ++i) {
            out << i << ',' << r.tree_group[i] << ',' << r.tree_index[i];
            for (std::size_t c = 0; c < dim; ++c) out << ',' << r.mds.coords[i][c];
            bool is_medoid = false;
            for (const auto& g : r.groups) {
                const bool hit = r.mode == "restricted" ? g.medoid == i
                                                        : (g.label == r.tree_group[i] && g.medoid == r.tree_index[i]);
                is_medoid = is_medoid || hit;
            }
            out << ',' << (is_medoid ? 1 : 0) << '\n';
        }
    }
    {
        std::ofstream out(dir / "medoids.json");
        out << medoids_json(r).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "eigenvalues.csv");
        out.precision(17);
        out << "component,eigenvalue\n";
        for (std::size_t c = 0; c < r.mds.eigenvalues.size(); ++c) out << c + 1 << ',' << r.mds.eigenvalues[c] << '\n';
        if (!r.mds.eigenvalues.empty()) out << "smallest," << r.mds.smallest_eigenvalue << '\n';
    }
}

}  // namespace phylokit
