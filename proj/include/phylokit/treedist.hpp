#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phylokit/tree.hpp"

namespace phylokit {

// Symmetric k x k matrix with zero diagonal and a group label per row.
class DistanceMatrix {
public:
    DistanceMatrix(std::size_t k, std::vector<std::string> groups);
    DistanceMatrix(std::vector<std::vector<double>> rows, std::vector<std::string> groups);

    std::size_t size() const { return k_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * k_ + j]; }
    void set(std::size_t i, std::size_t j, double v);  // sets both (i,j) and (j,i)
    const std::vector<std::string>& groups() const { return groups_; }
    std::vector<std::size_t> members(const std::string& group) const;

private:
    std::size_t k_;
    std::vector<double> d_;
    std::vector<std::string> groups_;
};

// Nontrivial bipartitions of the unrooted topology over the sorted tip labels,
// each as a bitmask normalised to exclude the first label.
std::vector<std::vector<std::uint64_t>> unrooted_splits(const Phylogeny& p);

// Robinson-Foulds distance between unrooted topologies; tip label sets must match.
int rf_distance(const Phylogeny& a, const Phylogeny& b);

DistanceMatrix rf_matrix(const std::vector<Phylogeny>& trees, std::vector<std::string> groups);

struct MdsResult {
    std::vector<std::vector<double>> coords;  // k rows, dim columns
    std::vector<double> eigenvalues;          // top dim, descending
    double smallest_eigenvalue = 0.0;
    std::vector<std::size_t> negative_dims;   // requested dims whose eigenvalue is negative (coordinate 0)
    bool converged = true;
};

// Classical (Torgerson) scaling: power iteration with deflation on -1/2 J D^2 J.
MdsResult classical_mds(const DistanceMatrix& d, std::size_t dim = 2, double tol = 1e-10);

// Row of `group` minimising the summed distance to the group; lowest index on ties.
std::size_t medoid(const DistanceMatrix& d, const std::string& group);

struct GroupSummary {
    std::string label;
    std::size_t trees = 0;
    std::size_t medoid = 0;  // row in the pooled matrix (restricted mode) or within the group
    double dispersion = 0.0;  // mean within-group pairwise distance
};

struct StabilityReport {
    std::string mode;  // "restricted" or "dispersion-only"
    std::vector<std::string> common_labels;
    std::vector<std::string> tree_group;
    std::vector<std::size_t> tree_index;  // position within its group
    std::vector<GroupSummary> groups;
    std::vector<std::vector<double>> medoid_distances;  // restricted mode only
    MdsResult mds;                                      // restricted mode only
};

// Pools all trees, restricts them to the shared tip labels (needs >= 4 shared
// labels for nontrivial splits) and embeds them jointly. Otherwise falls back
// to per-group dispersion computed on each group's own shared labels.
StabilityReport stability_report(const std::vector<std::pair<std::string, std::vector<Phylogeny>>>& sets,
                                 std::size_t dim = 2);

nlohmann::json medoids_json(const StabilityReport& r);
// coords.csv, medoids.json, eigenvalues.csv
void write_stability_report(const StabilityReport& r, const std::filesystem::path& dir);

}  // namespace phylokit
