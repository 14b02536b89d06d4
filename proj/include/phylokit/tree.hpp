#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phylokit/error.hpp"

namespace phylokit {

class NewickError : public Error {
public:
    NewickError(const std::string& what, std::size_t position);
    std::size_t position() const { return position_; }

private:
    std::size_t position_;
};

struct TreeNode {
    std::string label;
    int parent = -1;
    std::vector<int> children;
    double length = 0.0;  // edge to the parent (root: optional stem, 0 if absent)
    double time = 0.0;    // backwards time, 0 at the most recent tip
};

// Optional tip-date table. Numeric `time` columns are backwards times on a
// shared axis; `date` columns are calendar dates (ISO yyyy-mm-dd or decimal year).
struct SamplingTable {
    enum class Kind { BackwardTime, CalendarDate };
    Kind kind = Kind::BackwardTime;
    std::vector<std::string> labels;
    std::vector<double> values;  // backwards time, or decimal year for calendar dates
};

SamplingTable parse_sampling_table(std::string_view csv);
SamplingTable read_sampling_table(const std::string& path);
double decimal_year(std::string_view iso_date);

// A timed binary tree. Times run backwards from the most recent tip (t = 0).
//
// The constructor enforces structure only (single root, binary internal nodes,
// at least two tips, parent/child links consistent). Soft invariants such as
// strictly positive branch lengths and node-time consistency are reported by
// validate().
class Phylogeny {
public:
    Phylogeny(std::vector<TreeNode> nodes, int root);

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const TreeNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    int root() const { return root_; }
    std::size_t tip_count() const { return tips_.size(); }
    std::size_t internal_count() const { return nodes_.size() - tips_.size(); }
    const std::vector<int>& tips() const { return tips_; }
    bool is_tip(int i) const { return node(i).children.empty(); }

    double root_time() const { return node(root_).time; }
    std::vector<double> sampling_times() const;    // in tips() order
    std::vector<double> coalescent_times() const;  // ascending
    std::vector<std::string> tip_labels() const;   // in tips() order

    // Position of the most recent tip on an external backwards-time axis
    // (0 unless a numeric date table placed it elsewhere).
    double axis_offset() const { return axis_offset_; }
    // Calendar date (decimal year) of the most recent tip, when known.
    std::optional<double> youngest_date() const { return youngest_date_; }

    void set_axis_offset(double offset) { axis_offset_ = offset; }
    void set_youngest_date(std::optional<double> d) { youngest_date_ = d; }

    std::vector<int> postorder() const;

private:
    std::vector<TreeNode> nodes_;
    int root_;
    std::vector<int> tips_;
    double axis_offset_ = 0.0;
    std::optional<double> youngest_date_;
};

// Parses one Newick tree. Tip times are derived from root-to-tip distances
// unless a sampling table is supplied, in which case tip times come from the
// table and internal times from the first child; disagreement shows up in
// validate().
Phylogeny parse_newick(std::string_view text);
Phylogeny parse_newick(std::string_view text, const SamplingTable& dates);
std::vector<std::string> split_newick_trees(std::string_view text);
Phylogeny read_newick_file(const std::string& path, const std::optional<std::string>& dates_path = {});

std::string serialize_newick(const Phylogeny& p);

struct Violation {
    std::string code;     // e.g. "nonpositive-branch", "time-inconsistency"
    std::string message;
    int node = -1;
};

std::vector<Violation> validate(const Phylogeny& p);
std::string violations_json(const std::vector<Violation>& v);

enum class EventKind { Sampling, Coalescence };

struct CoalescentEvent {
    double time;
    EventKind kind;
    int count;  // samples at a sampling event, 1 for a coalescence
};

struct SamplingEvent {
    double time;
    int count;
};

// Time-sorted sampling/coalescence events with the lineage count A(t) on each
// inter-event interval. lineages()[j] holds A on [event j, event j+1); the
// final entry (after the root) is 1.
class CoalescentSummary {
public:
    // Sorts (samples before coalescences at equal times) and merges tied
    // samples. Does not check that A >= 2 at every coalescence.
    static CoalescentSummary from_events(std::vector<CoalescentEvent> events);
    static CoalescentSummary from_times(std::span<const double> sampling_times,
                                        std::span<const double> coalescent_times);

    const std::vector<CoalescentEvent>& events() const { return events_; }
    const std::vector<int>& lineages() const { return lineages_; }
    int lineages_at(double t) const;
    double root_time() const;
    int sample_count() const;
    int coalescence_count() const;
    std::vector<SamplingEvent> sampling_events() const;
    std::vector<double> coalescent_times() const;
    // true if A >= 2 just before each coalescence and A >= 0 throughout
    bool well_formed() const;

private:
    std::vector<CoalescentEvent> events_;
    std::vector<int> lineages_;
};

CoalescentSummary summarize(const Phylogeny& p, double shift = 0.0);

// Equality up to child ordering: tip label/time pairs, clade structure and
// node times within tol.
bool equivalent(const Phylogeny& a, const Phylogeny& b, double tol = 1e-9);

// Prunes the tree to the given tips, suppressing unary nodes; times kept.
Phylogeny restrict_to_labels(const Phylogeny& p, const std::vector<std::string>& keep);

}  // namespace phylokit
