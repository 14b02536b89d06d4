#include "phylokit/tree.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace phylokit {

NewickError::NewickError(const std::string& what, std::size_t position)
    : Error("newick: " + what + " at position " + std::to_string(position)), position_(position) {}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

bool parse_double(std::string_view s, double& out) {
    auto t = trim(s);
    if (t.empty()) return false;
    const char* first = t.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size();
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

}  // namespace

double decimal_year(std::string_view iso_date) {
    auto s = trim(iso_date);
    int y = 0, m = 0, d = 0;
    char dash1 = 0, dash2 = 0;
    std::istringstream in(s);
    in >> y >> dash1 >> m >> dash2 >> d;
    if (!in || dash1 != '-' || dash2 != '-' || m < 1 || m > 12 || d < 1 || d > 31) {
        double v = 0;
        if (parse_double(s, v)) return v;
        throw Error("unrecognized date '" + s + "' (expected yyyy-mm-dd or decimal year)");
    }
    static constexpr int days_before[] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    int doy = days_before[m - 1] + d - 1;
    if (m > 2 && is_leap(y)) ++doy;
    return y + doy / (is_leap(y) ? 366.0 : 365.0);
}

SamplingTable parse_sampling_table(std::string_view csv) {
    SamplingTable table;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty()) continue;
        auto comma = t.find(',');
        if (comma == std::string::npos)
            throw Error("sampling table line " + std::to_string(lineno) + ": expected two columns");
        auto left = trim(std::string_view(t).substr(0, comma));
        auto right = trim(std::string_view(t).substr(comma + 1));
        if (header) {
            header = false;
            if (left != "label" || (right != "time" && right != "date"))
                throw Error("sampling table header must be 'label,time' or 'label,date'");
            table.kind = right == "time" ? SamplingTable::Kind::BackwardTime
                                         : SamplingTable::Kind::CalendarDate;
            continue;
        }
        double v = 0;
        if (table.kind == SamplingTable::Kind::BackwardTime) {
            if (!parse_double(right, v) || !std::isfinite(v))
                throw Error("sampling table line " + std::to_string(lineno) + ": bad time '" + right + "'");
        } else {
            v = decimal_year(right);
        }
        table.labels.push_back(left);
        table.values.push_back(v);
    }
    if (header) throw Error("sampling table is empty");
    return table;
}

SamplingTable read_sampling_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read sampling table '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_sampling_table(ss.str());
}

// ---------------------------------------------------------------------------

Phylogeny::Phylogeny(std::vector<TreeNode> nodes, int root) : nodes_(std::move(nodes)), root_(root) {
    const int n = static_cast<int>(nodes_.size());
    if (root_ < 0 || root_ >= n) throw Error("tree: root index out of range");
    if (nodes_[root_].parent != -1) throw Error("tree: root has a parent");
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int> stack{root_};
    std::size_t visited = 0;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        if (seen[v]) throw Error("tree: cycle detected");
        seen[v] = 1;
        ++visited;
        const auto& nd = nodes_[v];
        if (nd.children.empty()) {
            tips_.push_back(v);
        } else if (nd.children.size() != 2) {
            throw Error("tree: nonbinary node with " + std::to_string(nd.children.size()) + " children");
        }
        for (int c : nd.children) {
            if (c < 0 || c >= n || nodes_[c].parent != v) throw Error("tree: inconsistent parent links");
            stack.push_back(c);
        }
    }
    if (visited != nodes_.size()) throw Error("tree: unreachable nodes");
    if (tips_.size() < 2) throw Error("tree: fewer than 2 tips");
    std::sort(tips_.begin(), tips_.end());
}

std::vector<double> Phylogeny::sampling_times() const {
    std::vector<double> out;
    out.reserve(tips_.size());
    for (int t : tips_) out.push_back(node(t).time);
    return out;
}

std::vector<double> Phylogeny::coalescent_times() const {
    std::vector<double> out;
    for (const auto& nd : nodes_)
        if (!nd.children.empty()) out.push_back(nd.time);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> Phylogeny::tip_labels() const {
    std::vector<std::string> out;
    for (int t : tips_) out.push_back(node(t).label);
    return out;
}

std::vector<int> Phylogeny::postorder() const {
    std::vector<int> order;
    order.reserve(nodes_.size());
    std::vector<int> stack{root_};
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        order.push_back(v);
        for (int c : node(v).children) stack.push_back(c);
    }
    std::reverse(order.begin(), order.end());
    return order;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kSpecial = "()[]':;,";

class NewickReader {
public:
    explicit NewickReader(std::string_view text) : s_(text) {}

    struct Parsed {
        std::vector<TreeNode> nodes;
        std::vector<char> has_length;
        int root = -1;
    };

    Parsed read() {
        Parsed out;
        std::vector<int> open;
        std::vector<std::size_t> node_pos;
        enum { Start, After } state = Start;
        int last = -1;

        auto create = [&](std::size_t at) {
            int idx = static_cast<int>(out.nodes.size());
            TreeNode nd;
            if (!open.empty()) {
                nd.parent = open.back();
                out.nodes[open.back()].children.push_back(idx);
            } else if (out.root != -1) {
                throw NewickError("unexpected second tree root", at);
            } else {
                out.root = idx;
            }
            out.nodes.push_back(std::move(nd));
            out.has_length.push_back(0);
            node_pos.push_back(at);
            return idx;
        };

        while (true) {
            skip_space();
            if (pos_ >= s_.size()) throw NewickError("unexpected end of input (missing ';')", pos_);
            char c = s_[pos_];
            if (state == Start) {
                if (c == '(') {
                    int n = create(pos_);
                    open.push_back(n);
                    ++pos_;
                    continue;
                }
                std::size_t at = pos_;
                std::string label = read_label();
                if (label.empty()) throw NewickError("empty tip label", at);
                last = create(at);
                out.nodes[last].label = std::move(label);
                state = After;
                continue;
            }
            // After a complete subtree: optional ':length', then a delimiter.
            if (c == ':') {
                ++pos_;
                skip_space();
                std::size_t at = pos_;
                std::size_t end = at;
                while (end < s_.size() && !std::isspace(static_cast<unsigned char>(s_[end])) &&
                       kSpecial.find(s_[end]) == std::string_view::npos)
                    ++end;
                double len = 0;
                if (!parse_double(s_.substr(at, end - at), len) || !std::isfinite(len))
                    throw NewickError("malformed branch length", at);
                if (len < 0) throw NewickError("negative branch length", at);
                if (out.has_length[last]) throw NewickError("duplicate branch length", at);
                out.nodes[last].length = len;
                out.has_length[last] = 1;
                pos_ = end;
                continue;
            }
            if (c == ',') {
                if (open.empty()) throw NewickError("',' outside parentheses", pos_);
                ++pos_;
                state = Start;
                continue;
            }
            if (c == ')') {
                if (open.empty()) throw NewickError("unbalanced ')'", pos_);
                last = open.back();
                open.pop_back();
                ++pos_;
                skip_space();
                if (pos_ < s_.size() && s_[pos_] != ':' && s_[pos_] != ',' && s_[pos_] != ')' &&
                    s_[pos_] != ';')
                    out.nodes[last].label = read_label();
                continue;
            }
            if (c == ';') {
                if (!open.empty()) throw NewickError("unbalanced '(' (missing ')')", pos_);
                ++pos_;
                break;
            }
            throw NewickError(std::string("unexpected character '") + c + "'", pos_);
        }
        skip_space();
        if (pos_ != s_.size()) throw NewickError("trailing characters after ';'", pos_);

        for (std::size_t i = 0; i < out.nodes.size(); ++i) {
            const auto& nd = out.nodes[i];
            if (!nd.children.empty() && nd.children.size() != 2)
                throw NewickError("nonbinary node with " + std::to_string(nd.children.size()) + " children",
                                  node_pos[i]);
            if (static_cast<int>(i) != out.root && !out.has_length[i])
                throw NewickError("missing branch length", node_pos[i]);
        }
        return out;
    }

private:
    void skip_space() {
        while (pos_ < s_.size()) {
            char c = s_[pos_];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == '[') {
                std::size_t start = pos_;
                auto close = s_.find(']', pos_);
                if (close == std::string_view::npos) throw NewickError("unterminated comment", start);
                pos_ = close + 1;
            } else {
                break;
            }
        }
    }

    std::string read_label() {
        std::string label;
        if (pos_ < s_.size() && s_[pos_] == '\'') {
            std::size_t start = pos_++;
            while (true) {
                if (pos_ >= s_.size()) throw NewickError("unterminated quoted label", start);
                char c = s_[pos_++];
                if (c == '\'') {
                    if (pos_ < s_.size() && s_[pos_] == '\'') {
                        label.push_back('\'');
                        ++pos_;
                    } else {
                        break;
                    }
                } else {
                    label.push_back(c);
                }
            }
            return label;
        }
        while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) &&
               kSpecial.find(s_[pos_]) == std::string_view::npos)
            label.push_back(s_[pos_++]);
        return label;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

Phylogeny build(NewickReader::Parsed parsed, const SamplingTable* dates) {
    auto& nodes = parsed.nodes;
    std::size_t tips = 0;
    std::unordered_set<std::string> labels;
    for (const auto& nd : nodes) {
        if (!nd.children.empty()) continue;
        ++tips;
        if (!labels.insert(nd.label).second) throw Error("newick: duplicate tip label '" + nd.label + "'");
    }
    if (tips < 2) throw Error("newick: fewer than 2 tips");

    // preorder depths
    std::vector<double> depth(nodes.size(), 0.0);
    std::vector<int> stack{parsed.root};
    std::vector<int> preorder;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        preorder.push_back(v);
        for (int c : nodes[v].children) {
            depth[c] = depth[v] + nodes[c].length;
            stack.push_back(c);
        }
    }

    double axis_offset = 0.0;
    std::optional<double> youngest;
    if (!dates) {
        double max_depth = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].children.empty()) max_depth = std::max(max_depth, depth[i]);
        const double snap = 1e-12 * std::max(1.0, max_depth);
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            double t = max_depth - depth[i];
            if (nodes[i].children.empty() && t < snap) t = 0.0;
            nodes[i].time = t;
        }
    } else {
        std::unordered_map<std::string, double> value;
        for (std::size_t i = 0; i < dates->labels.size(); ++i) value[dates->labels[i]] = dates->values[i];
        double lo = INFINITY, hi = -INFINITY;
        std::vector<std::pair<int, double>> tip_values;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i].children.empty()) continue;
            auto it = value.find(nodes[i].label);
            if (it == value.end()) throw Error("sampling table has no entry for tip '" + nodes[i].label + "'");
            tip_values.emplace_back(static_cast<int>(i), it->second);
            lo = std::min(lo, it->second);
            hi = std::max(hi, it->second);
        }
        for (auto [i, v] : tip_values) {
            if (dates->kind == SamplingTable::Kind::BackwardTime)
                nodes[i].time = v - lo;
            else
                nodes[i].time = hi - v;
        }
        if (dates->kind == SamplingTable::Kind::BackwardTime)
            axis_offset = lo;
        else
            youngest = hi;
        for (auto it = preorder.rbegin(); it != preorder.rend(); ++it) {
            auto& nd = nodes[*it];
            if (nd.children.empty()) continue;
            const auto& first = nodes[nd.children[0]];
            nd.time = first.time + first.length;
        }
    }
    Phylogeny p(std::move(nodes), parsed.root);
    p.set_axis_offset(axis_offset);
    p.set_youngest_date(youngest);
    return p;
}

}  // namespace

Phylogeny parse_newick(std::string_view text) { return build(NewickReader(text).read(), nullptr); }

Phylogeny parse_newick(std::string_view text, const SamplingTable& dates) {
    return build(NewickReader(text).read(), &dates);
}

std::vector<std::string> split_newick_trees(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false, comment = false;
    for (char c : text) {
        cur.push_back(c);
        if (comment) {
            if (c == ']') comment = false;
        } else if (quoted) {
            if (c == '\'') quoted = false;
        } else if (c == '\'') {
            quoted = true;
        } else if (c == '[') {
            comment = true;
        } else if (c == ';') {
            out.push_back(trim(cur));
            cur.clear();
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

Phylogeny read_newick_file(const std::string& path, const std::optional<std::string>& dates_path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read tree file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    auto trees = split_newick_trees(ss.str());
    if (trees.empty()) throw Error("tree file '" + path + "' contains no tree");
    if (dates_path) return parse_newick(trees.front(), read_sampling_table(*dates_path));
    return parse_newick(trees.front());
}

// ---------------------------------------------------------------------------

namespace {

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string quote_label(const std::string& label) {
    bool plain = !label.empty();
    for (char c : label)
        if (std::isspace(static_cast<unsigned char>(c)) || kSpecial.find(c) != std::string_view::npos)
            plain = false;
    if (plain) return label;
    std::string out = "'";
    for (char c : label) {
        out.push_back(c);
        if (c == '\'') out.push_back('\'');
    }
    out.push_back('\'');
    return out;
}

}  // namespace

std::string serialize_newick(const Phylogeny& p) {
    std::vector<std::string> text(p.nodes().size());
    for (int v : p.postorder()) {
        const auto& nd = p.node(v);
        std::string s;
        if (nd.children.empty()) {
            s = quote_label(nd.label);
        } else {
            s = "(" + text[nd.children[0]] + "," + text[nd.children[1]] + ")";
            text[nd.children[0]].clear();
            text[nd.children[1]].clear();
            if (!nd.label.empty()) s += quote_label(nd.label);
        }
        if (v != p.root()) {
            s += ":" + format_number(nd.length);
        } else if (nd.length > 0) {
            s += ":" + format_number(nd.length);
        }
        text[v] = std::move(s);
    }
    return text[p.root()] + ";";
}

// ---------------------------------------------------------------------------

namespace {

std::string describe(const Phylogeny& p, int v) {
    const auto& nd = p.node(v);
    if (!nd.label.empty()) return "'" + nd.label + "'";
    return "#" + std::to_string(v);
}

}  // namespace

std::vector<Violation> validate(const Phylogeny& p) {
    std::vector<Violation> out;
    constexpr double kTimeTol = 1e-6;
    std::unordered_set<std::string> labels;
    double min_tip = INFINITY;
    for (int t : p.tips()) {
        const auto& nd = p.node(t);
        min_tip = std::min(min_tip, nd.time);
        if (nd.label.empty()) out.push_back({"empty-label", "tip " + describe(p, t) + " has no label", t});
        else if (!labels.insert(nd.label).second)
            out.push_back({"duplicate-label", "tip label " + describe(p, t) + " appears twice", t});
        if (nd.time < 0) out.push_back({"negative-time", "tip " + describe(p, t) + " has negative time", t});
    }
    if (std::abs(min_tip) > 1e-9)
        out.push_back({"origin", "most recent tip is at time " + format_number(min_tip) + ", expected 0", -1});

    for (std::size_t i = 0; i < p.nodes().size(); ++i) {
        int v = static_cast<int>(i);
        const auto& nd = p.node(v);
        if (v == p.root()) continue;
        const auto& parent = p.node(nd.parent);
        if (!(nd.length > 0)) {
            out.push_back({"nonpositive-branch",
                           "edge above node " + describe(p, v) + " has length " + format_number(nd.length), v});
        }
        if (nd.time > parent.time) {
            out.push_back({"child-older-than-parent",
                           "node " + describe(p, v) + " (time " + format_number(nd.time) +
                               ") is not younger than its parent (time " + format_number(parent.time) + ")",
                           v});
        }
        if (std::abs(parent.time - (nd.time + nd.length)) > kTimeTol) {
            out.push_back({"time-inconsistency",
                           "node " + describe(p, v) + ": time + branch length = " +
                               format_number(nd.time + nd.length) + " but parent time is " +
                               format_number(parent.time),
                           v});
        }
    }
    return out;
}

std::string violations_json(const std::vector<Violation>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& x : v) j.push_back({{"code", x.code}, {"message", x.message}, {"node", x.node}});
    return j.dump(2);
}

// ---------------------------------------------------------------------------

CoalescentSummary CoalescentSummary::from_events(std::vector<CoalescentEvent> events) {
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.kind == EventKind::Sampling && b.kind == EventKind::Coalescence;
    });
    CoalescentSummary s;
    for (const auto& e : events) {
        if (e.kind == EventKind::Sampling && !s.events_.empty() &&
            s.events_.back().kind == EventKind::Sampling && s.events_.back().time == e.time) {
            s.events_.back().count += e.count;
        } else {
            s.events_.push_back(e);
        }
    }
    int a = 0;
    for (const auto& e : s.events_) {
        a += e.kind == EventKind::Sampling ? e.count : -1;
        s.lineages_.push_back(a);
    }
    return s;
}

CoalescentSummary CoalescentSummary::from_times(std::span<const double> sampling_times,
                                                std::span<const double> coalescent_times) {
    std::vector<CoalescentEvent> ev;
    for (double y : sampling_times) ev.push_back({y, EventKind::Sampling, 1});
    for (double t : coalescent_times) ev.push_back({t, EventKind::Coalescence, 1});
    return from_events(std::move(ev));
}

int CoalescentSummary::lineages_at(double t) const {
    auto it = std::upper_bound(events_.begin(), events_.end(), t,
                               [](double v, const CoalescentEvent& e) { return v < e.time; });
    if (it == events_.begin()) return 0;
    return lineages_[static_cast<std::size_t>(it - events_.begin()) - 1];
}

double CoalescentSummary::root_time() const { return events_.empty() ? 0.0 : events_.back().time; }

int CoalescentSummary::sample_count() const {
    int n = 0;
    for (const auto& e : events_)
        if (e.kind == EventKind::Sampling) n += e.count;
    return n;
}

int CoalescentSummary::coalescence_count() const {
    int n = 0;
    for (const auto& e : events_)
        if (e.kind == EventKind::Coalescence) ++n;
    return n;
}

std::vector<SamplingEvent> CoalescentSummary::sampling_events() const {
    std::vector<SamplingEvent> out;
    for (const auto& e : events_)
        if (e.kind == EventKind::Sampling) out.push_back({e.time, e.count});
    return out;
}

std::vector<double> CoalescentSummary::coalescent_times() const {
    std::vector<double> out;
    for (const auto& e : events_)
        if (e.kind == EventKind::Coalescence) out.push_back(e.time);
    return out;
}

bool CoalescentSummary::well_formed() const {
    int a = 0;
    for (const auto& e : events_) {
        if (e.kind == EventKind::Coalescence && a < 2) return false;
        a += e.kind == EventKind::Sampling ? e.count : -1;
    }
    return true;
}

CoalescentSummary summarize(const Phylogeny& p, double shift) {
    std::vector<CoalescentEvent> ev;
    ev.reserve(p.nodes().size());
    for (const auto& nd : p.nodes())
        ev.push_back({nd.time + shift, nd.children.empty() ? EventKind::Sampling : EventKind::Coalescence, 1});
    return CoalescentSummary::from_events(std::move(ev));
}

// ---------------------------------------------------------------------------

namespace {

// (sorted tip labels, time) for every internal node
std::vector<std::pair<std::vector<std::string>, double>> clades(const Phylogeny& p) {
    std::vector<std::vector<std::string>> below(p.nodes().size());
    std::vector<std::pair<std::vector<std::string>, double>> out;
    for (int v : p.postorder()) {
        const auto& nd = p.node(v);
        if (nd.children.empty()) {
            below[v] = {nd.label};
            continue;
        }
        auto& mine = below[v];
        for (int c : nd.children) {
            mine.insert(mine.end(), below[c].begin(), below[c].end());
            below[c].clear();
            below[c].shrink_to_fit();
        }
        std::sort(mine.begin(), mine.end());
        out.emplace_back(mine, nd.time);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

}  // namespace

bool equivalent(const Phylogeny& a, const Phylogeny& b, double tol) {
    if (a.tip_count() != b.tip_count()) return false;
    std::map<std::string, double> ta, tb;
    for (int t : a.tips()) ta[a.node(t).label] = a.node(t).time;
    for (int t : b.tips()) tb[b.node(t).label] = b.node(t).time;
    if (ta.size() != tb.size()) return false;
    for (auto ia = ta.begin(), ib = tb.begin(); ia != ta.end(); ++ia, ++ib)
        if (ia->first != ib->first || std::abs(ia->second - ib->second) > tol) return false;
    auto ca = clades(a), cb = clades(b);
    if (ca.size() != cb.size()) return false;
    for (std::size_t i = 0; i < ca.size(); ++i)
        if (ca[i].first != cb[i].first || std::abs(ca[i].second - cb[i].second) > tol) return false;
    return true;
}

Phylogeny restrict_to_labels(const Phylogeny& p, const std::vector<std::string>& keep) {
    std::unordered_set<std::string> wanted(keep.begin(), keep.end());
    std::vector<TreeNode> out;
    std::vector<int> mapped(p.nodes().size(), -1);
    for (int v : p.postorder()) {
        const auto& nd = p.node(v);
        if (nd.children.empty()) {
            if (!wanted.count(nd.label)) continue;
            TreeNode t;
            t.label = nd.label;
            t.time = nd.time;
            mapped[v] = static_cast<int>(out.size());
            out.push_back(std::move(t));
            continue;
        }
        std::vector<int> kids;
        for (int c : nd.children)
            if (mapped[c] != -1) kids.push_back(mapped[c]);
        if (kids.empty()) continue;
        if (kids.size() == 1) {
            mapped[v] = kids[0];
            continue;
        }
        TreeNode t;
        t.label = nd.label;
        t.time = nd.time;
        t.children = kids;
        int idx = static_cast<int>(out.size());
        for (int k : kids) out[k].parent = idx;
        mapped[v] = idx;
        out.push_back(std::move(t));
    }
    int root = mapped[p.root()];
    if (root < 0 || out[root].children.empty()) throw Error("restricted tree has fewer than 2 tips");
    double shift = INFINITY;
    for (const auto& nd : out)
        if (nd.children.empty()) shift = std::min(shift, nd.time);
    for (auto& nd : out) {
        nd.time -= shift;
        nd.length = 0.0;
    }
    for (auto& nd : out)
        if (nd.parent != -1) nd.length = out[nd.parent].time - nd.time;
    Phylogeny r(std::move(out), root);
    r.set_axis_offset(p.axis_offset() + shift);
    if (p.youngest_date()) r.set_youngest_date(*p.youngest_date() - shift);
    return r;
}

}  // namespace phylokit
