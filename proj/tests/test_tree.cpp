#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "phylokit/coalescent.hpp"
#include "phylokit/tree.hpp"

using namespace phylokit;

namespace {

bool has_code(const std::vector<Violation>& v, const std::string& code) {
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.code == code; });
}

Phylogeny random_tree(std::size_t n, std::uint64_t seed, bool serial) {
    Rng rng(seed);
    std::vector<SamplingEvent> samples;
    std::uniform_real_distribution<double> u(0.0, 2.0);
    samples.push_back({0.0, 1});
    for (std::size_t i = 1; i < n; ++i) samples.push_back({serial ? u(rng) : 0.0, 1});
    return simulate_coalescent(samples, GridFunction::constant(1.0, 1, 1.5), rng);
}

}  // namespace

TEST_SUITE("tree") {

TEST_CASE("three-tip isochronous tree") {
    auto p = parse_newick("((A:1.0,B:1.0):1.0,C:2.0);");
    CHECK(p.tip_count() == 3);
    CHECK(p.root_time() == doctest::Approx(2.0).epsilon(1e-15));
    for (double y : p.sampling_times()) CHECK(y == 0.0);
    CHECK(validate(p).empty());
}

TEST_CASE("single tip is rejected") {
    CHECK_THROWS_AS(parse_newick("(A:1.0);"), Error);
    CHECK_THROWS_AS(parse_newick("A;"), Error);
}

TEST_CASE("structural parse errors") {
    CHECK_THROWS_AS(parse_newick("((A:1,B:1):1,C);"), NewickError);      // missing length
    CHECK_THROWS_AS(parse_newick("((A:1,B:-1):1,C:2);"), NewickError);   // negative length
    CHECK_THROWS_AS(parse_newick("(A:1,B:1,C:1);"), Error);              // nonbinary
    CHECK_THROWS_AS(parse_newick("((A:1,B:1):1,C:2)"), NewickError);     // missing ';'
    CHECK_THROWS_AS(parse_newick("((A:1,A:1):1,C:2);"), Error);          // duplicate label
    try {
        parse_newick("((A:1,B:1):1,C:x);");
        FAIL("expected a parse error");
    } catch (const NewickError& e) {
        CHECK(e.position() > 10);
    }
}

TEST_CASE("quoted labels and comments") {
    auto p = parse_newick("(('a b':1[&rate=1],'it''s':1):1,C:2);");
    auto labels = p.tip_labels();
    CHECK(std::find(labels.begin(), labels.end(), "a b") != labels.end());
    CHECK(std::find(labels.begin(), labels.end(), "it's") != labels.end());
    auto q = parse_newick(serialize_newick(p));
    CHECK(equivalent(p, q));
}

TEST_CASE("two-tip serialization") {
    auto p = parse_newick("(A:1,B:1);");
    CHECK(serialize_newick(p) == "(A:1,B:1);");
}

TEST_CASE("heterochronous branch lengths from times") {
    std::vector<TreeNode> nodes(3);
    nodes[0] = {"A", 2, {}, 0.0, 0.0};
    nodes[1] = {"B", 2, {}, 0.0, 0.5};
    nodes[2] = {"", -1, {0, 1}, 0.0, 1.0};
    for (int i = 0; i < 2; ++i) nodes[i].length = nodes[2].time - nodes[i].time;
    Phylogeny p(nodes, 2);
    CHECK(serialize_newick(p) == "(A:1,B:0.5);");
    auto q = parse_newick(serialize_newick(p));
    auto y = q.sampling_times();
    std::sort(y.begin(), y.end());
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("round trip of a four-tip tree") {
    auto p = parse_newick("((A:1,B:1):1,(C:1,D:1):1);");
    CHECK(equivalent(p, parse_newick(serialize_newick(p))));
}

TEST_CASE("round trip of random heterochronous trees") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto p = random_tree(50, seed, true);
        const std::string once = serialize_newick(p);
        auto q = parse_newick(once);
        CHECK(equivalent(p, q, 1e-9));
        CHECK(serialize_newick(q) == once);
        CHECK(validate(q).empty());
    }
}

TEST_CASE("summaries of small trees") {
    SUBCASE("two tips") {
        auto s = summarize(parse_newick("(A:1,B:1);"));
        CHECK(s.lineages_at(0.5) == 2);
        CHECK(s.lineages_at(1.0) == 1);
        CHECK(s.root_time() == 1.0);
    }
    SUBCASE("three tips") {
        auto s = summarize(parse_newick("((A:1,B:1):1,C:2);"));
        CHECK(s.lineages_at(0.5) == 3);
        CHECK(s.lineages_at(1.5) == 2);
        CHECK(s.lineages().back() == 1);
    }
    SUBCASE("heterochronous hand enumeration") {
        std::vector<double> y{0, 0, 0.5}, t{0.3, 1.0};
        auto s = CoalescentSummary::from_times(y, t);
        CHECK(s.lineages_at(0.1) == 2);
        CHECK(s.lineages_at(0.4) == 1);
        CHECK(s.lineages_at(0.7) == 2);
        CHECK(s.lineages_at(1.5) == 1);
        CHECK(s.sampling_events().size() == 2);  // tied samples merged
        CHECK(s.sampling_events()[0].count == 2);
        CHECK(s.well_formed());
    }
    SUBCASE("samples sort before coalescences at equal times") {
        std::vector<double> y{0, 1.0}, t{1.0};
        auto s = CoalescentSummary::from_times(y, t);
        CHECK(s.events()[1].kind == EventKind::Sampling);
        CHECK(s.well_formed());
    }
}

TEST_CASE("summary is invariant to child order") {
    auto a = summarize(parse_newick("((A:1,B:1.5):0.5,(C:0.2,D:1):1.2);"));
    auto b = summarize(parse_newick("((D:1,C:0.2):1.2,(B:1.5,A:1):0.5);"));
    REQUIRE(a.events().size() == b.events().size());
    for (std::size_t i = 0; i < a.events().size(); ++i) {
        CHECK(a.events()[i].time == doctest::Approx(b.events()[i].time).epsilon(1e-12));
        CHECK(a.lineages()[i] == b.lineages()[i]);
    }
}

TEST_CASE("additive lineage bookkeeping ends with one lineage") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto s = summarize(random_tree(30, seed, true));
        int a = 0;
        for (const auto& e : s.events()) a += e.kind == EventKind::Sampling ? e.count : -1;
        CHECK(a == 1);
        CHECK(s.lineages().back() == 1);
    }
}

TEST_CASE("validation reports") {
    CHECK(validate(parse_newick("((A:1,B:1):1,C:2);")).empty());

    auto zero = validate(parse_newick("((A:1,B:1):0,C:1);"));
    REQUIRE(zero.size() == 1);
    CHECK(zero[0].code == "nonpositive-branch");

    auto dates = parse_sampling_table("label,time\nA,0\nB,0\nC,0.5\n");
    auto inconsistent = validate(parse_newick("((A:1,B:1.2):1,C:2);", dates));
    CHECK(has_code(inconsistent, "time-inconsistency"));
}

TEST_CASE("sampling tables") {
    CHECK(decimal_year("2021-01-01") == doctest::Approx(2021.0));
    CHECK(decimal_year("2020-07-02") == doctest::Approx(2020.5).epsilon(1e-3));

    auto backward = parse_sampling_table("label,time\nA,1.5\nB,2\n");
    auto p = parse_newick("(A:1,B:0.5);", backward);
    CHECK(p.axis_offset() == 1.5);
    auto y = p.sampling_times();
    CHECK(*std::max_element(y.begin(), y.end()) == doctest::Approx(0.5));

    auto calendar = parse_sampling_table("label,date\nA,2021-01-01\nB,2020.5\n");
    auto q = parse_newick("(A:1,B:0.5);", calendar);
    REQUIRE(q.youngest_date().has_value());
    CHECK(*q.youngest_date() == doctest::Approx(2021.0));

    CHECK_THROWS_AS(parse_newick("(A:1,X:1);", backward), Error);
}

TEST_CASE("multi-tree files split on semicolons") {
    auto trees = split_newick_trees("(A:1,B:1);\n((A:1,B:1):1,C:2);\n\n");
    CHECK(trees.size() == 2);
}

TEST_CASE("restriction suppresses unary nodes") {
    auto p = parse_newick("(((A:1,B:1):1,C:2):1,D:3);");
    auto r = restrict_to_labels(p, {"A", "C", "D"});
    CHECK(r.tip_count() == 3);
    CHECK(r.internal_count() == 2);
    CHECK(validate(r).empty());
}

TEST_CASE("malformed input never crashes") {
    const std::string base = "(('x y':1.5,B:2e-1)[c]:0.25,(C:1,D:1):1);";
    const std::string alphabet = "();:,'[]AB0.1-e ";
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string s = base;
        const int edits = 1 + static_cast<int>(rng() % 4);
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng() % (s.size() + 1);
            switch (rng() % 3) {
            case 0: s.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
            case 1: if (pos < s.size()) s.erase(pos, 1); break;
            default: if (pos < s.size()) s[pos] = alphabet[rng() % alphabet.size()];
            }
        }
        try {
            auto p = parse_newick(s);
            (void)validate(p);
            (void)summarize(p);
        } catch (const Error&) {
        }
    }
}

}  // TEST_SUITE
