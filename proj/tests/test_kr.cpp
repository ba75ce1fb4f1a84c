#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>

#include "cdw/kr.hpp"
#include "oracles.hpp"

using namespace cdw;

namespace {
const BaseSeq b2 = BaseSeq::constant(2);

Clopen C(const std::string& s, const BaseSeq& b = b2) { return clopen_from_string(s, b); }

// Return-time oracle: simulate addition on depth-D words and record, for each
// word whose cylinder lies in U, the first-return time. D must be at least
// the depth of U plus the horizon needed.
std::map<long long, std::vector<Word>> oracle_return_times(const Clopen& u, int D,
                                                           const BaseSeq& bases) {
    const auto in_u = refine_to_depth(u, D, bases);
    std::map<long long, std::vector<Word>> out;
    for (const auto& w : in_u) {
        Word cur = oracle::add_one(w, bases);
        long long t = 1;
        while (std::find(in_u.begin(), in_u.end(), cur) == in_u.end()) {
            cur = oracle::add_one(cur, bases);
            ++t;
        }
        out[t].push_back(w);
    }
    return out;
}
}  // namespace

TEST_CASE("first return to [0] is one column of height 2") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[0]"));
    REQUIRE(p.columns().size() == 1);
    CHECK(p.columns()[0].atoms == std::vector<Clopen>{C("[0]"), C("[1]")});
    CHECK(p.base() == C("[0]"));
    CHECK(verify_kr(p).ok());
    // oracle: every depth-2 word in [0] returns in exactly 2 steps
    auto times = oracle_return_times(C("[0]"), 2, b2);
    CHECK(times.size() == 1);
    CHECK(times.begin()->first == 2);
}

TEST_CASE("first return to [00] stacks the four depth-2 cylinders in addition order") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[00]"));
    REQUIRE(p.columns().size() == 1);
    CHECK(p.columns()[0].atoms ==
          std::vector<Clopen>{C("[00]"), C("[10]"), C("[01]"), C("[11]")});
    CHECK(verify_kr(p).ok());
    auto times = oracle_return_times(C("[00]"), 2, b2);
    CHECK(times.begin()->first == 4);
}

TEST_CASE("first return to the whole space is trivial") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, Clopen::whole_space());
    REQUIRE(p.columns().size() == 1);
    CHECK(p.columns()[0].height() == 1);
    CHECK(p.columns()[0].atoms[0] == Clopen::whole_space());
    CHECK(verify_kr(p).ok());
}

TEST_CASE("first return with several columns: base [0] union deeper cylinder") {
    auto phi = make_odometer(b2);
    // base {[0], [11]}: return times differ across the base
    auto base = clopen_union(C("[0]"), C("[11]"), b2);
    auto p = first_return_partition(phi, base);
    CHECK(verify_kr(p).ok());
    CHECK(p.base() == base);
    // one column per return time; the oracle gives time 1 for [01] and [11]
    // (their successors 11 and 00 lie in the base) and time 2 for [00]
    auto times = oracle_return_times(base, 2, b2);
    REQUIRE(times.size() == p.columns().size());
    std::size_t total_atoms = 0;
    for (const auto& [t, ws] : times) total_atoms += static_cast<std::size_t>(t);
    CHECK(p.all_atoms().size() == total_atoms);
    CHECK(p.columns()[0].atoms[0] == C("[01,11]"));
    CHECK(p.columns()[1].atoms == std::vector<Clopen>{C("[00]"), C("[10]")});
}

TEST_CASE("nonempty base below the horizon raises NonMinimalTimeout") {
    auto phi = make_odometer(b2);
    CHECK_THROWS_AS(first_return_partition(phi, C("[0000]"), 3), Error);
}

TEST_CASE("make_compatible splits columns by the trace pattern") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[0]"));
    auto q = make_compatible(p, C("[01]"));
    CHECK(verify_kr(q).ok());
    // [01] must now be an atom, and the expected split is the depth-2 one
    REQUIRE(q.columns().size() == 2);
    CHECK(q.columns()[0].atoms == std::vector<Clopen>{C("[00]"), C("[10]")});
    CHECK(q.columns()[1].atoms == std::vector<Clopen>{C("[01]"), C("[11]")});

    // compatible input is returned unchanged
    auto r = make_compatible(q, C("[01]"));
    CHECK(kr_to_json(r) == kr_to_json(q));
    auto s = make_compatible(p, Clopen::whole_space());
    CHECK(kr_to_json(s) == kr_to_json(p));
}

TEST_CASE("shrink_base matches the direct first-return tower") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[0]"));
    auto q = shrink_base(p, C("[00]"));
    auto direct = first_return_partition(phi, C("[00]"));
    CHECK(kr_to_json(q) == kr_to_json(direct));

    CHECK(kr_to_json(shrink_base(p, C("[0]"))) == kr_to_json(p));

    auto deep = shrink_base(first_return_partition(phi, C("[00]")), C("[000]"));
    REQUIRE(deep.columns().size() == 1);
    CHECK(deep.columns()[0].height() == 8);
    CHECK(verify_kr(deep).ok());
}

TEST_CASE("shrink_base refines the original partition") {
    auto phi = make_odometer(b2);
    auto p = make_compatible(first_return_partition(phi, C("[0]")), C("[01]"));
    auto q = shrink_base(p, C("[00]"));
    CHECK(verify_kr(q).ok());
    for (const auto& atom : q.all_atoms()) {
        bool inside_some = false;
        for (const auto& up : p.all_atoms())
            if (clopen_subset(atom, up, b2)) {
                inside_some = true;
                break;
            }
        CHECK(inside_some);
    }
    CHECK(clopen_subset(q.base(), p.base(), b2));
}

TEST_CASE("dyadic towers over [0^n]: one column, height 2^n, addition order") {
    auto phi = make_odometer(b2);
    for (int n = 1; n <= 10; ++n) {
        Word w(static_cast<std::size_t>(n), 0);
        auto p = first_return_partition(phi, Clopen::cylinder(w));
        REQUIRE(p.columns().size() == 1);
        REQUIRE(p.columns()[0].height() == (1ULL << n));
        // atoms are exactly the depth-n cylinders in addition order
        Word cur = w;
        for (std::size_t j = 0; j < p.columns()[0].height(); ++j) {
            CHECK(p.columns()[0].atoms[j] == Clopen::cylinder(cur));
            cur = oracle::add_one(cur, b2);
        }
        CHECK(verify_kr(p).ok());
    }
}

TEST_CASE("height growth under base shrinking") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[0]"));
    for (const std::string v : {"[00]", "[000]", "[001]"}) {
        auto q = shrink_base(p, C(v));
        CHECK(q.min_height() >= p.min_height());
    }
}

TEST_CASE("make_compatible is idempotent") {
    auto phi = make_odometer(b2);
    std::mt19937_64 rng(21);
    for (int it = 0; it < 20; ++it) {
        Clopen u = oracle::random_clopen(rng, 3);
        auto p = first_return_partition(phi, C("[0]"));
        auto once = make_compatible(p, u);
        auto twice = make_compatible(once, u);
        CHECK(kr_to_json(once) == kr_to_json(twice));
    }
}

TEST_CASE("verify_kr flags seeded failures") {
    auto phi = make_odometer(b2);
    auto good = first_return_partition(phi, C("[00]"));

    // swap two atoms mid-column
    auto cols = good.columns();
    std::swap(cols[0].atoms[1], cols[0].atoms[2]);
    KRPartition broken(phi, cols);
    auto r = verify_kr(broken);
    CHECK_FALSE(r.ok());
    bool found = false;
    for (const auto& e : r.entries)
        if (e.check == "columns_mapped_upward" && !e.ok) found = true;
    CHECK(found);

    // base replaced by a wrong clopen
    KRPartition wrong_base(phi, good.columns(), C("[1]"), good.top());
    auto r2 = verify_kr(wrong_base);
    CHECK_FALSE(r2.ok());
    found = false;
    for (const auto& e : r2.entries)
        if (e.check == "base_is_union_of_column_bases" && !e.ok) found = true;
    CHECK(found);
}

TEST_CASE("exports carry the full column structure") {
    auto phi = make_odometer(b2);
    auto p = first_return_partition(phi, C("[00]"));
    const auto j = kr_to_json(p);
    CHECK(j["columns"].size() == 1);
    CHECK(j["columns"][0].size() == 4);
    CHECK(j["base"] == "[00]");
    const auto dot = kr_to_dot(p);
    CHECK(dot.find("digraph tower") != std::string::npos);
    CHECK(dot.find("[00]") != std::string::npos);
}
