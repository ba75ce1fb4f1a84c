#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "cdw/ample.hpp"
#include "oracles.hpp"

using namespace cdw;

namespace {
const BaseSeq b2 = BaseSeq::constant(2);

Clopen C(const std::string& s, const BaseSeq& b = b2) { return clopen_from_string(s, b); }

// Closure-enumeration oracle (only for tiny stages): BFS over atom
// permutations generated by the stage generators.
std::size_t closure_order(const UnitSystem& us, std::size_t cap = 100000) {
    std::set<std::vector<int>> seen;
    std::vector<GroupElement> frontier{GroupElement::identity(us.atom_count())};
    seen.insert(frontier[0].perm);
    while (!frontier.empty() && seen.size() < cap) {
        std::vector<GroupElement> next;
        for (const auto& g : frontier)
            for (const auto& h : us.generators()) {
                GroupElement gh = compose(h, g);
                if (seen.insert(gh.perm).second) next.push_back(std::move(gh));
            }
        frontier = std::move(next);
    }
    return seen.size();
}
}  // namespace

TEST_CASE("gamma_x stage 1 over the dyadic odometer is {[0],[1]} with Sym(2)") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    const auto& us = s->stage(1);
    REQUIRE(us.atom_count() == 2);
    CHECK(us.atoms()[0] == C("[0]"));
    CHECK(us.atoms()[1] == C("[1]"));
    CHECK(us.orbits().size() == 1);
    CHECK(closure_order(us) == 2);
    CHECK(check_unit_system(us).ok());
}

TEST_CASE("gamma_x stages over [0^n] have a single column and factorial group order") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    const std::size_t expected_order[] = {1, 2, 24, 40320};  // (2^n)!
    for (int n = 1; n <= 3; ++n) {
        const auto& us = s->stage(n);
        REQUIRE(us.orbits().size() == 1);
        CHECK(us.atom_count() == (1u << n));
        CHECK(closure_order(us) == expected_order[n]);
        CHECK(check_unit_system(us).ok());
    }
}

TEST_CASE("identity is in every stage") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    for (int n = 0; n <= 4; ++n) {
        const auto& us = s->stage(n);
        auto id = assemble_element(us, {});
        REQUIRE(id.has_value());
        CHECK(id->is_identity_perm());
    }
}

TEST_CASE("stages refine their predecessors") {
    auto phi = make_odometer(b2);
    for (auto s : {gamma_x_stages(phi, SymbolicPoint::parse("(0)", b2)),
                   dyadic_perm_stages(),
                   intersection_stages(phi, SymbolicPoint::parse("(0)", b2),
                                       SymbolicPoint::parse("(01)", b2))}) {
        for (int n = 1; n <= 4; ++n) CHECK(refines(s->stage(n - 1), s->stage(n)));
    }
}

TEST_CASE("dyadic_perm stages: full symmetric groups on depth-n cylinders") {
    auto s = dyadic_perm_stages();
    CHECK(s->stage(1).atom_count() == 2);
    CHECK(closure_order(s->stage(1)) == 2);
    CHECK(s->stage(2).atom_count() == 4);
    CHECK(closure_order(s->stage(2)) == 24);
    CHECK(s->stage(2).orbits().size() == 1);
    CHECK(check_unit_system(s->stage(3)).ok());
    // each stage-(n-1) permutation extends by acting identically on the last
    // letter: the canonical extension of the depth-1 swap
    const auto& us1 = s->stage(1);
    const auto& us2 = s->stage(2);
    GroupElement swap1 = us1.generators()[0];
    GroupElement ext = extend_element(swap1, us1, us2);
    CHECK(us2.apply(ext, C("[00]")) == C("[10]"));
    CHECK(us2.apply(ext, C("[01]")) == C("[11]"));
}

TEST_CASE("stage covering schedule: stage d is compatible with every depth-d clopen") {
    auto phi = make_odometer(b2);
    for (auto s : {gamma_x_stages(phi, SymbolicPoint::parse("(0)", b2)), dyadic_perm_stages()}) {
        for (int d = 0; d <= 4; ++d) {
            const auto& us = s->stage(s->stage_covering_depth(d));
            for (const auto& w : oracle::all_words(d)) CHECK(us.compatible(Clopen::cylinder(w)));
        }
    }
}

TEST_CASE("intersection stages: SameOrbitDetected for points in one orbit") {
    auto phi = make_odometer(b2);
    CHECK_THROWS_AS(intersection_stages(phi, SymbolicPoint::parse("(0)", b2),
                                        SymbolicPoint::parse("1(0)", b2)),
                    Error);
}

TEST_CASE("intersection stages have at least two columns eventually") {
    auto phi = make_odometer(b2);
    auto s = intersection_stages(phi, SymbolicPoint::parse("(0)", b2),
                                 SymbolicPoint::parse("(01)", b2));
    for (int n = 2; n <= 4; ++n) {
        CHECK(s->stage(n).orbits().size() >= 2);
        CHECK(check_unit_system(s->stage(n)).ok());
    }
}

TEST_CASE("orbit_equiv_clopen: witnesses on gamma_x stages") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    auto w = orbit_equiv_clopen(*s, C("[00]"), C("[10]"), 6);
    REQUIRE(w.has_value());
    CHECK(w->stage == 2);
    CHECK(s->stage(w->stage).apply(w->element, C("[00]")) == C("[10]"));

    auto u = clopen_union(C("[00]"), C("[11]"), b2);
    auto self = orbit_equiv_clopen(*s, u, u, 6);
    REQUIRE(self.has_value());
    CHECK(self->element.is_identity_perm());
}

TEST_CASE("orbit_equiv agrees with equal measure on gamma_x and dyadic_perm (depth 3)") {
    auto phi = make_odometer(b2);
    const auto m = odometer_ergodic_list(b2);
    for (auto s : {gamma_x_stages(phi, SymbolicPoint::parse("(0)", b2)), dyadic_perm_stages()}) {
        // transitivity through a representative makes the full pairwise check
        // equivalent: clopens of equal mass must all reach the same canonical
        // representative
        for (std::uint32_t mask = 1; mask < 255; ++mask) {
            Clopen a = oracle::clopen_from_mask(mask, 3);
            const int count = __builtin_popcount(mask);
            // canonical representative: first `count` depth-3 cylinders
            Clopen rep = oracle::clopen_from_mask((1u << count) - 1, 3);
            auto w = orbit_equiv_clopen(*s, a, rep, 5);
            REQUIRE(w.has_value());
            CHECK(s->stage(w->stage).apply(w->element, a) == rep);
        }
    }
}

TEST_CASE("intersection stages: an equal-measure pair with no witness at horizon 8") {
    auto phi = make_odometer(b2);
    auto s = intersection_stages(phi, SymbolicPoint::parse("(0)", b2),
                                 SymbolicPoint::parse("(01)", b2));
    const auto m = odometer_ergodic_list(b2);
    // scan stage-2 atom pairs of equal measure lying in different columns
    const auto& us = s->stage(2);
    bool found = false;
    for (std::size_t i = 0; i < us.atom_count() && !found; ++i)
        for (std::size_t j = i + 1; j < us.atom_count() && !found; ++j) {
            if (us.orbit_of(static_cast<int>(i)) == us.orbit_of(static_cast<int>(j))) continue;
            const auto& a = us.atoms()[i];
            const auto& b = us.atoms()[j];
            if (compare_measures(a, b, m, b2) != MeasureOrder::AllEq) continue;
            if (!orbit_equiv_clopen(*s, a, b, 8).has_value()) found = true;
        }
    CHECK(found);
}

TEST_CASE("every stage element preserves every invariant measure") {
    auto phi = make_odometer(b2);
    for (auto s : {gamma_x_stages(phi, SymbolicPoint::parse("(0)", b2)),
                   dyadic_perm_stages(),
                   intersection_stages(phi, SymbolicPoint::parse("(0)", b2),
                                       SymbolicPoint::parse("(01)", b2))}) {
        for (int n = 0; n <= 4; ++n)
            CHECK(stage_preserves_measures(s->stage(n), s->ergodic_list()).ok());
    }
}

TEST_CASE("the point x sits at the base of its column at every stage") {
    auto phi = make_odometer(b2);
    const auto x = SymbolicPoint::parse("(0)", b2);
    auto s = gamma_x_stages(phi, x);
    for (int n = 1; n <= 8; ++n) {
        const auto& us = s->stage(n);
        const int i = us.atom_containing(x);
        CHECK(us.level_of(i) == 0);
        // all witness offsets from x's atom are forward powers
        for (const auto& g : us.generators()) CHECK(us.realizer_offset(g, i) >= 0);
    }
}

TEST_CASE("stage orbit of x's atom consists exactly of forward images (n <= 3)") {
    auto phi = make_odometer(b2);
    const auto x = SymbolicPoint::parse("(0)", b2);
    auto s = gamma_x_stages(phi, x);
    for (int n = 1; n <= 3; ++n) {
        const auto& us = s->stage(n);
        const int i = us.atom_containing(x);
        const auto& orbit = us.orbits()[static_cast<std::size_t>(us.orbit_of(i))];
        // the orbit lists the column bottom-to-top: level j atom = phi^j(base)
        Clopen cur = us.atoms()[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < orbit.size(); ++j) {
            CHECK(us.atoms()[static_cast<std::size_t>(orbit[j])] == cur);
            cur = phi->apply(cur, Direction::Forward);
        }
    }
}

TEST_CASE("extend_element: identity, canonical swap, and NoMatching") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    const auto& us1 = s->stage(1);
    const auto& us2 = s->stage(2);

    GroupElement id1 = GroupElement::identity(us1.atom_count(), true);
    CHECK(extend_element(id1, us1, us2).is_identity_perm());

    GroupElement swap1 = us1.generators()[0];  // [0] <-> [1]
    GroupElement ext = extend_element(swap1, us1, us2);
    CHECK(us2.apply(ext, C("[00]")) == C("[10]"));
    CHECK(us2.apply(ext, C("[01]")) == C("[11]"));

    // the reverse policy makes a different, still valid extension
    GroupElement rev = extend_element(swap1, us1, us2, MatchPolicy::ReverseOrder);
    CHECK(us2.apply(rev, C("[00]")) == C("[11]"));

    // seeded count mismatch: a fake finer system whose orbit structure breaks
    // the cell counts
    UnitSystem fake(StageKind::Joined, b2,
                    {C("[00]"), C("[01]"), C("[10]"), C("[11]")},
                    {{0, 1}, {2}, {3}}, {});
    CHECK_THROWS_AS(extend_element(swap1, us1, fake), Error);
}

TEST_CASE("check_unit_system flags seeded failures") {
    // duplicated atom -> partition failure
    UnitSystem dup(StageKind::Joined, b2, {C("[0]"), C("[0]")}, {{0}, {1}}, {});
    auto r = check_unit_system(dup);
    CHECK_FALSE(r.ok());

    // two copies of the identity under distinct labels -> faithfulness failure
    GroupElement a = GroupElement::identity(2);
    a.name = "id";
    GroupElement b = GroupElement::identity(2);
    b.name = "ghost";
    UnitSystem unfaithful(StageKind::Joined, b2, {C("[0]"), C("[1]")}, {{0}, {1}}, {a, b});
    auto r2 = check_unit_system(unfaithful);
    CHECK_FALSE(r2.ok());
    bool flagged = false;
    for (const auto& e : r2.entries)
        if (e.check == "group_acts_faithfully" && !e.ok) flagged = true;
    CHECK(flagged);

    // identity action with a nonzero phi-power realizer
    GroupElement fake = GroupElement::identity(2, true);
    (*fake.offsets)[0] = 2;
    fake.name = "phi2";
    UnitSystem lying(StageKind::Column, b2, {C("[0]"), C("[1]")}, {{0, 1}}, {fake},
                     make_odometer(b2));
    CHECK_FALSE(check_unit_system(lying).ok());
}

TEST_CASE("group elements act on points through their realizers") {
    auto phi = make_odometer(b2);
    auto s = gamma_x_stages(phi, SymbolicPoint::parse("(0)", b2));
    const auto& us = s->stage(2);
    // move [00] to [11]: offset +3 on the column
    auto g = assemble_element(us, {{*us.atom_index(C("[00]")), *us.atom_index(C("[11]"))}});
    REQUIRE(g.has_value());
    const auto x = SymbolicPoint::parse("(0)", b2);
    const auto gx = us.apply_point(*g, x);
    CHECK(contains_point(C("[11]"), gx));
    // prefix stages relabel the leading word
    auto dp = dyadic_perm_stages();
    const auto& ps = dp->stage(2);
    auto h = assemble_element(ps, {{*ps.atom_index(C("[00]")), *ps.atom_index(C("[11]"))}});
    REQUIRE(h.has_value());
    const auto hx = ps.apply_point(*h, SymbolicPoint::parse("(0)", b2));
    CHECK(hx == SymbolicPoint::parse("11(0)", b2));
}

TEST_CASE("assemble_element composes and inverts consistently") {
    auto s = gamma_x_stages(make_odometer(b2), SymbolicPoint::parse("(0)", b2));
    const auto& us = s->stage(3);
    std::mt19937_64 rng(17);
    for (int it = 0; it < 50; ++it) {
        // random orbit-preserving pair
        const auto& orbit = us.orbits()[0];
        std::uniform_int_distribution<std::size_t> pick(0, orbit.size() - 1);
        auto g = assemble_element(us, {{orbit[pick(rng)], orbit[pick(rng)]}});
        if (!g) continue;
        auto gi = inverse(*g);
        CHECK(compose(gi, *g).is_identity_perm());
        Clopen u = oracle::clopen_from_mask(static_cast<std::uint32_t>(rng() % 255 + 1), 3);
        if (!us.compatible(u)) continue;
        CHECK(us.apply(gi, us.apply(*g, u)) == u);
    }
}
