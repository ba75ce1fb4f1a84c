#include "cdw/gw.hpp"

#include <algorithm>

namespace cdw {

std::vector<long long> count_profile(const UnitSystem& us, const Clopen& a) {
    return us.counts_per_orbit(a);
}

std::vector<long long> count_profile(const KRPartition& p, const Clopen& a) {
    return count_profile(UnitSystem::from_kr(p), a);
}

namespace {

StageWitness subequivalence_impl(const StageSequence& s, const ErgodicList& m,
                                 const std::vector<std::pair<Clopen, Clopen>>& pairs,
                                 int max_stage) {
    const BaseSeq& bases = s.bases();
    for (const auto& [a, b] : pairs) {
        if (a.is_empty()) continue;
        const auto order = compare_measures(a, b, m, bases);
        if (order != MeasureOrder::AllLt)
            raise(ErrorKind::HypothesisViolated,
                  "need mu(" + clopen_to_string(a) + ") < mu(" + clopen_to_string(b) +
                      ") for all measures, got " + measure_order_name(order));
    }
    for (std::size_t i = 0; i < pairs.size(); ++i)
        for (std::size_t j = i + 1; j < pairs.size(); ++j) {
            if (!clopen_disjoint(pairs[i].first, pairs[j].first, bases) ||
                !clopen_disjoint(pairs[i].second, pairs[j].second, bases))
                raise(ErrorKind::HypothesisViolated,
                      "sources and targets must be pairwise disjoint");
        }

    for (int n = 0; n <= max_stage; ++n) {
        const UnitSystem& us = s.stage(n);
        bool compatible = true;
        for (const auto& [a, b] : pairs)
            compatible = compatible && us.compatible(a) && us.compatible(b);
        if (!compatible) continue;

        bool strict = true;
        for (const auto& [a, b] : pairs) {
            if (a.is_empty()) continue;
            const auto ca = us.counts_per_orbit(a);
            const auto cb = us.counts_per_orbit(b);
            for (std::size_t o = 0; o < ca.size() && strict; ++o) strict = (ca[o] < cb[o]);
            if (!strict) break;
        }
        if (!strict) continue;

        // canonical within-orbit matching: smallest unmatched source atom to
        // smallest unmatched target atom
        std::vector<std::pair<int, int>> assignment;
        bool ok = true;
        for (std::size_t o = 0; o < us.orbits().size() && ok; ++o) {
            std::vector<char> taken(us.atom_count(), 0);
            for (const auto& [a, b] : pairs) {
                std::vector<int> src, dst;
                for (int i : us.atoms_inside(a))
                    if (us.orbit_of(i) == static_cast<int>(o)) src.push_back(i);
                for (int i : us.atoms_inside(b))
                    if (us.orbit_of(i) == static_cast<int>(o) && !taken[static_cast<std::size_t>(i)])
                        dst.push_back(i);
                auto by_atom = [&us](int x, int y) {
                    return us.atoms()[static_cast<std::size_t>(x)] <
                           us.atoms()[static_cast<std::size_t>(y)];
                };
                std::sort(src.begin(), src.end(), by_atom);
                std::sort(dst.begin(), dst.end(), by_atom);
                if (src.size() > dst.size()) {
                    ok = false;
                    break;
                }
                for (std::size_t t = 0; t < src.size(); ++t) {
                    assignment.emplace_back(src[t], dst[t]);
                    taken[static_cast<std::size_t>(dst[t])] = 1;
                }
            }
        }
        if (!ok) continue;
        auto g = assemble_element(us, assignment);
        if (!g) continue;
        return StageWitness{n, std::move(*g)};
    }
    raise(ErrorKind::HorizonExceeded,
          "no stage below " + std::to_string(max_stage) +
              " has strictly dominated per-orbit counts (hypothesis may fail, or raise the "
              "horizon)");
}

}  // namespace

StageWitness subequivalence(const StageSequence& s, const ErgodicList& m, const Clopen& a,
                            const Clopen& b, int max_stage) {
    if (a.is_empty()) {
        // identity at the first stage; nothing to move
        return StageWitness{0, GroupElement::identity(s.stage(0).atom_count())};
    }
    return subequivalence_impl(s, m, {{a, b}}, max_stage);
}

StageWitness subequivalence_multi(const StageSequence& s, const ErgodicList& m,
                                  const std::vector<std::pair<Clopen, Clopen>>& pairs,
                                  int max_stage) {
    return subequivalence_impl(s, m, pairs, max_stage);
}

ExchangeApproximation equal_measure_exchange(const StageSequence& s, const ErgodicList& m,
                                             const Clopen& a_set, const Clopen& b_set,
                                             const SymbolicPoint& a, const SymbolicPoint& b,
                                             int depth_target, int max_stage) {
    const BaseSeq& bases = s.bases();
    if (compare_measures(a_set, b_set, m, bases) != MeasureOrder::AllEq)
        raise(ErrorKind::HypothesisViolated, "exchange needs mu(A) = mu(B) for all measures");
    if (!clopen_disjoint(a_set, b_set, bases))
        raise(ErrorKind::HypothesisViolated, "exchange needs disjoint A and B");
    if (!contains_point(a_set, a) || !contains_point(b_set, b))
        raise(ErrorKind::HypothesisViolated, "anchor points must lie in their sets");
    // orbit-closure probe: cylinders around a and b of a small common depth
    // must be stage-equivalent
    {
        const std::size_t d = static_cast<std::size_t>(std::max(1, std::min(depth_target, 3)));
        if (!orbit_equiv_clopen(s, Clopen::cylinder(a.prefix(d)), Clopen::cylinder(b.prefix(d)),
                                max_stage))
            raise(ErrorKind::HorizonExceeded, "orbit-closure probe failed for the anchors");
    }

    auto cylinder_inside = [&](const SymbolicPoint& p, const Clopen& inside, int min_depth) {
        for (int d = min_depth; d <= min_depth + 64; ++d) {
            Clopen c = Clopen::cylinder(p.prefix(static_cast<std::size_t>(d)));
            if (clopen_subset(c, inside, bases)) return std::pair<int, Clopen>{d, c};
        }
        raise(ErrorKind::HorizonExceeded, "no cylinder around " + p.to_string() + " fits");
    };

    auto [da, ca] = cylinder_inside(a, a_set, depth_target);
    // target-side cylinder strictly smaller in every measure
    int db = da;
    Clopen cb;
    for (;;) {
        ++db;
        auto got = cylinder_inside(b, b_set, db);
        db = got.first;
        cb = got.second;
        if (compare_measures(cb, ca, m, bases) == MeasureOrder::AllLt) break;
        if (db > da + 64) raise(ErrorKind::HorizonExceeded, "could not shrink the target cylinder");
    }

    ExchangeApproximation out;
    const Clopen u0 = clopen_difference(a_set, ca, bases);
    Clopen v0 = Clopen::empty_set();
    if (!u0.is_empty()) {
        StageWitness w = subequivalence(s, m, u0, clopen_difference(b_set, cb, bases), max_stage);
        v0 = s.stage(w.stage).apply(w.element, u0);
        out.pieces.push_back({u0, v0, std::move(w)});
    }
    // exact exchange of the leftover collar: depth-db cylinders have equal
    // product mass around any two points
    const Clopen ca_inner = Clopen::cylinder(a.prefix(static_cast<std::size_t>(db)));
    const Clopen u1 = clopen_difference(ca, ca_inner, bases);
    const Clopen v1 =
        clopen_difference(clopen_difference(b_set, cb, bases), v0, bases);
    if (!u1.is_empty() || !v1.is_empty()) {
        auto w = orbit_equiv_clopen(s, u1, v1, max_stage);
        if (!w)
            raise(ErrorKind::HorizonExceeded,
                  "no witness for the collar exchange below stage " + std::to_string(max_stage));
        out.pieces.push_back({u1, v1, std::move(*w)});
    }
    out.remainder_a = ca_inner;
    out.remainder_b = cb;
    return out;
}

}  // namespace cdw
