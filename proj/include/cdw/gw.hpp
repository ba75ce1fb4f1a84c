#pragma once

#include "ample.hpp"

namespace cdw {

// Per-orbit/per-column count vector n_O(a). Raises NotCompatible if a is not
// a union of atoms.
std::vector<long long> count_profile(const UnitSystem& us, const Clopen& a);
std::vector<long long> count_profile(const KRPartition& p, const Clopen& a);

// Constructive subequivalence: the least stage at which every orbit satisfies
// a_n(O) < b_n(O), with a within-orbit matching element gamma(a) inside b.
// Raises HypothesisViolated unless mu(a) < mu(b) for every measure, and
// HorizonExceeded when no stage below max_stage works.
StageWitness subequivalence(const StageSequence& s, const ErgodicList& m, const Clopen& a,
                            const Clopen& b, int max_stage);

// One element mapping every source into its target simultaneously. Sources
// must be pairwise disjoint, and so must targets.
StageWitness subequivalence_multi(const StageSequence& s, const ErgodicList& m,
                                  const std::vector<std::pair<Clopen, Clopen>>& pairs,
                                  int max_stage);

struct ExchangePiece {
    Clopen source;
    Clopen target;
    StageWitness witness;  // witness.element maps source onto target
};

// A depth-d approximation of a full-group element g with g(a_set) = b_set:
// matched clopen pieces plus single-cylinder remainders around the anchor
// points.
struct ExchangeApproximation {
    std::vector<ExchangePiece> pieces;
    Clopen remainder_a;
    Clopen remainder_b;
};

ExchangeApproximation equal_measure_exchange(const StageSequence& s, const ErgodicList& m,
                                             const Clopen& a_set, const Clopen& b_set,
                                             const SymbolicPoint& a, const SymbolicPoint& b,
                                             int depth_target, int max_stage);

}  // namespace cdw
