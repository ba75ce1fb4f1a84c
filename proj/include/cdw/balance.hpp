#pragma once

#include "gw.hpp"

namespace cdw {

// Equivalence mode of a Gamma-partition: Sim (witnessed by stage elements)
// or SimStar (witnessed by equality under every invariant measure).
enum class EquivMode { Sim, SimStar };

// One orbit: pairwise-equivalent atoms. witnesses[t] maps atoms[0] onto
// atoms[t] (Sim mode; entries may be absent and are searched on demand).
struct GammaOrbit {
    std::vector<Clopen> atoms;
    std::vector<std::optional<StageWitness>> witnesses;
};

class GammaPartition {
public:
    GammaPartition(EquivMode mode, StageSeqHandle seq, ErgodicList measures,
                   std::vector<GammaOrbit> orbits);

    static GammaPartition trivial(StageSeqHandle seq, ErgodicList measures);
    // The stage unit system viewed as a Sim partition (orbits = stage orbits).
    static GammaPartition from_stage(StageSeqHandle seq, ErgodicList measures, int stage);

    EquivMode mode() const { return mode_; }
    const std::vector<GammaOrbit>& orbits() const { return orbits_; }
    const StageSequence& seq() const { return *seq_; }
    StageSeqHandle seq_handle() const { return seq_; }
    const ErgodicList& measures() const { return measures_; }
    const BaseSeq& bases() const { return seq_->bases(); }

    bool compatible(const Clopen& u) const;
    std::vector<Clopen> all_atoms() const;

    // Re-verifies the partition property and every intra-orbit witness.
    Report verify(int max_stage) const;
    nlohmann::json to_json() const;

private:
    EquivMode mode_;
    StageSeqHandle seq_;
    ErgodicList measures_;
    std::vector<GammaOrbit> orbits_;
};

// n_O(u): the number of atoms of the given orbit contained in u.
long long orbit_count(const GammaPartition& p, int orbit, const Clopen& u);

// A stage partition (minimal stage within the horizon) refining both inputs
// in the balanced sense. Raises HorizonExceeded.
GammaPartition common_refinement(const GammaPartition& p, const GammaPartition& q, int max_stage);

// Cuts one orbit along an aligned per-atom subdivision: parts[t] partitions
// atoms[t], and for every j the family parts[0][j], parts[1][j], ... becomes
// a new orbit. Coherence is re-verified (IncoherentFragment / NoWitness).
GammaPartition cut_orbit(const GammaPartition& p, int orbit,
                         const std::vector<std::vector<Clopen>>& parts, int max_stage);

// Joins two orbits into one; the witness must map rep(o1) onto rep(o2)
// (Sim mode). SimStar mode only needs equal representative measures.
GammaPartition join_orbits(const GammaPartition& p, int o1, int o2,
                           const std::optional<StageWitness>& witness, int max_stage);

struct ExceptionalPair {
    int c_orbit;
    int d_orbit;
};

struct AlmostEquivalentResult {
    GammaPartition partition;
    std::vector<ExceptionalPair> pairs;
    // Witness re-verification performed at construction time. Output orbits
    // of large runs carry no materialized witness table (building ~n full
    // permutations of n atoms is quadratic); this report records the checks
    // run on the sparse internal witnesses instead.
    Report construction;
};

// The balanced-refinement algorithm: refines p so that the given tuples are
// almost-equivalent with exceptional pairs, every non-exceptional orbit
// balanced for every (u_i, v_i), every pair balanced as a pair with equal
// representative measures, and every exceptional orbit holding more than
// 3*h*N copies of every p-orbit (h = number of atoms of p, N the summed
// maximal imbalances of the output).
AlmostEquivalentResult almost_equivalent_refine(const GammaPartition& p,
                                                const std::vector<Clopen>& us,
                                                const std::vector<Clopen>& vs, int max_stage);

// Re-verifies every clause of the almost-equivalence contract by counting
// and exact measure comparison.
Report verify_almost_equivalence(const AlmostEquivalentResult& result, const GammaPartition& input,
                                 const std::vector<Clopen>& us, const std::vector<Clopen>& vs);

struct OrderedStage {
    // per orbit: atom clopens in successor order
    std::vector<std::vector<Clopen>> orbits;
    Clopen base;
    Clopen top;
};

struct OrderedSystemResult {
    SystemHandle system;          // successor map; clopen action only
    SymbolicPoint base_point;     // the nested base point
    std::vector<OrderedStage> stages;
};

// Orders a refining sequence of stage partitions with shrinking base and top
// and returns the induced successor system together with the nested base
// point, materialized to the given depth.
OrderedSystemResult ordered_sequence_to_system(StageSeqHandle s, int depth, int max_stage);

}  // namespace cdw
