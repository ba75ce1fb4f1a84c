#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "kr.hpp"
#include "measure.hpp"
#include "report.hpp"

namespace cdw {

// An element of a finite stage group, described by its action on the atoms
// of a unit system. For KR-derived stages the pointwise realizer on atom i is
// phi^{offsets[i]}; prefix stages act by relabeling the defining word.
struct GroupElement {
    std::vector<int> perm;
    std::optional<std::vector<long long>> offsets;
    std::string name;

    static GroupElement identity(std::size_t n_atoms, bool with_offsets = false);
    bool is_identity_perm() const;
};

GroupElement compose(const GroupElement& second, const GroupElement& first);
GroupElement inverse(const GroupElement& g);

enum class StageKind { Column, Prefix, Joined };

// A finite unit system: a clopen partition plus a finite group acting
// faithfully on its atoms. The groups of all shipped stages are full products
// of symmetric groups over the orbits, so membership and witness searches are
// per-orbit counting problems; generators are kept for verification and for
// pointwise realizers.
class UnitSystem {
public:
    UnitSystem() = default;
    UnitSystem(StageKind kind, BaseSeq bases, std::vector<Clopen> atoms,
               std::vector<std::vector<int>> orbits, std::vector<GroupElement> generators,
               SystemHandle system = nullptr);

    static UnitSystem trivial(const BaseSeq& bases);
    static UnitSystem from_kr(const KRPartition& p);
    static UnitSystem prefix_stage(int depth, const BaseSeq& bases);

    StageKind kind() const { return kind_; }
    const BaseSeq& bases() const { return bases_; }
    const std::vector<Clopen>& atoms() const { return atoms_; }
    const std::vector<std::vector<int>>& orbits() const { return orbits_; }
    const std::vector<GroupElement>& generators() const { return generators_; }
    SystemHandle system() const { return system_; }

    std::size_t atom_count() const { return atoms_.size(); }
    int orbit_of(int atom) const { return orbit_of_[static_cast<std::size_t>(atom)]; }
    int level_of(int atom) const { return level_of_[static_cast<std::size_t>(atom)]; }

    // Index of the atom containing the point / the cylinder-word, linear scan.
    int atom_containing(const SymbolicPoint& p) const;
    std::optional<int> atom_index(const Clopen& a) const;

    bool compatible(const Clopen& u) const;
    std::vector<int> atoms_inside(const Clopen& u) const;
    // n_O(u) for every orbit O, in orbit order. Raises NotCompatible.
    std::vector<long long> counts_per_orbit(const Clopen& u) const;

    Clopen apply(const GroupElement& g, const Clopen& u) const;
    SymbolicPoint apply_point(const GroupElement& g, const SymbolicPoint& p) const;

    // Pointwise realizer exponent of g on the given atom (Column stages).
    long long realizer_offset(const GroupElement& g, int atom) const;

    nlohmann::json to_json() const;

private:
    StageKind kind_ = StageKind::Joined;
    BaseSeq bases_ = BaseSeq::constant(2);
    std::vector<Clopen> atoms_;
    std::vector<std::vector<int>> orbits_;
    std::vector<GroupElement> generators_;
    SystemHandle system_;
    std::vector<int> orbit_of_;
    std::vector<int> level_of_;  // position within the orbit list
};

// Completes a partial atom map (pairs source -> target) to an orbit-preserving
// permutation, matching the remaining atoms of each orbit in canonical order.
// Empty result if the partial map is not injective, crosses orbits, or the
// leftovers cannot be matched.
std::optional<GroupElement> assemble_element(const UnitSystem& us,
                                             const std::vector<std::pair<int, int>>& pairs);

enum class MatchPolicy { CanonicalOrder, ReverseOrder };

// Extends a stage-n element to a refining unit system: within each image cell
// the contained finer atoms are matched orbit by orbit under the policy.
// Raises NoMatching if some cell's per-orbit counts do not agree.
GroupElement extend_element(const GroupElement& g, const UnitSystem& us, const UnitSystem& finer,
                            MatchPolicy policy = MatchPolicy::CanonicalOrder);

// Unit-system refinement in the balanced sense: finer atoms nest in coarse
// atoms and, for atoms in one coarse orbit, every finer orbit holds equally
// many copies.
bool refines(const UnitSystem& coarse, const UnitSystem& finer);

Report check_unit_system(const UnitSystem& us);
Report stage_preserves_measures(const UnitSystem& us, const ErgodicList& m);

// A lazily built, memoized refining sequence of finite unit systems.
class StageSequence {
public:
    virtual ~StageSequence() = default;

    const UnitSystem& stage(int n) const;
    virtual std::string descriptor() const = 0;
    virtual ErgodicList ergodic_list() const = 0;
    virtual SystemHandle system() const { return nullptr; }
    virtual const BaseSeq& bases() const = 0;
    // Smallest stage compatible with every clopen of depth <= d.
    virtual int stage_covering_depth(int d) const { return d; }

protected:
    virtual UnitSystem build_stage(int n) const = 0;

private:
    mutable std::recursive_mutex mutex_;
    mutable std::deque<UnitSystem> cache_;  // deque: stable references as it grows
};

using StageSeqHandle = std::shared_ptr<const StageSequence>;

StageSeqHandle gamma_x_stages(SystemHandle phi, const SymbolicPoint& x);
StageSeqHandle dyadic_perm_stages();
// Stages over bases holding both points; raises SameOrbitDetected if the
// points fall in one orbit within the check horizon.
StageSeqHandle intersection_stages(SystemHandle phi, const SymbolicPoint& x,
                                   const SymbolicPoint& y, long long orbit_check_horizon = 256);

struct StageWitness {
    int stage = 0;
    GroupElement element;
};

// Least stage <= max_stage at which u, v are unions of atoms and some stage
// element maps u onto v; decision is per-orbit count equality.
std::optional<StageWitness> orbit_equiv_clopen(const StageSequence& s, const Clopen& u,
                                               const Clopen& v, int max_stage);

// Applies a recorded witness to a clopen, extending the element canonically
// to deeper stages until the clopen is a union of atoms there. The witness is
// upgraded in place; raises HorizonExceeded past max_stage.
Clopen apply_stage_witness(const StageSequence& s, StageWitness& w, const Clopen& u,
                           int max_stage);

// Global stage horizon default, overridable via the CDW_MAX_STAGE env var.
int default_max_stage();

}  // namespace cdw
