#include "cdw/ample.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>

namespace cdw {

GroupElement GroupElement::identity(std::size_t n_atoms, bool with_offsets) {
    GroupElement g;
    g.perm.resize(n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i) g.perm[i] = static_cast<int>(i);
    if (with_offsets) g.offsets = std::vector<long long>(n_atoms, 0);
    g.name = "id";
    return g;
}

bool GroupElement::is_identity_perm() const {
    for (std::size_t i = 0; i < perm.size(); ++i)
        if (perm[i] != static_cast<int>(i)) return false;
    return true;
}

GroupElement compose(const GroupElement& second, const GroupElement& first) {
    GroupElement g;
    g.perm.resize(first.perm.size());
    for (std::size_t i = 0; i < first.perm.size(); ++i)
        g.perm[i] = second.perm[static_cast<std::size_t>(first.perm[i])];
    if (first.offsets && second.offsets) {
        g.offsets = std::vector<long long>(first.perm.size(), 0);
        for (std::size_t i = 0; i < first.perm.size(); ++i)
            (*g.offsets)[i] =
                (*first.offsets)[i] + (*second.offsets)[static_cast<std::size_t>(first.perm[i])];
    }
    return g;
}

GroupElement inverse(const GroupElement& g) {
    GroupElement h;
    h.perm.resize(g.perm.size());
    for (std::size_t i = 0; i < g.perm.size(); ++i)
        h.perm[static_cast<std::size_t>(g.perm[i])] = static_cast<int>(i);
    if (g.offsets) {
        h.offsets = std::vector<long long>(g.perm.size(), 0);
        for (std::size_t i = 0; i < g.perm.size(); ++i)
            (*h.offsets)[static_cast<std::size_t>(g.perm[i])] = -(*g.offsets)[i];
    }
    return h;
}

UnitSystem::UnitSystem(StageKind kind, BaseSeq bases, std::vector<Clopen> atoms,
                       std::vector<std::vector<int>> orbits, std::vector<GroupElement> generators,
                       SystemHandle system)
    : kind_(kind),
      bases_(std::move(bases)),
      atoms_(std::move(atoms)),
      orbits_(std::move(orbits)),
      generators_(std::move(generators)),
      system_(std::move(system)) {
    orbit_of_.assign(atoms_.size(), -1);
    level_of_.assign(atoms_.size(), -1);
    for (std::size_t o = 0; o < orbits_.size(); ++o)
        for (std::size_t l = 0; l < orbits_[o].size(); ++l) {
            orbit_of_[static_cast<std::size_t>(orbits_[o][l])] = static_cast<int>(o);
            level_of_[static_cast<std::size_t>(orbits_[o][l])] = static_cast<int>(l);
        }
}

UnitSystem UnitSystem::trivial(const BaseSeq& bases) {
    return UnitSystem(StageKind::Joined, bases, {Clopen::whole_space()}, {{0}}, {});
}

namespace {

// Adjacent transpositions along each orbit generate the full product of
// symmetric groups; Column realizers are phi^{+1}/phi^{-1}. Beyond a size
// threshold the generator list is left empty (the group semantics stay the
// full product over the orbits; materializing ~n generators of n entries
// each is quadratic in memory).
std::vector<GroupElement> standard_generators(std::size_t n_atoms,
                                              const std::vector<std::vector<int>>& orbits,
                                              bool with_offsets) {
    std::vector<GroupElement> gens;
    if (n_atoms > 1024) return gens;
    for (std::size_t o = 0; o < orbits.size(); ++o) {
        for (std::size_t l = 0; l + 1 < orbits[o].size(); ++l) {
            GroupElement g = GroupElement::identity(n_atoms, with_offsets);
            const int a = orbits[o][l];
            const int b = orbits[o][l + 1];
            g.perm[static_cast<std::size_t>(a)] = b;
            g.perm[static_cast<std::size_t>(b)] = a;
            if (with_offsets) {
                (*g.offsets)[static_cast<std::size_t>(a)] = 1;
                (*g.offsets)[static_cast<std::size_t>(b)] = -1;
            }
            g.name = "t" + std::to_string(o) + "_" + std::to_string(l);
            gens.push_back(std::move(g));
        }
    }
    return gens;
}

}  // namespace

UnitSystem UnitSystem::from_kr(const KRPartition& p) {
    std::vector<Clopen> atoms;
    std::vector<std::vector<int>> orbits;
    for (const auto& col : p.columns()) {
        std::vector<int> orbit;
        for (const auto& a : col.atoms) {
            orbit.push_back(static_cast<int>(atoms.size()));
            atoms.push_back(a);
        }
        orbits.push_back(std::move(orbit));
    }
    auto gens = standard_generators(atoms.size(), orbits, true);
    return UnitSystem(StageKind::Column, p.system().bases(), std::move(atoms), std::move(orbits),
                      std::move(gens), p.system_handle());
}

UnitSystem UnitSystem::prefix_stage(int depth, const BaseSeq& bases) {
    std::vector<Clopen> atoms;
    for (const auto& w : refine_to_depth(Clopen::whole_space(), depth, bases))
        atoms.push_back(Clopen::cylinder(w));
    std::vector<std::vector<int>> orbits(1);
    for (std::size_t i = 0; i < atoms.size(); ++i) orbits[0].push_back(static_cast<int>(i));
    auto gens = standard_generators(atoms.size(), orbits, false);
    return UnitSystem(StageKind::Prefix, bases, std::move(atoms), std::move(orbits),
                      std::move(gens));
}

int UnitSystem::atom_containing(const SymbolicPoint& p) const {
    for (std::size_t i = 0; i < atoms_.size(); ++i)
        if (contains_point(atoms_[i], p)) return static_cast<int>(i);
    raise(ErrorKind::Internal, "atoms do not cover the point " + p.to_string());
}

std::optional<int> UnitSystem::atom_index(const Clopen& a) const {
    for (std::size_t i = 0; i < atoms_.size(); ++i)
        if (atoms_[i] == a) return static_cast<int>(i);
    return std::nullopt;
}

bool UnitSystem::compatible(const Clopen& u) const {
    for (const auto& a : atoms_) {
        const Clopen inter = clopen_intersect(a, u, bases_);
        if (!inter.is_empty() && inter != a) return false;
    }
    return true;
}

std::vector<int> UnitSystem::atoms_inside(const Clopen& u) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < atoms_.size(); ++i)
        if (clopen_subset(atoms_[i], u, bases_)) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<long long> UnitSystem::counts_per_orbit(const Clopen& u) const {
    if (!compatible(u))
        raise(ErrorKind::NotCompatible, clopen_to_string(u) + " is not a union of atoms");
    std::vector<long long> counts(orbits_.size(), 0);
    for (int i : atoms_inside(u)) ++counts[static_cast<std::size_t>(orbit_of(i))];
    return counts;
}

Clopen UnitSystem::apply(const GroupElement& g, const Clopen& u) const {
    if (!compatible(u))
        raise(ErrorKind::NotCompatible, clopen_to_string(u) + " is not a union of atoms");
    Clopen out = Clopen::empty_set();
    for (int i : atoms_inside(u))
        out = clopen_union(out, atoms_[static_cast<std::size_t>(g.perm[static_cast<std::size_t>(i)])],
                           bases_);
    return out;
}

long long UnitSystem::realizer_offset(const GroupElement& g, int atom) const {
    if (g.offsets) return (*g.offsets)[static_cast<std::size_t>(atom)];
    if (kind_ != StageKind::Column)
        raise(ErrorKind::Unsupported, "no phi-power realizer on this stage kind");
    const int img = g.perm[static_cast<std::size_t>(atom)];
    if (orbit_of(img) != orbit_of(atom))
        raise(ErrorKind::Internal, "element does not preserve orbits");
    return level_of(img) - level_of(atom);
}

SymbolicPoint UnitSystem::apply_point(const GroupElement& g, const SymbolicPoint& p) const {
    const int i = atom_containing(p);
    const int j = g.perm[static_cast<std::size_t>(i)];
    if (kind_ == StageKind::Column) {
        if (!system_) raise(ErrorKind::Unsupported, "column stage without a system handle");
        long long k = realizer_offset(g, i);
        SymbolicPoint q = p;
        const Direction d = k >= 0 ? Direction::Forward : Direction::Backward;
        for (long long s = 0; s < std::llabs(k); ++s) q = system_->apply(q, d);
        return q;
    }
    if (kind_ == StageKind::Prefix) {
        const auto& src = atoms_[static_cast<std::size_t>(i)].words();
        const auto& dst = atoms_[static_cast<std::size_t>(j)].words();
        if (src.size() != 1 || dst.size() != 1 || src[0].size() != dst[0].size())
            raise(ErrorKind::Unsupported, "prefix stage atoms must be single equal-depth cylinders");
        const std::size_t n = src[0].size();
        Word pre = dst[0];
        const std::size_t keep = std::max(p.preperiod().size(), n);
        for (std::size_t t = n; t < keep; ++t) pre.push_back(p.at(t));
        // rephase the period to start at position `keep`
        const Word& v = p.period();
        const std::size_t shift = (keep - p.preperiod().size()) % v.size();
        Word per(v.begin() + static_cast<long>(shift), v.end());
        per.insert(per.end(), v.begin(), v.begin() + static_cast<long>(shift));
        return SymbolicPoint::make(std::move(pre), std::move(per), bases_);
    }
    raise(ErrorKind::Unsupported, "no pointwise action on joined stages");
}

nlohmann::json UnitSystem::to_json() const {
    nlohmann::json orbits = nlohmann::json::array();
    for (const auto& o : orbits_) {
        nlohmann::json orb = nlohmann::json::array();
        for (int i : o) orb.push_back(clopen_to_string(atoms_[static_cast<std::size_t>(i)]));
        orbits.push_back(orb);
    }
    return nlohmann::json{{"atoms", atoms_.size()}, {"orbits", orbits}};
}

std::optional<GroupElement> assemble_element(const UnitSystem& us,
                                             const std::vector<std::pair<int, int>>& pairs) {
    const std::size_t n = us.atom_count();
    std::vector<int> perm(n, -1);
    std::vector<char> used(n, 0);
    for (const auto& [src, dst] : pairs) {
        if (us.orbit_of(src) != us.orbit_of(dst)) return std::nullopt;
        if (perm[static_cast<std::size_t>(src)] != -1 || used[static_cast<std::size_t>(dst)])
            return std::nullopt;
        perm[static_cast<std::size_t>(src)] = dst;
        used[static_cast<std::size_t>(dst)] = 1;
    }
    // canonical completion per orbit
    for (const auto& orbit : us.orbits()) {
        std::vector<int> free_src, free_dst;
        for (int i : orbit)
            if (perm[static_cast<std::size_t>(i)] == -1) free_src.push_back(i);
        for (int i : orbit)
            if (!used[static_cast<std::size_t>(i)]) free_dst.push_back(i);
        if (free_src.size() != free_dst.size()) return std::nullopt;
        auto by_atom = [&us](int a, int b) { return us.atoms()[static_cast<std::size_t>(a)] <
                                                    us.atoms()[static_cast<std::size_t>(b)]; };
        std::sort(free_src.begin(), free_src.end(), by_atom);
        std::sort(free_dst.begin(), free_dst.end(), by_atom);
        for (std::size_t t = 0; t < free_src.size(); ++t)
            perm[static_cast<std::size_t>(free_src[t])] = free_dst[t];
    }
    GroupElement g;
    g.perm = std::move(perm);
    if (us.kind() == StageKind::Column) {
        g.offsets = std::vector<long long>(n, 0);
        for (std::size_t i = 0; i < n; ++i)
            (*g.offsets)[i] = us.level_of(g.perm[i]) - us.level_of(static_cast<int>(i));
    }
    return g;
}

GroupElement extend_element(const GroupElement& g, const UnitSystem& us, const UnitSystem& finer,
                            MatchPolicy policy) {
    // locate the coarse atom containing each finer atom
    const std::size_t nf = finer.atom_count();
    std::vector<int> coarse_of(nf, -1);
    for (std::size_t i = 0; i < nf; ++i) {
        for (std::size_t a = 0; a < us.atom_count(); ++a)
            if (clopen_subset(finer.atoms()[i], us.atoms()[a], us.bases())) {
                coarse_of[i] = static_cast<int>(a);
                break;
            }
        if (coarse_of[i] == -1)
            raise(ErrorKind::NoMatching, "finer system does not refine the coarse partition");
    }
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < us.atom_count(); ++a) {
        const int b = g.perm[a];
        // cells: per finer orbit, the finer atoms inside a map to those inside b
        std::map<int, std::vector<int>> src_cell, dst_cell;
        for (std::size_t i = 0; i < nf; ++i) {
            if (coarse_of[i] == static_cast<int>(a)) src_cell[finer.orbit_of(static_cast<int>(i))]
                                                         .push_back(static_cast<int>(i));
            if (coarse_of[i] == b) dst_cell[finer.orbit_of(static_cast<int>(i))]
                                       .push_back(static_cast<int>(i));
        }
        if (src_cell.size() != dst_cell.size())
            raise(ErrorKind::NoMatching, "per-orbit cells differ between atom and image");
        for (auto& [orbit, srcs] : src_cell) {
            auto it = dst_cell.find(orbit);
            if (it == dst_cell.end() || it->second.size() != srcs.size())
                raise(ErrorKind::NoMatching,
                      "per-orbit counts do not admit an extension on orbit " +
                          std::to_string(orbit));
            auto by_atom = [&finer](int x, int y) {
                return finer.atoms()[static_cast<std::size_t>(x)] <
                       finer.atoms()[static_cast<std::size_t>(y)];
            };
            std::sort(srcs.begin(), srcs.end(), by_atom);
            std::sort(it->second.begin(), it->second.end(), by_atom);
            if (policy == MatchPolicy::ReverseOrder)
                std::reverse(it->second.begin(), it->second.end());
            for (std::size_t t = 0; t < srcs.size(); ++t)
                pairs.emplace_back(srcs[t], it->second[t]);
        }
    }
    auto out = assemble_element(finer, pairs);
    if (!out) raise(ErrorKind::NoMatching, "assembled extension is not orbit-preserving");
    return *out;
}

bool refines(const UnitSystem& coarse, const UnitSystem& finer) {
    const std::size_t nf = finer.atom_count();
    std::vector<int> coarse_of(nf, -1);
    for (std::size_t i = 0; i < nf; ++i) {
        for (std::size_t a = 0; a < coarse.atom_count(); ++a)
            if (clopen_subset(finer.atoms()[i], coarse.atoms()[a], coarse.bases())) {
                coarse_of[i] = static_cast<int>(a);
                break;
            }
        if (coarse_of[i] == -1) return false;
    }
    // balanced copies: within a coarse orbit all atoms hold equally many
    // finer atoms of every finer orbit
    for (const auto& orbit : coarse.orbits()) {
        std::vector<std::map<int, long long>> profile;
        for (int a : orbit) {
            std::map<int, long long> counts;
            for (std::size_t i = 0; i < nf; ++i)
                if (coarse_of[i] == a) ++counts[finer.orbit_of(static_cast<int>(i))];
            profile.push_back(std::move(counts));
        }
        for (std::size_t t = 1; t < profile.size(); ++t)
            if (profile[t] != profile[0]) return false;
    }
    return true;
}

Report check_unit_system(const UnitSystem& us) {
    Report r;
    r.subject = "unit_system";
    const auto& bases = us.bases();

    bool disjoint = true;
    std::string detail;
    for (std::size_t i = 0; i < us.atom_count() && disjoint; ++i)
        for (std::size_t j = i + 1; j < us.atom_count() && disjoint; ++j)
            if (!clopen_disjoint(us.atoms()[i], us.atoms()[j], bases)) {
                disjoint = false;
                detail = clopen_to_string(us.atoms()[i]) + " overlaps " +
                         clopen_to_string(us.atoms()[j]);
            }
    r.require("atoms_pairwise_disjoint", disjoint, detail);

    Clopen all = Clopen::empty_set();
    for (const auto& a : us.atoms()) all = clopen_union(all, a, bases);
    r.require("atoms_cover_space", all.is_whole(), "union is " + clopen_to_string(all));

    // orbit lists partition the atom indices
    {
        std::vector<int> seen(us.atom_count(), 0);
        bool ok = true;
        for (const auto& o : us.orbits())
            for (int i : o) {
                if (i < 0 || static_cast<std::size_t>(i) >= us.atom_count() ||
                    seen[static_cast<std::size_t>(i)]++) {
                    ok = false;
                }
            }
        for (int s : seen) ok = ok && (s == 1);
        r.require("orbits_partition_atoms", ok);
    }

    bool bijective = true;
    for (const auto& g : us.generators()) {
        std::vector<char> used(us.atom_count(), 0);
        if (g.perm.size() != us.atom_count()) bijective = false;
        for (int v : g.perm) {
            if (v < 0 || static_cast<std::size_t>(v) >= us.atom_count() ||
                used[static_cast<std::size_t>(v)]++)
                bijective = false;
        }
    }
    r.require("generators_bijective", bijective);
    if (!bijective) return r;

    // stored orbits must be the connected components of the generator graph
    // (only checkable when the generator list is materialized)
    if (!us.generators().empty()) {
        std::vector<int> comp(us.atom_count());
        for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = static_cast<int>(i);
        std::function<int(int)> find = [&](int x) {
            while (comp[static_cast<std::size_t>(x)] != x) x = comp[static_cast<std::size_t>(x)];
            return x;
        };
        auto unite = [&](int a, int b) { comp[static_cast<std::size_t>(find(a))] = find(b); };
        for (const auto& g : us.generators())
            for (std::size_t i = 0; i < g.perm.size(); ++i)
                unite(static_cast<int>(i), g.perm[i]);
        bool ok = true;
        for (const auto& o : us.orbits())
            for (int i : o) ok = ok && (find(i) == find(o[0]));
        // distinct orbits must be distinct components
        std::set<int> roots;
        for (const auto& o : us.orbits())
            if (!o.empty()) ok = ok && roots.insert(find(o[0])).second;
        r.require("orbits_match_generator_components", ok);
    }

    // faithfulness: distinct labels may not share one action; an element with
    // the identity action must have a trivial realizer
    {
        bool ok = true;
        for (std::size_t i = 0; i < us.generators().size() && ok; ++i)
            for (std::size_t j = i + 1; j < us.generators().size() && ok; ++j) {
                const auto& a = us.generators()[i];
                const auto& b = us.generators()[j];
                if (a.perm == b.perm && a.name != b.name) {
                    ok = false;
                    detail = "labels '" + a.name + "' and '" + b.name + "' share one action";
                }
            }
        for (const auto& g : us.generators()) {
            if (g.is_identity_perm() && g.offsets)
                for (long long k : *g.offsets)
                    if (k != 0) {
                        ok = false;
                        detail = "element '" + g.name + "' fixes all atoms with phi-power " +
                                 std::to_string(k);
                    }
        }
        r.require("group_acts_faithfully", ok, detail);
    }

    // generators preserve orbits, and stored Column realizers match levels;
    // the fixed set of any element is then the union of its offset-0 atoms
    {
        bool ok = true;
        detail.clear();
        for (const auto& g : us.generators()) {
            for (std::size_t i = 0; i < g.perm.size() && ok; ++i) {
                if (us.orbit_of(static_cast<int>(i)) != us.orbit_of(g.perm[i])) {
                    ok = false;
                    detail = "generator '" + g.name + "' crosses orbits";
                }
                if (ok && g.offsets && us.kind() == StageKind::Column) {
                    const long long want = us.level_of(g.perm[i]) - us.level_of(static_cast<int>(i));
                    if ((*g.offsets)[i] != want) {
                        ok = false;
                        detail = "generator '" + g.name + "' claims phi^" +
                                 std::to_string((*g.offsets)[i]) + " on atom " + std::to_string(i) +
                                 " but moves it by " + std::to_string(want) + " levels";
                    }
                }
            }
        }
        r.require("realizers_consistent_with_action", ok, detail);
    }
    return r;
}

Report stage_preserves_measures(const UnitSystem& us, const ErgodicList& m) {
    Report r;
    r.subject = "stage_measure_preservation";
    for (const auto& ev : m.measures()) {
        bool ok = true;
        std::string detail;
        for (const auto& orbit : us.orbits()) {
            if (orbit.empty()) continue;
            const Rational m0 = ev.eval(us.atoms()[static_cast<std::size_t>(orbit[0])]);
            for (int i : orbit)
                if (ev.eval(us.atoms()[static_cast<std::size_t>(i)]) != m0) {
                    ok = false;
                    detail = "orbit atoms of unequal mass under " + ev.name;
                }
        }
        r.require("orbit_atoms_equal_mass_" + ev.name, ok, detail);
    }
    return r;
}

const UnitSystem& StageSequence::stage(int n) const {
    if (n < 0) raise(ErrorKind::InvalidDescriptor, "stage index must be >= 0");
    std::lock_guard<std::recursive_mutex> lock(mutex_);
    // build_stage may read earlier stages recursively; those are cached
    while (cache_.size() <= static_cast<std::size_t>(n))
        cache_.push_back(build_stage(static_cast<int>(cache_.size())));
    return cache_[static_cast<std::size_t>(n)];
}

namespace {

class GammaXStages final : public StageSequence {
public:
    GammaXStages(SystemHandle phi, SymbolicPoint x) : phi_(std::move(phi)), x_(std::move(x)) {}

    std::string descriptor() const override {
        return "gamma_x(" + phi_->descriptor() + "," + x_.to_string() + ")";
    }
    ErgodicList ergodic_list() const override { return odometer_ergodic_list(phi_->bases()); }
    SystemHandle system() const override { return phi_; }
    const BaseSeq& bases() const override { return phi_->bases(); }

protected:
    UnitSystem build_stage(int n) const override {
        if (n == 0) return UnitSystem::trivial(phi_->bases());
        const Clopen base = Clopen::cylinder(x_.prefix(static_cast<std::size_t>(n)));
        if (phi_->cylinder_depth_preserving()) {
            // depth-preserving images make each stage tower directly a
            // balanced refinement of the previous one
            return UnitSystem::from_kr(
                make_compatible_depth(first_return_partition(phi_, base), n));
        }
        std::lock_guard<std::mutex> lock(tower_mutex_);
        while (static_cast<int>(towers_.size()) < n) {
            const int k = static_cast<int>(towers_.size()) + 1;
            const Clopen b = Clopen::cylinder(x_.prefix(static_cast<std::size_t>(k)));
            if (k == 1)
                towers_.push_back(make_compatible_depth(first_return_partition(phi_, b), 1));
            else
                towers_.push_back(make_compatible_depth(shrink_base(towers_.back(), b), k));
        }
        return UnitSystem::from_kr(towers_[static_cast<std::size_t>(n - 1)]);
    }

private:
    SystemHandle phi_;
    SymbolicPoint x_;
    mutable std::mutex tower_mutex_;
    mutable std::vector<KRPartition> towers_;
};

class DyadicPermStages final : public StageSequence {
public:
    DyadicPermStages() : bases_(BaseSeq::constant(2)) {}

    std::string descriptor() const override { return "dyadic_perm"; }
    ErgodicList ergodic_list() const override { return odometer_ergodic_list(bases_); }
    const BaseSeq& bases() const override { return bases_; }

protected:
    UnitSystem build_stage(int n) const override {
        if (n == 0) return UnitSystem::trivial(bases_);
        return UnitSystem::prefix_stage(n, bases_);
    }

private:
    BaseSeq bases_;
};

class IntersectionStages final : public StageSequence {
public:
    IntersectionStages(SystemHandle phi, SymbolicPoint x, SymbolicPoint y, int min_depth)
        : phi_(std::move(phi)), x_(std::move(x)), y_(std::move(y)), min_depth_(min_depth) {}

    std::string descriptor() const override {
        return "intersection(" + phi_->descriptor() + "," + x_.to_string() + "," + y_.to_string() +
               ")";
    }
    ErgodicList ergodic_list() const override { return odometer_ergodic_list(phi_->bases()); }
    SystemHandle system() const override { return phi_; }
    const BaseSeq& bases() const override { return phi_->bases(); }

protected:
    UnitSystem build_stage(int n) const override {
        if (n == 0) return UnitSystem::trivial(phi_->bases());
        const std::size_t d = static_cast<std::size_t>(std::max(n, min_depth_));
        const Clopen base = clopen_union(Clopen::cylinder(x_.prefix(d)),
                                         Clopen::cylinder(y_.prefix(d)), phi_->bases());
        if (phi_->cylinder_depth_preserving()) {
            return UnitSystem::from_kr(
                make_compatible_depth(first_return_partition(phi_, base), n));
        }
        std::lock_guard<std::mutex> lock(tower_mutex_);
        while (static_cast<int>(towers_.size()) < n) {
            const int k = static_cast<int>(towers_.size()) + 1;
            const std::size_t dk = static_cast<std::size_t>(std::max(k, min_depth_));
            const Clopen b = clopen_union(Clopen::cylinder(x_.prefix(dk)),
                                          Clopen::cylinder(y_.prefix(dk)), phi_->bases());
            if (k == 1)
                towers_.push_back(make_compatible_depth(first_return_partition(phi_, b), 1));
            else
                towers_.push_back(make_compatible_depth(shrink_base(towers_.back(), b), k));
        }
        return UnitSystem::from_kr(towers_[static_cast<std::size_t>(n - 1)]);
    }

private:
    SystemHandle phi_;
    SymbolicPoint x_;
    SymbolicPoint y_;
    int min_depth_;
    mutable std::mutex tower_mutex_;
    mutable std::vector<KRPartition> towers_;
};

}  // namespace

StageSeqHandle gamma_x_stages(SystemHandle phi, const SymbolicPoint& x) {
    return std::make_shared<GammaXStages>(std::move(phi), x);
}

StageSeqHandle dyadic_perm_stages() { return std::make_shared<DyadicPermStages>(); }

StageSeqHandle intersection_stages(SystemHandle phi, const SymbolicPoint& x,
                                   const SymbolicPoint& y, long long orbit_check_horizon) {
    if (auto k = same_orbit_within(*phi, x, y, orbit_check_horizon))
        raise(ErrorKind::SameOrbitDetected, x.to_string() + " = phi^" + std::to_string(-*k) + "(" +
                                                y.to_string() + ")");
    // the bases around x and y must be disjoint cylinders from stage 1 on
    int d = 1;
    while (x.prefix(static_cast<std::size_t>(d)) == y.prefix(static_cast<std::size_t>(d))) ++d;
    return std::make_shared<IntersectionStages>(std::move(phi), x, y, d);
}

std::optional<StageWitness> orbit_equiv_clopen(const StageSequence& s, const Clopen& u,
                                               const Clopen& v, int max_stage) {
    for (int n = 0; n <= max_stage; ++n) {
        const UnitSystem& us = s.stage(n);
        if (!us.compatible(u) || !us.compatible(v)) continue;
        const auto cu = us.counts_per_orbit(u);
        const auto cv = us.counts_per_orbit(v);
        if (cu != cv) continue;
        // counts agree in every orbit: build the canonical witness
        std::vector<std::pair<int, int>> pairs;
        for (std::size_t o = 0; o < us.orbits().size(); ++o) {
            std::vector<int> src, dst;
            for (int i : us.atoms_inside(u))
                if (us.orbit_of(i) == static_cast<int>(o)) src.push_back(i);
            for (int i : us.atoms_inside(v))
                if (us.orbit_of(i) == static_cast<int>(o)) dst.push_back(i);
            auto by_atom = [&us](int a, int b) {
                return us.atoms()[static_cast<std::size_t>(a)] <
                       us.atoms()[static_cast<std::size_t>(b)];
            };
            std::sort(src.begin(), src.end(), by_atom);
            std::sort(dst.begin(), dst.end(), by_atom);
            for (std::size_t t = 0; t < src.size(); ++t) pairs.emplace_back(src[t], dst[t]);
        }
        auto g = assemble_element(us, pairs);
        if (!g) raise(ErrorKind::Internal, "count-balanced witness failed to assemble");
        return StageWitness{n, std::move(*g)};
    }
    return std::nullopt;
}

Clopen apply_stage_witness(const StageSequence& s, StageWitness& w, const Clopen& u,
                           int max_stage) {
    while (!s.stage(w.stage).compatible(u)) {
        if (w.stage >= max_stage)
            raise(ErrorKind::HorizonExceeded,
                  "witness cannot be extended to cover " + clopen_to_string(u));
        w.element = extend_element(w.element, s.stage(w.stage), s.stage(w.stage + 1));
        ++w.stage;
    }
    return s.stage(w.stage).apply(w.element, u);
}

int default_max_stage() {
    if (const char* env = std::getenv("CDW_MAX_STAGE")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 12;
}

}  // namespace cdw
