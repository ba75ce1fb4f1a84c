#include "cdw/balance.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <cstdio>
#include <cstdlib>

namespace cdw {

namespace {

// ---------------------------------------------------------------------------
// Word-prefix classification of stage atoms against a canonical clopen.
// ---------------------------------------------------------------------------

struct ClopenIndex {
    std::set<std::string> words;

    explicit ClopenIndex(const Clopen& u) {
        for (const auto& w : u.words()) words.insert(word_to_string(w));
    }

    // 1: [w] inside u, 0: disjoint, -1: straddles
    int classify_word(const Word& w) const {
        std::string s = word_to_string(w);
        for (std::size_t len = 0; len <= s.size(); ++len)
            if (words.count(s.substr(0, len))) return 1;
        auto it = words.lower_bound(s);
        if (it != words.end() && it->compare(0, s.size(), s) == 0) return -1;
        return 0;
    }

    // same trichotomy for a whole atom
    int classify(const Clopen& atom) const {
        bool any_in = false, any_out = false;
        for (const auto& w : atom.words()) {
            const int c = classify_word(w);
            if (c == -1) return -1;
            (c == 1 ? any_in : any_out) = true;
        }
        if (any_in && any_out) return -1;
        return any_in ? 1 : 0;
    }
};

// ---------------------------------------------------------------------------
// Workspace: the mutable state of the balancing algorithm. Atoms of working
// orbits are sets of stage-atom ids at the current working stage; witnesses
// are sparse id maps carrying the representative onto each atom.
// ---------------------------------------------------------------------------

using SparseMap = std::vector<std::pair<int, int>>;  // sorted by source id

int sparse_apply(const SparseMap& m, int id) {
    auto it = std::lower_bound(m.begin(), m.end(), std::make_pair(id, -1));
    if (it == m.end() || it->first != id)
        raise(ErrorKind::Internal, "sparse witness lookup missed id " + std::to_string(id));
    return it->second;
}

std::vector<int> sparse_apply_set(const SparseMap& m, const std::vector<int>& ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(sparse_apply(m, id));
    std::sort(out.begin(), out.end());
    return out;
}

SparseMap sparse_compose(const SparseMap& second, const SparseMap& first) {
    SparseMap out;
    out.reserve(first.size());
    for (const auto& [a, b] : first) out.emplace_back(a, sparse_apply(second, b));
    std::sort(out.begin(), out.end());
    return out;
}

struct WOrbit {
    // atoms[t]: sorted stage-atom ids; witnesses[t] maps atoms[0] onto atoms[t]
    std::vector<std::vector<int>> atoms;
    std::vector<SparseMap> witnesses;
};

struct TrackedSet {
    int stage = -1;
    std::vector<int> ids;
};

class Workspace {
public:
    Workspace(StageSeqHandle seq, ErgodicList measures, int max_stage)
        : seq_(std::move(seq)), measures_(std::move(measures)), max_stage_(max_stage) {
        load_stage(0);
    }

    const StageSequence& seq() const { return *seq_; }
    const ErgodicList& measures() const { return measures_; }
    const BaseSeq& bases() const { return seq_->bases(); }
    int stage() const { return stage_; }
    const UnitSystem& us() const { return *us_; }
    int max_stage() const { return max_stage_; }

    std::map<int, WOrbit>& orbits() { return orbits_; }
    const std::map<int, WOrbit>& orbits() const { return orbits_; }

    int add_orbit(WOrbit o) {
        const int id = next_orbit_++;
        orbits_.emplace(id, std::move(o));
        return id;
    }

    // ---- stage handling ----

    void raise_to(int m) {
        while (stage_ < m) raise_one();
    }

    void ensure_compat(const Clopen& u) {
        raise_to(std::max(stage_, seq_->stage_covering_depth(u.depth())));
    }

    void refresh(TrackedSet& t) const {
        if (t.stage < 0) raise(ErrorKind::Internal, "tracked set used before assignment");
        while (t.stage < stage_) {
            const auto& ch = children_[static_cast<std::size_t>(t.stage)];
            std::vector<int> next;
            for (int id : t.ids)
                next.insert(next.end(), ch[static_cast<std::size_t>(id)].begin(),
                            ch[static_cast<std::size_t>(id)].end());
            std::sort(next.begin(), next.end());
            t.ids = std::move(next);
            ++t.stage;
        }
    }

    TrackedSet track(std::vector<int> ids) const {
        std::sort(ids.begin(), ids.end());
        return TrackedSet{stage_, std::move(ids)};
    }

    // ---- per-stage queries ----

    std::vector<char> inside_mask(const Clopen& u) const {
        ClopenIndex idx(u);
        std::vector<char> mask(us_->atom_count(), 0);
        for (std::size_t i = 0; i < us_->atom_count(); ++i) {
            const int c = idx.classify(us_->atoms()[i]);
            if (c == -1)
                raise(ErrorKind::NotCompatible, clopen_to_string(u) +
                                                    " straddles a stage-" +
                                                    std::to_string(stage_) + " atom");
            mask[i] = static_cast<char>(c);
        }
        return mask;
    }

    bool atom_inside(const std::vector<int>& ids, const std::vector<char>& mask) const {
        std::size_t in = 0;
        for (int id : ids)
            if (mask[static_cast<std::size_t>(id)]) ++in;
        if (in != 0 && in != ids.size())
            raise(ErrorKind::Internal, "an orbit atom straddles the counted clopen");
        return in == ids.size();
    }

    long long orbit_count_in(const WOrbit& o, const std::vector<char>& mask) const {
        long long n = 0;
        for (const auto& atom : o.atoms)
            if (atom_inside(atom, mask)) ++n;
        return n;
    }

    int canonical_least(const std::vector<int>& ids) const {
        int best = ids.front();
        for (int id : ids)
            if (canon_[static_cast<std::size_t>(id)] < canon_[static_cast<std::size_t>(best)])
                best = id;
        return best;
    }

    std::vector<Rational> set_mass(const std::vector<int>& ids) const {
        std::vector<Rational> out(measures_.size(), Rational(0));
        for (int id : ids)
            for (std::size_t k = 0; k < measures_.size(); ++k)
                out[k] += mass_[k][static_cast<std::size_t>(id)];
        return out;
    }

    // strict mass comparison for every measure: -1 lt, 0 eq, +1 gt, 2 mixed
    int compare_mass(const std::vector<int>& a, const std::vector<int>& b) const {
        const auto ma = set_mass(a);
        const auto mb = set_mass(b);
        bool lt = true, eq = true, gt = true;
        for (std::size_t k = 0; k < ma.size(); ++k) {
            lt = lt && ma[k] < mb[k];
            eq = eq && ma[k] == mb[k];
            gt = gt && ma[k] > mb[k];
        }
        if (eq) return 0;
        if (lt) return -1;
        if (gt) return 1;
        return 2;
    }

    Clopen to_clopen(const std::vector<int>& ids) const {
        std::vector<Word> words;
        for (int id : ids) {
            const auto& w = us_->atoms()[static_cast<std::size_t>(id)].words();
            words.insert(words.end(), w.begin(), w.end());
        }
        return normalize(std::move(words), bases());
    }

    // ---- orbit surgery ----

    // Splits an orbit along a partition of its representative id set; part t
    // of atom s is the witness image of rep part t. Returns new orbit ids in
    // part order.
    std::vector<int> cut(int oid, const std::vector<std::vector<int>>& rep_parts) {
        WOrbit o = std::move(orbits_.at(oid));
        orbits_.erase(oid);
        std::size_t covered = 0;
        for (const auto& part : rep_parts) {
            if (part.empty()) raise(ErrorKind::Internal, "cut with an empty representative part");
            covered += part.size();
        }
        if (covered != o.atoms[0].size())
            raise(ErrorKind::Internal, "cut parts do not tile the representative");
        std::vector<int> out;
        for (const auto& part : rep_parts) {
            WOrbit sub;
            for (std::size_t t = 0; t < o.atoms.size(); ++t) {
                sub.atoms.push_back(t == 0 ? part : sparse_apply_set(o.witnesses[t], part));
                SparseMap w;
                for (int id : part) w.emplace_back(id, t == 0 ? id : sparse_apply(o.witnesses[t], id));
                std::sort(w.begin(), w.end());
                sub.witnesses.push_back(std::move(w));
            }
            out.push_back(add_orbit(std::move(sub)));
        }
        return out;
    }

    // Joins o2 onto o1; link maps rep(o1) onto rep(o2) exactly.
    int join(int o1, int o2, const SparseMap& link) {
        WOrbit a = std::move(orbits_.at(o1));
        WOrbit b = std::move(orbits_.at(o2));
        if (sparse_apply_set(link, a.atoms[0]) != b.atoms[0])
            raise(ErrorKind::NoWitness, "join link does not carry rep(o1) onto rep(o2)");
        orbits_.erase(o1);
        orbits_.erase(o2);
        WOrbit joined = std::move(a);
        for (std::size_t t = 0; t < b.atoms.size(); ++t) {
            joined.atoms.push_back(std::move(b.atoms[t]));
            joined.witnesses.push_back(sparse_compose(b.witnesses[t], link));
        }
        return add_orbit(std::move(joined));
    }

    // ---- searches (may raise the working stage) ----

    // Element fragment mapping src injectively into tgt, orbit by orbit;
    // raises the stage until per-orbit counts admit an injection.
    SparseMap subequiv(TrackedSet& src, TrackedSet& tgt) {
        for (;;) {
            refresh(src);
            refresh(tgt);
            auto m = try_match(src.ids, tgt.ids, MatchMode::Inject);
            if (m) return *m;
            if (stage_ >= max_stage_) {
                if (std::getenv("CDW_TRACE")) {
                    std::map<int, std::pair<int, int>> prof;
                    for (int id : src.ids) ++prof[us_->orbit_of(id)].first;
                    for (int id : tgt.ids) ++prof[us_->orbit_of(id)].second;
                    for (auto& [o, c] : prof)
                        std::fprintf(stderr, "[cdw] inject blocked: orbit %d src %d tgt %d\n", o,
                                     c.first, c.second);
                }
                raise(ErrorKind::HorizonExceeded,
                      "no injecting stage below " + std::to_string(max_stage_));
            }
            raise_one();
        }
    }

    // Element fragment carrying src exactly onto tgt (count equality).
    SparseMap equiv(TrackedSet& src, TrackedSet& tgt) {
        for (;;) {
            refresh(src);
            refresh(tgt);
            auto m = try_match(src.ids, tgt.ids, MatchMode::Exact);
            if (m) return *m;
            if (stage_ >= max_stage_)
                raise(ErrorKind::HorizonExceeded,
                      "no exact matching stage below " + std::to_string(max_stage_));
            raise_one();
        }
    }

    std::optional<SparseMap> equiv_here(const std::vector<int>& src,
                                        const std::vector<int>& tgt) const {
        return try_match(src, tgt, MatchMode::Exact);
    }

private:
    void load_stage(int m) {
        stage_ = m;
        us_ = &seq_->stage(m);
        mass_.assign(measures_.size(), {});
        for (std::size_t k = 0; k < measures_.size(); ++k) {
            mass_[k].reserve(us_->atom_count());
            for (const auto& a : us_->atoms()) mass_[k].push_back(measures_.eval(k, a));
        }
        canon_.resize(us_->atom_count());
        std::vector<int> order(us_->atom_count());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [this](int a, int b) {
            return us_->atoms()[static_cast<std::size_t>(a)] <
                   us_->atoms()[static_cast<std::size_t>(b)];
        });
        for (std::size_t r = 0; r < order.size(); ++r)
            canon_[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
    }

    void raise_one() {
        const int m = stage_ + 1;
        if (std::getenv("CDW_TRACE"))
            std::fprintf(stderr, "[cdw] raising working stage to %d (%zu orbits)\n", m,
                         orbits_.size());
        const UnitSystem& fine = seq_->stage(m);
        const UnitSystem& coarse = *us_;
        // parent lookup by word prefixes
        std::unordered_map<std::string, int> word_owner;
        for (std::size_t i = 0; i < coarse.atom_count(); ++i)
            for (const auto& w : coarse.atoms()[i].words())
                word_owner[word_to_string(w)] = static_cast<int>(i);
        std::vector<std::vector<int>> children(coarse.atom_count());
        for (std::size_t j = 0; j < fine.atom_count(); ++j) {
            const std::string s = word_to_string(fine.atoms()[j].words().front());
            int parent = -1;
            for (std::size_t len = 0; len <= s.size() && parent < 0; ++len) {
                auto it = word_owner.find(s.substr(0, len));
                if (it != word_owner.end()) parent = it->second;
            }
            if (parent < 0)
                raise(ErrorKind::Internal, "stage " + std::to_string(m) +
                                               " does not refine stage " + std::to_string(m - 1));
            children[static_cast<std::size_t>(parent)].push_back(static_cast<int>(j));
        }

        // canonical ranks at the fine stage, used to extend witnesses cellwise
        std::vector<int> fine_rank(fine.atom_count());
        {
            std::vector<int> order(fine.atom_count());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::sort(order.begin(), order.end(), [&fine](int a, int b) {
                return fine.atoms()[static_cast<std::size_t>(a)] <
                       fine.atoms()[static_cast<std::size_t>(b)];
            });
            for (std::size_t r = 0; r < order.size(); ++r)
                fine_rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
        }
        auto extend_sparse = [&](const SparseMap& g) {
            SparseMap out;
            for (const auto& [a, b] : g) {
                // group children by fine orbit, match in canonical order
                std::map<int, std::vector<int>> sa, sb;
                for (int c : children[static_cast<std::size_t>(a)])
                    sa[fine.orbit_of(c)].push_back(c);
                for (int c : children[static_cast<std::size_t>(b)])
                    sb[fine.orbit_of(c)].push_back(c);
                if (sa.size() != sb.size())
                    raise(ErrorKind::Internal, "unbalanced refinement while extending a witness");
                for (auto& [orb, xs] : sa) {
                    auto it = sb.find(orb);
                    if (it == sb.end() || it->second.size() != xs.size())
                        raise(ErrorKind::Internal,
                              "unbalanced refinement while extending a witness");
                    auto by_rank = [&fine_rank](int x, int y) {
                        return fine_rank[static_cast<std::size_t>(x)] <
                               fine_rank[static_cast<std::size_t>(y)];
                    };
                    std::sort(xs.begin(), xs.end(), by_rank);
                    std::sort(it->second.begin(), it->second.end(), by_rank);
                    for (std::size_t t = 0; t < xs.size(); ++t)
                        out.emplace_back(xs[t], it->second[t]);
                }
            }
            std::sort(out.begin(), out.end());
            return out;
        };

        for (auto& [oid, o] : orbits_) {
            for (auto& atom : o.atoms) {
                std::vector<int> next;
                for (int id : atom)
                    next.insert(next.end(), children[static_cast<std::size_t>(id)].begin(),
                                children[static_cast<std::size_t>(id)].end());
                std::sort(next.begin(), next.end());
                atom = std::move(next);
            }
            for (auto& w : o.witnesses) w = extend_sparse(w);
        }
        children_.push_back(std::move(children));
        load_stage(m);
    }

    enum class MatchMode { Inject, Exact };

    std::optional<SparseMap> try_match(const std::vector<int>& src, const std::vector<int>& tgt,
                                       MatchMode mode) const {
        std::map<int, std::vector<int>> s_by_orbit, t_by_orbit;
        for (int id : src) s_by_orbit[us_->orbit_of(id)].push_back(id);
        for (int id : tgt) t_by_orbit[us_->orbit_of(id)].push_back(id);
        if (mode == MatchMode::Inject) {
            for (const auto& [o, xs] : s_by_orbit) {
                auto it = t_by_orbit.find(o);
                if (it == t_by_orbit.end() || it->second.size() < xs.size()) return std::nullopt;
            }
        } else {
            if (s_by_orbit.size() != t_by_orbit.size()) return std::nullopt;
            for (const auto& [o, xs] : s_by_orbit) {
                auto it = t_by_orbit.find(o);
                if (it == t_by_orbit.end() || it->second.size() != xs.size()) return std::nullopt;
            }
        }
        SparseMap out;
        auto by_rank = [this](int a, int b) {
            return canon_[static_cast<std::size_t>(a)] < canon_[static_cast<std::size_t>(b)];
        };
        for (auto& [o, xs] : s_by_orbit) {
            auto& ys = t_by_orbit[o];
            std::vector<int> s2 = xs, t2 = ys;
            std::sort(s2.begin(), s2.end(), by_rank);
            std::sort(t2.begin(), t2.end(), by_rank);
            for (std::size_t t = 0; t < s2.size(); ++t) out.emplace_back(s2[t], t2[t]);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    StageSeqHandle seq_;
    ErgodicList measures_;
    int max_stage_;
    int stage_ = 0;
    const UnitSystem* us_ = nullptr;
    std::vector<std::vector<Rational>> mass_;
    std::vector<int> canon_;
    std::map<int, WOrbit> orbits_;
    int next_orbit_ = 0;
    std::vector<std::vector<std::vector<int>>> children_;  // one table per raise
};

}  // namespace

// ---------------------------------------------------------------------------
// GammaPartition
// ---------------------------------------------------------------------------

GammaPartition::GammaPartition(EquivMode mode, StageSeqHandle seq, ErgodicList measures,
                               std::vector<GammaOrbit> orbits)
    : mode_(mode), seq_(std::move(seq)), measures_(std::move(measures)), orbits_(std::move(orbits)) {
    for (auto& o : orbits_)
        if (o.witnesses.size() != o.atoms.size()) o.witnesses.resize(o.atoms.size());
}

GammaPartition GammaPartition::trivial(StageSeqHandle seq, ErgodicList measures) {
    GammaOrbit o;
    o.atoms.push_back(Clopen::whole_space());
    o.witnesses.resize(1);
    return GammaPartition(EquivMode::Sim, std::move(seq), std::move(measures), {std::move(o)});
}

GammaPartition GammaPartition::from_stage(StageSeqHandle seq, ErgodicList measures, int stage) {
    const UnitSystem& us = seq->stage(stage);
    std::vector<GammaOrbit> orbits;
    for (const auto& orbit : us.orbits()) {
        GammaOrbit o;
        for (std::size_t t = 0; t < orbit.size(); ++t) {
            o.atoms.push_back(us.atoms()[static_cast<std::size_t>(orbit[t])]);
            if (t == 0) {
                o.witnesses.emplace_back();
            } else {
                auto g = assemble_element(us, {{orbit[0], orbit[t]}});
                if (!g) raise(ErrorKind::Internal, "stage orbit witness failed to assemble");
                o.witnesses.push_back(StageWitness{stage, std::move(*g)});
            }
        }
        orbits.push_back(std::move(o));
    }
    return GammaPartition(EquivMode::Sim, std::move(seq), std::move(measures), std::move(orbits));
}

bool GammaPartition::compatible(const Clopen& u) const {
    ClopenIndex idx(u);
    for (const auto& o : orbits_)
        for (const auto& a : o.atoms)
            if (idx.classify(a) == -1) return false;
    return true;
}

std::vector<Clopen> GammaPartition::all_atoms() const {
    std::vector<Clopen> out;
    for (const auto& o : orbits_) out.insert(out.end(), o.atoms.begin(), o.atoms.end());
    return out;
}

Report GammaPartition::verify(int max_stage) const {
    Report r;
    r.subject = "gamma_partition";
    const auto& bs = bases();

    const auto atoms = all_atoms();
    bool disjoint = true;
    std::string detail;
    for (std::size_t i = 0; i < atoms.size() && disjoint; ++i)
        for (std::size_t j = i + 1; j < atoms.size() && disjoint; ++j)
            if (!clopen_disjoint(atoms[i], atoms[j], bs)) {
                disjoint = false;
                detail = clopen_to_string(atoms[i]) + " overlaps " + clopen_to_string(atoms[j]);
            }
    r.require("atoms_pairwise_disjoint", disjoint, detail);
    Clopen all = Clopen::empty_set();
    for (const auto& a : atoms) all = clopen_union(all, a, bs);
    r.require("atoms_cover_space", all.is_whole(), clopen_to_string(all));

    bool witnessed = true;
    detail.clear();
    for (const auto& o : orbits_) {
        for (std::size_t t = 1; t < o.atoms.size() && witnessed; ++t) {
            if (mode_ == EquivMode::SimStar) {
                for (const auto& ev : measures_.measures())
                    if (ev.eval(o.atoms[0]) != ev.eval(o.atoms[t])) {
                        witnessed = false;
                        detail = "orbit atoms of unequal measure under " + ev.name;
                    }
                continue;
            }
            std::optional<StageWitness> w = o.witnesses[t];
            if (!w) w = orbit_equiv_clopen(*seq_, o.atoms[0], o.atoms[t], max_stage);
            if (!w) {
                witnessed = false;
                detail = "no witness carrying " + clopen_to_string(o.atoms[0]) + " to " +
                         clopen_to_string(o.atoms[t]);
                break;
            }
            StageWitness sw = *w;
            if (apply_stage_witness(*seq_, sw, o.atoms[0], max_stage) != o.atoms[t]) {
                witnessed = false;
                detail = "recorded witness fails to carry " + clopen_to_string(o.atoms[0]) +
                         " to " + clopen_to_string(o.atoms[t]);
            }
        }
    }
    r.require(mode_ == EquivMode::Sim ? "intra_orbit_witnesses_verified"
                                      : "intra_orbit_measures_equal",
              witnessed, detail);
    return r;
}

nlohmann::json GammaPartition::to_json() const {
    nlohmann::json orbits = nlohmann::json::array();
    for (const auto& o : orbits_) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& a : o.atoms) arr.push_back(clopen_to_string(a));
        orbits.push_back(arr);
    }
    return nlohmann::json{{"mode", mode_ == EquivMode::Sim ? "SIM" : "SIM_STAR"},
                          {"orbits", orbits}};
}

long long orbit_count(const GammaPartition& p, int orbit, const Clopen& u) {
    const auto& o = p.orbits().at(static_cast<std::size_t>(orbit));
    ClopenIndex idx(u);
    long long n = 0;
    for (const auto& a : o.atoms) {
        const int c = idx.classify(a);
        if (c == -1)
            raise(ErrorKind::NotCompatible,
                  clopen_to_string(u) + " is not compatible with the partition");
        n += c;
    }
    return n;
}

GammaPartition common_refinement(const GammaPartition& p, const GammaPartition& q, int max_stage) {
    if (&p.seq() != &q.seq())
        raise(ErrorKind::InvalidDescriptor, "common refinement needs one stage sequence");
    for (int n = 0; n <= max_stage; ++n) {
        const UnitSystem& us = p.seq().stage(n);
        auto refines_gamma = [&us](const GammaPartition& g) {
            for (const auto& o : g.orbits()) {
                std::vector<std::vector<long long>> profiles;
                for (const auto& a : o.atoms) {
                    if (!us.compatible(a)) return false;
                    profiles.push_back(us.counts_per_orbit(a));
                }
                for (std::size_t t = 1; t < profiles.size(); ++t)
                    if (profiles[t] != profiles[0]) return false;
            }
            return true;
        };
        if (refines_gamma(p) && refines_gamma(q))
            return GammaPartition::from_stage(p.seq_handle(), p.measures(), n);
    }
    raise(ErrorKind::HorizonExceeded,
          "no stage below " + std::to_string(max_stage) + " refines both partitions");
}

GammaPartition cut_orbit(const GammaPartition& p, int orbit,
                         const std::vector<std::vector<Clopen>>& parts, int max_stage) {
    const auto& bs = p.bases();
    const auto& o = p.orbits().at(static_cast<std::size_t>(orbit));
    if (parts.size() != o.atoms.size())
        raise(ErrorKind::IncoherentFragment, "one subdivision per atom is required");
    const std::size_t m = parts.empty() ? 0 : parts[0].size();
    for (std::size_t t = 0; t < parts.size(); ++t) {
        if (parts[t].size() != m)
            raise(ErrorKind::IncoherentFragment, "atoms split into unequal numbers of parts");
        Clopen un = Clopen::empty_set();
        for (const auto& piece : parts[t]) {
            if (!clopen_subset(piece, o.atoms[t], bs) || piece.is_empty())
                raise(ErrorKind::IncoherentFragment, "parts must be nonempty subsets of their atom");
            if (!clopen_disjoint(un, piece, bs))
                raise(ErrorKind::IncoherentFragment, "parts overlap");
            un = clopen_union(un, piece, bs);
        }
        if (un != o.atoms[t])
            raise(ErrorKind::IncoherentFragment, "parts do not cover their atom");
    }

    std::vector<GammaOrbit> out;
    for (std::size_t i = 0; i < p.orbits().size(); ++i)
        if (i != static_cast<std::size_t>(orbit)) out.push_back(p.orbits()[i]);
    for (std::size_t j = 0; j < m; ++j) {
        GammaOrbit sub;
        for (std::size_t t = 0; t < parts.size(); ++t) {
            sub.atoms.push_back(parts[t][j]);
            if (t == 0) {
                sub.witnesses.emplace_back();
                continue;
            }
            if (p.mode() == EquivMode::SimStar) {
                for (const auto& ev : p.measures().measures())
                    if (ev.eval(parts[0][j]) != ev.eval(parts[t][j]))
                        raise(ErrorKind::IncoherentFragment,
                              "parts are not measure-equivalent across the orbit");
                sub.witnesses.emplace_back();
            } else {
                auto w = orbit_equiv_clopen(p.seq(), parts[0][j], parts[t][j], max_stage);
                if (!w)
                    raise(ErrorKind::NoWitness, "no witness links part " + std::to_string(j) +
                                                    " across the orbit within the horizon");
                sub.witnesses.push_back(std::move(*w));
            }
        }
        out.push_back(std::move(sub));
    }
    return GammaPartition(p.mode(), p.seq_handle(), p.measures(), std::move(out));
}

GammaPartition join_orbits(const GammaPartition& p, int o1, int o2,
                           const std::optional<StageWitness>& witness, int max_stage) {
    if (o1 == o2) raise(ErrorKind::InvalidDescriptor, "cannot join an orbit with itself");
    const auto& a = p.orbits().at(static_cast<std::size_t>(o1));
    const auto& b = p.orbits().at(static_cast<std::size_t>(o2));

    if (p.mode() == EquivMode::Sim) {
        if (!witness) raise(ErrorKind::NoWitness, "Sim-mode join needs a witness");
        StageWitness w = *witness;
        if (apply_stage_witness(p.seq(), w, a.atoms[0], max_stage) != b.atoms[0])
            raise(ErrorKind::NoWitness, "witness does not carry rep(o1) onto rep(o2)");
    } else {
        for (const auto& ev : p.measures().measures())
            if (ev.eval(a.atoms[0]) != ev.eval(b.atoms[0]))
                raise(ErrorKind::NoWitness, "representatives have unequal measures");
    }

    std::vector<GammaOrbit> out;
    for (std::size_t i = 0; i < p.orbits().size(); ++i)
        if (i != static_cast<std::size_t>(o1) && i != static_cast<std::size_t>(o2))
            out.push_back(p.orbits()[i]);
    GammaOrbit joined = a;
    for (std::size_t t = 0; t < b.atoms.size(); ++t) {
        joined.atoms.push_back(b.atoms[t]);
        if (p.mode() == EquivMode::SimStar) {
            joined.witnesses.emplace_back();
        } else if (t == 0) {
            joined.witnesses.push_back(witness);
        } else if (b.witnesses[t]) {
            // rep(a) -> rep(b) -> atom t of b
            StageWitness w1 = *witness;
            StageWitness w2 = *b.witnesses[t];
            const int st = std::max(w1.stage, w2.stage);
            while (w1.stage < st) {
                w1.element = extend_element(w1.element, p.seq().stage(w1.stage),
                                            p.seq().stage(w1.stage + 1));
                ++w1.stage;
            }
            while (w2.stage < st) {
                w2.element = extend_element(w2.element, p.seq().stage(w2.stage),
                                            p.seq().stage(w2.stage + 1));
                ++w2.stage;
            }
            joined.witnesses.push_back(StageWitness{st, compose(w2.element, w1.element)});
        } else {
            joined.witnesses.emplace_back();
        }
    }
    out.push_back(std::move(joined));
    return GammaPartition(p.mode(), p.seq_handle(), p.measures(), std::move(out));
}

// ---------------------------------------------------------------------------
// The balanced-refinement algorithm.
// ---------------------------------------------------------------------------

namespace {

struct BalanceState {
    Workspace ws;
    std::vector<std::pair<int, int>> pairs;  // exceptional (C, D) workspace orbit ids
    std::vector<Clopen> input_atoms;         // atoms of the input partition
    std::vector<std::vector<int>> input_orbits;  // input orbit -> indices into input_atoms

    BalanceState(StageSeqHandle seq, ErgodicList m, int max_stage)
        : ws(std::move(seq), std::move(m), max_stage) {}

    bool is_pair_orbit(int oid) const {
        for (const auto& [c, d] : pairs)
            if (c == oid || d == oid) return true;
        return false;
    }

    long long gap(int oid, const std::vector<char>& mu, const std::vector<char>& mv) const {
        const auto& o = ws.orbits().at(oid);
        return ws.orbit_count_in(o, mu) - ws.orbit_count_in(o, mv);
    }
};

// Cuts a single-stage-atom piece off an orbit's representative; returns
// (piece fragment orbit id, rest orbit id). With partner == oid the piece is
// taken in a stage orbit where a sibling remains behind, otherwise in a
// stage orbit that the partner's representative inhabits, so the following
// join works in place. Raises the stage while no eligible atom exists.
std::pair<int, int> cut_piece_toward(BalanceState& st, int oid, int partner) {
    auto& ws = st.ws;
    for (;;) {
        const auto& rep = ws.orbits().at(oid).atoms[0];
        std::vector<int> eligible;
        if (partner == oid) {
            std::map<int, int> cnt;
            for (int id : rep) ++cnt[ws.us().orbit_of(id)];
            for (int id : rep)
                if (cnt[ws.us().orbit_of(id)] >= 2) eligible.push_back(id);
        } else if (rep.size() >= 2) {
            std::set<int> cols;
            for (int id : ws.orbits().at(partner).atoms[0]) cols.insert(ws.us().orbit_of(id));
            for (int id : rep)
                if (cols.count(ws.us().orbit_of(id))) eligible.push_back(id);
        }
        if (!eligible.empty()) {
            const int least = ws.canonical_least(eligible);
            std::vector<int> rest;
            for (int id : rep)
                if (id != least) rest.push_back(id);
            auto parts = ws.cut(oid, {{least}, rest});
            return {parts[0], parts[1]};
        }
        if (ws.stage() >= ws.max_stage())
            raise(ErrorKind::HorizonExceeded, "no eligible piece below the stage horizon");
        ws.raise_to(ws.stage() + 1);
    }
}

// Carves gamma(rep(src_frag)) out of the target orbit and joins the fragment
// pair; gamma is found by subequivalence of the representatives. Returns
// (joined orbit id, rest of target id); the rest id is -1 when the image
// swallowed the whole target (impossible under strict subequivalence, kept
// for safety).
std::pair<int, int> join_into(BalanceState& st, int src_frag, int target,
                              const char* tag = "") {
    auto& ws = st.ws;
    TrackedSet src = ws.track(ws.orbits().at(src_frag).atoms[0]);
    TrackedSet tgt = ws.track(ws.orbits().at(target).atoms[0]);
    if (std::getenv("CDW_TRACE") && *tag)
        std::fprintf(stderr, "[cdw] join_into %s: %zu -> %zu ids\n", tag, src.ids.size(), tgt.ids.size());
    SparseMap g = ws.subequiv(src, tgt);
    ws.refresh(src);
    ws.refresh(tgt);
    const std::vector<int> image = sparse_apply_set(g, src.ids);
    std::vector<int> rest;
    std::set_difference(tgt.ids.begin(), tgt.ids.end(), image.begin(), image.end(),
                        std::back_inserter(rest));
    SparseMap link;
    for (int id : src.ids) link.emplace_back(id, sparse_apply(g, id));
    std::sort(link.begin(), link.end());
    if (rest.empty()) {
        const int joined = ws.join(src_frag, target, link);
        return {joined, -1};
    }
    auto parts = ws.cut(target, {image, rest});
    const int joined = ws.join(src_frag, parts[0], link);
    return {joined, parts[1]};
}

// One descent pass: maps the designated source orbits into the designated
// target orbits and joins the induced fragments; the source orbits dissolve
// completely, the targets leave rest fragments behind.
void dissolve_into(BalanceState& st, const std::vector<int>& sources, std::vector<int> targets) {
    auto& ws = st.ws;
    std::vector<int> src_ids, tgt_ids;
    for (int o : sources)
        for (int id : ws.orbits().at(o).atoms[0]) src_ids.push_back(id);
    for (int o : targets)
        for (int id : ws.orbits().at(o).atoms[0]) tgt_ids.push_back(id);
    TrackedSet src = ws.track(std::move(src_ids));
    TrackedSet tgt = ws.track(std::move(tgt_ids));
    SparseMap g = ws.subequiv(src, tgt);

    for (int so : sources) {
        TrackedSet rep = ws.track(ws.orbits().at(so).atoms[0]);
        ws.refresh(rep);
        // pieces of the source rep, grouped by the target orbit hit
        std::vector<std::pair<int, std::vector<int>>> by_target;  // (index into targets, ids)
        for (std::size_t t = 0; t < targets.size(); ++t) {
            if (targets[t] < 0) continue;  // target fully consumed
            const auto& trep = ws.orbits().at(targets[t]).atoms[0];
            std::set<int> tset(trep.begin(), trep.end());
            std::vector<int> piece;
            for (int id : rep.ids)
                if (tset.count(sparse_apply(g, id))) piece.push_back(id);
            if (!piece.empty()) by_target.emplace_back(static_cast<int>(t), std::move(piece));
        }
        std::size_t covered = 0;
        for (const auto& [t, piece] : by_target) covered += piece.size();
        if (covered != rep.ids.size())
            raise(ErrorKind::Internal, "subequivalence image escapes the designated targets");

        std::vector<std::vector<int>> rep_parts;
        for (const auto& [t, piece] : by_target) rep_parts.push_back(piece);
        auto fragments = ws.cut(so, rep_parts);
        for (std::size_t t = 0; t < by_target.size(); ++t) {
            const auto& piece = by_target[t].second;
            const int target_slot = by_target[t].first;
            const std::vector<int> image = sparse_apply_set(g, piece);
            const auto& trep = ws.orbits().at(targets[static_cast<std::size_t>(target_slot)])
                                   .atoms[0];
            std::vector<int> rest;
            std::set_difference(trep.begin(), trep.end(), image.begin(), image.end(),
                                std::back_inserter(rest));
            SparseMap link;
            for (int id : piece) link.emplace_back(id, sparse_apply(g, id));
            std::sort(link.begin(), link.end());
            if (rest.empty()) {
                ws.join(fragments[static_cast<std::size_t>(t)],
                        targets[static_cast<std::size_t>(target_slot)], link);
                targets[static_cast<std::size_t>(target_slot)] = -1;
            } else {
                auto tparts =
                    ws.cut(targets[static_cast<std::size_t>(target_slot)], {image, rest});
                ws.join(fragments[static_cast<std::size_t>(t)], tparts[0], link);
                targets[static_cast<std::size_t>(target_slot)] = tparts[1];
            }
        }
    }
}

// Cuts equal small pieces off both orbits of an exceptional pair and joins
// them into one orbit (which inherits the pair's combined count profile);
// the pair becomes the rests. The sigma piece is taken in a stage orbit
// where the partner has atoms so that the injection works in place.
int pair_fragment_orbit(BalanceState& st, std::size_t pair_index) {
    auto& ws = st.ws;
    auto [c, d] = st.pairs[pair_index];
    for (;;) {
        const auto& rep_c = ws.orbits().at(c).atoms[0];
        const auto& rep_d = ws.orbits().at(d).atoms[0];
        std::set<int> d_cols;
        for (int id : rep_d) d_cols.insert(ws.us().orbit_of(id));
        std::vector<int> eligible;
        for (int id : rep_c)
            if (d_cols.count(ws.us().orbit_of(id))) eligible.push_back(id);
        if (!eligible.empty() && rep_c.size() >= 2) {
            const int sigma = ws.canonical_least(eligible);
            std::vector<int> rest;
            for (int id : rep_c)
                if (id != sigma) rest.push_back(id);
            auto parts = ws.cut(c, {{sigma}, rest});
            auto [joined, d_rest] = join_into(st, parts[0], d, "pair_fragment");
            if (d_rest < 0)
                raise(ErrorKind::Internal, "pair fragment swallowed the partner orbit");
            st.pairs[pair_index] = {parts[1], d_rest};
            return joined;
        }
        if (ws.stage() >= ws.max_stage())
            raise(ErrorKind::HorizonExceeded, "pair supports never meet below the horizon");
        ws.raise_to(ws.stage() + 1);
    }
}

// Shrinks an exceptional pair to small correction cores whose removal makes
// the two rests match exactly, stage orbit by stage orbit; the rests merge
// into one region orbit at the current stage. Returns the core orbit ids.
std::pair<int, int> split_pair_cores(BalanceState& st, std::size_t pair_index) {
    auto& ws = st.ws;
    for (;;) {
        auto [c, d] = st.pairs[pair_index];
        const auto& rep_c = ws.orbits().at(c).atoms[0];
        const auto& rep_d = ws.orbits().at(d).atoms[0];
        std::map<int, std::vector<int>> c_by_orbit, d_by_orbit;
        for (int id : rep_c) c_by_orbit[ws.us().orbit_of(id)].push_back(id);
        for (int id : rep_d) d_by_orbit[ws.us().orbit_of(id)].push_back(id);

        std::vector<int> t_ids, s_ids;
        std::set<int> cols;
        for (const auto& [o, v] : c_by_orbit) cols.insert(o);
        for (const auto& [o, v] : d_by_orbit) cols.insert(o);
        for (int o : cols) {
            const long long nc =
                c_by_orbit.count(o) ? static_cast<long long>(c_by_orbit[o].size()) : 0;
            const long long nd =
                d_by_orbit.count(o) ? static_cast<long long>(d_by_orbit[o].size()) : 0;
            if (nc > nd)
                t_ids.insert(t_ids.end(), c_by_orbit[o].begin(),
                             c_by_orbit[o].begin() + (nc - nd));
            else if (nd > nc)
                s_ids.insert(s_ids.end(), d_by_orbit[o].begin(),
                             d_by_orbit[o].begin() + (nd - nc));
        }
        if (t_ids.size() != s_ids.size())
            raise(ErrorKind::Internal, "pair representatives have unequal atom counts");
        if (t_ids.empty()) {
            // per-orbit counts already equal: peel one matched atom per side
            for (const auto& [o, v] : c_by_orbit)
                if (d_by_orbit.count(o)) {
                    t_ids.push_back(v.front());
                    s_ids.push_back(d_by_orbit[o].front());
                    break;
                }
        }
        const bool degenerate = t_ids.empty() || t_ids.size() >= rep_c.size() ||
                                s_ids.size() >= rep_d.size();
        if (degenerate) {
            // supports too polarized at this stage; refining mixes them
            if (ws.stage() >= ws.max_stage())
                raise(ErrorKind::HorizonExceeded,
                      "pair supports never share a stage orbit below the horizon");
            ws.raise_to(ws.stage() + 1);
            continue;
        }

        std::sort(t_ids.begin(), t_ids.end());
        std::sort(s_ids.begin(), s_ids.end());
        std::vector<int> c_rest, d_rest;
        std::set_difference(rep_c.begin(), rep_c.end(), t_ids.begin(), t_ids.end(),
                            std::back_inserter(c_rest));
        std::set_difference(rep_d.begin(), rep_d.end(), s_ids.begin(), s_ids.end(),
                            std::back_inserter(d_rest));
        auto c_parts = ws.cut(c, {t_ids, c_rest});
        auto d_parts = ws.cut(d, {s_ids, d_rest});
        auto link = ws.equiv_here(ws.orbits().at(c_parts[1]).atoms[0],
                                  ws.orbits().at(d_parts[1]).atoms[0]);
        if (!link) raise(ErrorKind::Internal, "matched rests failed to link");
        ws.join(c_parts[1], d_parts[1], *link);
        return {c_parts[0], d_parts[0]};
    }
}

// The core pair-rebalancing move: shrinks the pair to its correction cores,
// merges the rests into one balanced orbit, and joins a fragment of the
// opposite-signed orbit onto the C side.
void core_move(BalanceState& st, std::size_t pair_index, int delta_orbit) {
    auto [t_core, s_core] = split_pair_cores(st, pair_index);
    auto [c_new, delta_rest] = join_into(st, t_core, delta_orbit, "core_move");
    (void)delta_rest;  // leftover of the donor orbit, possibly none
    st.pairs[pair_index] = {c_new, s_core};
}

// Phase A: drive every pair's combined imbalance for (u, v) to zero.
void phase_a(BalanceState& st, const Clopen& u, const Clopen& v) {
    auto& ws = st.ws;
    for (int guard = 0;; ++guard) {
        if (guard > 4000)
            raise(ErrorKind::HorizonExceeded, "pair rebalancing did not converge");
        const auto mu = ws.inside_mask(u);
        const auto mv = ws.inside_mask(v);
        long long m_val = 0;
        std::size_t j_star = 0;
        std::vector<long long> deltas(st.pairs.size(), 0);
        for (std::size_t j = 0; j < st.pairs.size(); ++j) {
            deltas[j] = st.gap(st.pairs[j].first, mu, mv) + st.gap(st.pairs[j].second, mu, mv);
            if (std::llabs(deltas[j]) > m_val) {
                m_val = std::llabs(deltas[j]);
                j_star = j;
            }
        }
        if (m_val == 0) return;
        const long long sign = deltas[j_star] > 0 ? 1 : -1;

        // candidate region orbit with opposite-signed gap
        int delta_orbit = -1;
        long long best_k = 0;
        for (const auto& [oid, o] : ws.orbits()) {
            if (st.is_pair_orbit(oid)) continue;
            const long long gap = st.gap(oid, mu, mv);
            if (gap * sign < 0) {
                const long long k = std::llabs(gap);
                if (delta_orbit == -1 || k < best_k) {
                    delta_orbit = oid;
                    best_k = k;
                }
            }
        }
        if (delta_orbit == -1) {
            // manufacture one from a pair with opposite-signed imbalance
            std::size_t j_neg = st.pairs.size();
            for (std::size_t j = 0; j < st.pairs.size(); ++j)
                if (deltas[j] * sign < 0) {
                    j_neg = j;
                    break;
                }
            if (j_neg == st.pairs.size())
                raise(ErrorKind::Internal, "measure identity violated during rebalancing");
            pair_fragment_orbit(st, j_neg);
            continue;
        }
        while (best_k >= 2 * m_val) {
            // euclidean notch: knock the candidate's gap down by m_val
            const int e1 = pair_fragment_orbit(st, j_star);
            auto [e, rest] = join_into(st, e1, delta_orbit, "euclid");
            (void)rest;
            delta_orbit = e;
            best_k -= m_val;
        }
        core_move(st, j_star, delta_orbit);
    }
}

// Phase B: the single-pair balancing loop within the non-exceptional region.
// Returns the new exceptional pair when the endgame is reached.
std::optional<std::pair<int, int>> balance_single(BalanceState& st, const Clopen& u,
                                                  const Clopen& v) {
    auto& ws = st.ws;
    for (int guard = 0;; ++guard) {
        if (guard > 4000)
            raise(ErrorKind::HorizonExceeded, "region balancing did not converge");
        const auto mu = ws.inside_mask(u);
        const auto mv = ws.inside_mask(v);
        long long n_val = 0;
        for (const auto& [oid, o] : ws.orbits()) {
            if (st.is_pair_orbit(oid)) continue;
            n_val = std::max(n_val, std::llabs(st.gap(oid, mu, mv)));
        }
        if (n_val == 0) return std::nullopt;

        auto gather = [&](long long sign) {
            std::vector<int> heavy, light;
            for (const auto& [oid, o] : ws.orbits()) {
                if (st.is_pair_orbit(oid)) continue;
                const long long gap = st.gap(oid, mu, mv) * sign;
                if (gap == n_val) heavy.push_back(oid);
                if (gap < 0) light.push_back(oid);
            }
            return std::make_pair(heavy, light);
        };
        long long sign = 1;
        auto [heavy, light] = gather(sign);
        if (heavy.empty()) {
            sign = -1;
            std::tie(heavy, light) = gather(sign);
        }
        if (heavy.empty() || light.empty())
            raise(ErrorKind::Internal, "measure identity violated in region balancing");

        std::vector<int> h_ids, l_ids;
        for (int o : heavy)
            for (int id : ws.orbits().at(o).atoms[0]) h_ids.push_back(id);
        for (int o : light)
            for (int id : ws.orbits().at(o).atoms[0]) l_ids.push_back(id);
        const int cmp = ws.compare_mass(h_ids, l_ids);
        if (cmp == -1) {
            dissolve_into(st, heavy, light);
            continue;
        }
        if (cmp != 0)
            raise(ErrorKind::Internal, "impossible mass comparison in region balancing");

        // endgame: all unbalanced region orbits carry |gap| == n_val; collapse
        // to one orbit of each sign
        while (heavy.size() >= 2) {
            dissolve_into(st, {heavy.begin() + 1, heavy.end()}, light);
            std::tie(heavy, light) = gather(sign);
        }
        while (light.size() >= 2) {
            dissolve_into(st, {light.begin() + 1, light.end()}, {heavy[0]});
            std::tie(heavy, light) = gather(sign);
        }
        const int plus = sign > 0 ? heavy[0] : light[0];
        const int minus = sign > 0 ? light[0] : heavy[0];
        // representatives of an exceptional pair must have equal masses
        if (st.ws.compare_mass(ws.orbits().at(plus).atoms[0], ws.orbits().at(minus).atoms[0]) != 0)
            raise(ErrorKind::Internal, "endgame produced a pair with unequal representatives");
        return std::make_pair(plus, minus);
    }
}

// Cuts one orbit along the trace pattern of the masked clopen: rep ids are
// grouped by the membership signature of their witness images, so every atom
// of every new orbit lies inside or outside the clopen.
void make_orbit_compatible(BalanceState& st, int oid, const std::vector<char>& mask) {
    auto& ws = st.ws;
    const WOrbit& o = ws.orbits().at(oid);
    std::map<std::vector<char>, std::vector<int>> groups;
    for (int id : o.atoms[0]) {
        std::vector<char> sig;
        sig.reserve(o.atoms.size());
        for (std::size_t t = 0; t < o.atoms.size(); ++t)
            sig.push_back(mask[static_cast<std::size_t>(sparse_apply(o.witnesses[t], id))]);
        groups[sig].push_back(id);
    }
    if (groups.size() <= 1) return;  // every atom already homogeneous
    std::vector<std::vector<int>> parts;
    for (auto& [sig, ids] : groups) parts.push_back(std::move(ids));
    auto pieces = ws.cut(oid, parts);
    // preserve pair bookkeeping if an exceptional orbit was cut: impossible
    // here, compatibility cuts run before any pair references the orbit
    (void)pieces;
}

// Compatibility cuts run before any exceptional pair exists, so pairs are
// never split once formed: cuts and joins preserve compatibility, and stage
// raises only refine atoms in place.
void make_all_compatible(BalanceState& st, const Clopen& u) {
    auto& ws = st.ws;
    ws.ensure_compat(u);
    if (!st.pairs.empty())
        raise(ErrorKind::Internal, "compatibility cuts must precede pair formation");
    const auto mask = ws.inside_mask(u);
    std::vector<int> ids;
    for (const auto& [oid, o] : ws.orbits()) ids.push_back(oid);
    for (int oid : ids) make_orbit_compatible(st, oid, mask);
}

void process_pair(BalanceState& st, const Clopen& u, const Clopen& v) {
    auto& ws = st.ws;
    ws.ensure_compat(u);
    ws.ensure_compat(v);
    phase_a(st, u, v);
    auto pair = balance_single(st, u, v);
    if (!pair) return;
    // pair-minimality probe: equivalent representatives let the pair collapse
    // into one balanced orbit
    const auto& c_rep = ws.orbits().at(pair->first).atoms[0];
    const auto& d_rep = ws.orbits().at(pair->second).atoms[0];
    if (auto link = ws.equiv_here(c_rep, d_rep)) {
        ws.join(pair->first, pair->second, *link);
        return;
    }
    st.pairs.push_back(*pair);
}

// counts of one input-partition orbit inside a working orbit (the "copies")
long long copies_of(BalanceState& st, int oid, std::size_t input_orbit) {
    const Clopen& rep_atom = st.input_atoms[static_cast<std::size_t>(
        st.input_orbits[input_orbit][0])];
    const auto mask = st.ws.inside_mask(rep_atom);
    return st.ws.orbit_count_in(st.ws.orbits().at(oid), mask);
}

// The "additionally" clause: grow one region orbit holding more than 3*h*N
// copies of every input orbit, then transplant its bulk onto every
// exceptional orbit.
void strengthen_copies(BalanceState& st, const std::vector<Clopen>& us,
                       const std::vector<Clopen>& vs) {
    if (st.pairs.empty()) return;
    auto& ws = st.ws;

    long long n_total = 0;
    for (std::size_t i = 0; i < us.size(); ++i) {
        const auto mu = ws.inside_mask(us[i]);
        const auto mv = ws.inside_mask(vs[i]);
        long long ni = 0;
        for (const auto& [oid, o] : ws.orbits())
            ni = std::max(ni, std::llabs(st.gap(oid, mu, mv)));
        n_total += ni;
    }
    const long long h = static_cast<long long>(st.input_atoms.size());
    const long long target = 3 * h * n_total;

    // region must be nonempty to seed the big orbit
    {
        bool have_region = false;
        for (const auto& [oid, o] : ws.orbits())
            if (!st.is_pair_orbit(oid)) have_region = true;
        if (!have_region) pair_fragment_orbit(st, 0);
    }

    // seed: the region orbit with the heaviest representative
    int delta = -1;
    for (const auto& [oid, o] : ws.orbits()) {
        if (st.is_pair_orbit(oid)) continue;
        if (delta == -1 ||
            ws.compare_mass(ws.orbits().at(delta).atoms[0], o.atoms[0]) < 0)
            delta = oid;
    }

    // first give delta at least one copy of every input orbit
    for (std::size_t r = 0; r < st.input_orbits.size(); ++r) {
        if (copies_of(st, delta, r) >= 1) continue;
        int source = -1;
        for (const auto& [oid, o] : ws.orbits()) {
            if (oid == delta || st.is_pair_orbit(oid)) continue;
            if (copies_of(st, oid, r) >= 1) {
                source = oid;
                break;
            }
        }
        if (source == -1) {
            // draw the copies out of a pair
            for (std::size_t j = 0; j < st.pairs.size() && source == -1; ++j)
                if (copies_of(st, st.pairs[j].first, r) >= 1 ||
                    copies_of(st, st.pairs[j].second, r) >= 1)
                    source = pair_fragment_orbit(st, j);
        }
        if (source == -1)
            raise(ErrorKind::Internal, "an input orbit vanished from the partition");
        auto [piece, delta_rest] = cut_piece_toward(st, delta, source);
        (void)delta_rest;
        auto [joined, source_rest] = join_into(st, piece, source, "seed_copy");
        (void)source_rest;
        delta = joined;
    }

    // double until every copy count clears the bound
    for (int guard = 0;; ++guard) {
        if (guard > 200)
            raise(ErrorKind::HorizonExceeded, "copy amplification did not converge");
        bool enough = true;
        for (std::size_t r = 0; r < st.input_orbits.size(); ++r)
            enough = enough && copies_of(st, delta, r) > target;
        if (enough) break;
        auto [piece, rest] = cut_piece_toward(st, delta, delta);
        auto [joined, rest2] = join_into(st, piece, rest, "doubling");
        if (rest2 < 0) raise(ErrorKind::Internal, "doubling consumed the rest orbit");
        delta = joined;
    }

    // the transplant below draws two fragments per pair from delta's
    // representative, which therefore needs enough stage atoms to spare
    {
        TrackedSet rep = ws.track(ws.orbits().at(delta).atoms[0]);
        while (rep.ids.size() < 2 * st.pairs.size() + 2) {
            if (ws.stage() >= ws.max_stage())
                raise(ErrorKind::HorizonExceeded, "the copies reservoir cannot split enough");
            ws.raise_to(ws.stage() + 1);
            ws.refresh(rep);
        }
    }

    // transplant: shrink each pair to its correction cores (rests merge into
    // the region) and let both cores swallow a delta fragment
    for (std::size_t j = 0; j < st.pairs.size(); ++j) {
        auto [t_core, s_core] = split_pair_cores(st, j);
        auto [c_new, delta_rest] = join_into(st, t_core, delta, "transplant_c");
        if (delta_rest < 0)
            raise(ErrorKind::HorizonExceeded, "the copies reservoir was exhausted");
        delta = delta_rest;
        auto [d_new, delta_rest2] = join_into(st, s_core, delta, "transplant_d");
        if (delta_rest2 < 0)
            raise(ErrorKind::HorizonExceeded, "the copies reservoir was exhausted");
        delta = delta_rest2;
        st.pairs[j] = {c_new, d_new};
    }
}

GammaPartition materialize(BalanceState& st, StageSeqHandle seq, const ErgodicList& m,
                           std::vector<ExceptionalPair>& pairs_out, Report& construction) {
    auto& ws = st.ws;
    const UnitSystem& us = ws.us();
    const bool full_witnesses = us.atom_count() <= 4096;
    // canonical output order: orbits sorted by representative clopen
    std::vector<int> order;
    for (const auto& [oid, o] : ws.orbits()) order.push_back(oid);
    std::vector<std::pair<Clopen, int>> keyed;
    for (int oid : order) keyed.emplace_back(ws.to_clopen(ws.orbits().at(oid).atoms[0]), oid);
    std::sort(keyed.begin(), keyed.end());

    bool witnesses_ok = true;
    std::string detail;
    std::map<int, int> position;
    std::vector<GammaOrbit> orbits;
    for (const auto& [rep, oid] : keyed) {
        position[oid] = static_cast<int>(orbits.size());
        const WOrbit& w = ws.orbits().at(oid);
        GammaOrbit o;
        for (std::size_t t = 0; t < w.atoms.size(); ++t) {
            o.atoms.push_back(ws.to_clopen(w.atoms[t]));
            if (t == 0) {
                o.witnesses.emplace_back();
                continue;
            }
            // recompute the recorded witness action on the representative
            if (sparse_apply_set(w.witnesses[t], w.atoms[0]) != w.atoms[t]) {
                witnesses_ok = false;
                detail = "witness does not carry the representative onto atom " +
                         std::to_string(t);
            }
            if (full_witnesses) {
                std::vector<std::pair<int, int>> pairs(w.witnesses[t].begin(),
                                                       w.witnesses[t].end());
                auto g = assemble_element(us, pairs);
                if (!g) raise(ErrorKind::Internal, "witness failed to assemble at output");
                o.witnesses.push_back(StageWitness{ws.stage(), std::move(*g)});
            } else {
                o.witnesses.emplace_back();
            }
        }
        orbits.push_back(std::move(o));
    }
    construction.subject = "balanced_refinement_construction";
    construction.require("intra_orbit_witnesses_recomputed", witnesses_ok, detail);
    pairs_out.clear();
    for (const auto& [c, d] : st.pairs) pairs_out.push_back({position.at(c), position.at(d)});
    return GammaPartition(EquivMode::Sim, std::move(seq), m, std::move(orbits));
}

}  // namespace

AlmostEquivalentResult almost_equivalent_refine(const GammaPartition& p,
                                                const std::vector<Clopen>& us,
                                                const std::vector<Clopen>& vs, int max_stage) {
    if (us.size() != vs.size())
        raise(ErrorKind::InvalidDescriptor, "tuples must have equal lengths");
    for (std::size_t i = 0; i < us.size(); ++i) {
        bool eq = true;
        for (const auto& ev : p.measures().measures()) eq = eq && ev.eval(us[i]) == ev.eval(vs[i]);
        if (!eq)
            raise(ErrorKind::HypothesisViolated,
                  "pair " + std::to_string(i) + " is not measure-equivalent");
    }

    if (p.mode() != EquivMode::Sim)
        raise(ErrorKind::InvalidDescriptor, "the input partition must be in Sim mode");

    BalanceState st(p.seq_handle(), p.measures(), max_stage);
    // resolve every witness first, then seed the workspace at one fixed stage
    for (const auto& o : p.orbits())
        for (const auto& a : o.atoms) st.ws.ensure_compat(a);
    std::vector<std::vector<StageWitness>> resolved(p.orbits().size());
    int seed_stage = st.ws.stage();
    for (std::size_t oi = 0; oi < p.orbits().size(); ++oi) {
        const auto& o = p.orbits()[oi];
        for (std::size_t t = 1; t < o.atoms.size(); ++t) {
            std::optional<StageWitness> sw = o.witnesses[t];
            if (!sw) sw = orbit_equiv_clopen(p.seq(), o.atoms[0], o.atoms[t], max_stage);
            if (!sw)
                raise(ErrorKind::NoWitness, "input orbit lacks a witness within the stage horizon");
            if (apply_stage_witness(p.seq(), *sw, o.atoms[0], max_stage) != o.atoms[t])
                raise(ErrorKind::NoWitness, "input witness does not carry the representative");
            seed_stage = std::max(seed_stage, sw->stage);
            resolved[oi].push_back(std::move(*sw));
        }
    }
    st.ws.raise_to(seed_stage);
    for (std::size_t oi = 0; oi < p.orbits().size(); ++oi) {
        const auto& o = p.orbits()[oi];
        const auto mask0 = st.ws.inside_mask(o.atoms[0]);
        std::vector<int> rep_ids;
        for (std::size_t i = 0; i < mask0.size(); ++i)
            if (mask0[i]) rep_ids.push_back(static_cast<int>(i));
        WOrbit w;
        w.atoms.push_back(rep_ids);
        SparseMap identity;
        for (int id : rep_ids) identity.emplace_back(id, id);
        w.witnesses.push_back(std::move(identity));
        for (std::size_t t = 1; t < o.atoms.size(); ++t) {
            StageWitness sw = resolved[oi][t - 1];
            GroupElement g = sw.element;
            for (int s = sw.stage; s < seed_stage; ++s)
                g = extend_element(g, p.seq().stage(s), p.seq().stage(s + 1));
            SparseMap sm;
            for (int id : rep_ids) sm.emplace_back(id, g.perm[static_cast<std::size_t>(id)]);
            std::sort(sm.begin(), sm.end());
            w.atoms.push_back(sparse_apply_set(sm, rep_ids));
            w.witnesses.push_back(std::move(sm));
        }
        st.ws.add_orbit(std::move(w));
    }
    st.input_atoms = p.all_atoms();
    st.input_orbits.clear();
    {
        std::size_t idx = 0;
        for (const auto& o : p.orbits()) {
            std::vector<int> members;
            for (std::size_t t = 0; t < o.atoms.size(); ++t)
                members.push_back(static_cast<int>(idx++));
            st.input_orbits.push_back(std::move(members));
        }
    }

    // make every working orbit compatible with every tuple entry up front;
    // later cuts, joins and stage raises preserve compatibility
    for (std::size_t i = 0; i < us.size(); ++i) {
        make_all_compatible(st, us[i]);
        make_all_compatible(st, vs[i]);
    }
    for (std::size_t i = 0; i < us.size(); ++i) process_pair(st, us[i], vs[i]);
    strengthen_copies(st, us, vs);

    AlmostEquivalentResult out{GammaPartition::trivial(p.seq_handle(), p.measures()), {}, {}};
    out.partition = materialize(st, p.seq_handle(), p.measures(), out.pairs, out.construction);
    return out;
}

Report verify_almost_equivalence(const AlmostEquivalentResult& result, const GammaPartition& input,
                                 const std::vector<Clopen>& us, const std::vector<Clopen>& vs) {
    Report r;
    r.subject = "almost_equivalence";
    const auto& q = result.partition;
    const auto& bs = q.bases();
    const int horizon = default_max_stage();

    for (const auto& e : result.construction.entries) r.entries.push_back(e);
    bool has_witness_tables = true;
    for (const auto& o : q.orbits())
        for (std::size_t t = 1; t < o.atoms.size(); ++t)
            has_witness_tables = has_witness_tables && o.witnesses[t].has_value();
    if (has_witness_tables) {
        auto base = q.verify(horizon);
        for (auto& e : base.entries) r.entries.push_back(e);
    } else {
        // pairwise subset tests are quadratic at this size; covering plus
        // exact total mass one proves the partition property instead
        const auto atoms = q.all_atoms();
        Clopen all = Clopen::empty_set();
        for (const auto& a : atoms) all = clopen_union(all, a, bs);
        r.require("atoms_cover_space", all.is_whole());
        bool mass_one = true;
        for (const auto& ev : q.measures().measures()) {
            Rational total = 0;
            for (const auto& a : atoms) total += ev.eval(a);
            mass_one = mass_one && total == 1;
        }
        r.require("atoms_total_mass_one", mass_one);
    }

    // refines the input partition in the balanced sense
    {
        bool nested = true;
        for (const auto& o : q.orbits())
            for (const auto& a : o.atoms) {
                bool inside = false;
                for (const auto& big : input.all_atoms())
                    if (clopen_subset(a, big, bs)) inside = true;
                nested = nested && inside;
            }
        r.require("output_atoms_nest_in_input_atoms", nested);
        bool balanced = nested;
        if (nested) {
            for (const auto& io : input.orbits()) {
                for (std::size_t oq = 0; oq < q.orbits().size(); ++oq) {
                    std::set<long long> counts;
                    for (const auto& a : io.atoms)
                        counts.insert(orbit_count(q, static_cast<int>(oq), a));
                    balanced = balanced && counts.size() == 1;
                }
            }
        }
        r.require("balanced_copies_of_input_orbits", balanced);
    }

    std::set<int> exceptional;
    for (const auto& pr : result.pairs) {
        exceptional.insert(pr.c_orbit);
        exceptional.insert(pr.d_orbit);
    }
    r.require("pair_count_within_bound", result.pairs.size() <= us.size(),
              std::to_string(result.pairs.size()) + " pairs for " + std::to_string(us.size()) +
                  " clopen pairs");

    // per-pair imbalances of the output; also the building block of N
    std::vector<long long> n_i(us.size(), 0);
    bool compat = true;
    for (std::size_t i = 0; i < us.size(); ++i) {
        compat = compat && q.compatible(us[i]) && q.compatible(vs[i]);
        if (!compat) break;
        for (std::size_t o = 0; o < q.orbits().size(); ++o) {
            const long long gap = orbit_count(q, static_cast<int>(o), us[i]) -
                                  orbit_count(q, static_cast<int>(o), vs[i]);
            n_i[i] = std::max(n_i[i], std::llabs(gap));
        }
    }
    r.require("output_compatible_with_tuples", compat);
    if (!compat) return r;

    bool balanced_outside = true;
    for (std::size_t o = 0; o < q.orbits().size(); ++o) {
        if (exceptional.count(static_cast<int>(o))) continue;
        for (std::size_t i = 0; i < us.size(); ++i)
            if (orbit_count(q, static_cast<int>(o), us[i]) !=
                orbit_count(q, static_cast<int>(o), vs[i]))
                balanced_outside = false;
    }
    r.require("non_exceptional_orbits_balanced", balanced_outside);

    bool pair_balanced = true;
    bool pair_measures = true;
    for (const auto& pr : result.pairs) {
        for (std::size_t i = 0; i < us.size(); ++i) {
            const long long cu = orbit_count(q, pr.c_orbit, us[i]);
            const long long cv = orbit_count(q, pr.c_orbit, vs[i]);
            const long long du = orbit_count(q, pr.d_orbit, us[i]);
            const long long dv = orbit_count(q, pr.d_orbit, vs[i]);
            if (cu - cv != dv - du) pair_balanced = false;
        }
        const auto& c0 = q.orbits()[static_cast<std::size_t>(pr.c_orbit)].atoms[0];
        const auto& d0 = q.orbits()[static_cast<std::size_t>(pr.d_orbit)].atoms[0];
        for (const auto& ev : q.measures().measures())
            if (ev.eval(c0) != ev.eval(d0)) pair_measures = false;
    }
    r.require("pairs_balanced_as_pairs", pair_balanced);
    r.require("pair_representatives_equal_measure", pair_measures);

    // the copies strengthening
    long long n_total = 0;
    for (long long ni : n_i) n_total += ni;
    const long long h = static_cast<long long>(input.all_atoms().size());
    bool copies_ok = true;
    std::string copies_detail;
    for (int eo : exceptional) {
        for (const auto& io : input.orbits()) {
            const long long copies = orbit_count(q, eo, io.atoms[0]);
            if (copies <= 3 * h * n_total) {
                copies_ok = false;
                copies_detail = "orbit " + std::to_string(eo) + " holds " +
                                std::to_string(copies) + " copies, bound " +
                                std::to_string(3 * h * n_total);
            }
        }
    }
    r.require("exceptional_orbits_hold_3hN_copies", copies_ok, copies_detail);
    return r;
}

// ---------------------------------------------------------------------------
// Ordered partitions and the induced successor system.
// ---------------------------------------------------------------------------

namespace {

struct OrderedLevelData {
    int stage = 0;
    std::vector<std::vector<int>> orbit_order;  // stage atom ids in successor order
    std::vector<int> succ;                      // -1 on tops
    std::vector<int> pred;                      // -1 on bases
    Clopen base;
    Clopen top;
    int base_orbit = 0;
    int top_orbit = 0;
};

class OrderedSuccessorSystem final : public System {
public:
    OrderedSuccessorSystem(StageSeqHandle seq, std::vector<OrderedLevelData> levels)
        : seq_(std::move(seq)), levels_(std::move(levels)) {}

    const BaseSeq& bases() const override { return seq_->bases(); }
    std::string descriptor() const override { return "ordered(" + seq_->descriptor() + ")"; }

    SymbolicPoint apply(const SymbolicPoint&, Direction) const override {
        raise(ErrorKind::Unsupported, "the ordered successor system acts on clopens only");
    }

    Clopen apply(const Clopen& a, Direction d) const override {
        const auto& bs = seq_->bases();
        std::size_t k0 = levels_.size();
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            ClopenIndex idx(a);
            bool tiled = true;
            for (const auto& atom : seq_->stage(levels_[k].stage).atoms())
                if (idx.classify(atom) == -1) {
                    tiled = false;
                    break;
                }
            if (tiled) {
                k0 = k;
                break;
            }
        }
        if (k0 == levels_.size())
            raise(ErrorKind::HorizonExceeded, "clopen is deeper than the materialized stages");

        Clopen result = Clopen::empty_set();
        Clopen work = a;
        for (std::size_t k = k0; k < levels_.size() && !work.is_empty(); ++k) {
            const auto& lv = levels_[k];
            const UnitSystem& us = seq_->stage(lv.stage);
            const Clopen& wrap_src = d == Direction::Forward ? lv.top : lv.base;
            const Clopen& wrap_dst = d == Direction::Forward ? lv.base : lv.top;
            Clopen rest = Clopen::empty_set();
            for (std::size_t i = 0; i < us.atom_count(); ++i) {
                if (!clopen_subset(us.atoms()[i], work, bs)) continue;
                const int next =
                    d == Direction::Forward ? lv.succ[i] : lv.pred[i];
                if (next >= 0)
                    result = clopen_union(result, us.atoms()[static_cast<std::size_t>(next)], bs);
                else
                    rest = clopen_union(rest, us.atoms()[i], bs);
            }
            work = rest;
            if (work == wrap_src) {
                // the whole top wraps onto the whole base (and conversely)
                result = clopen_union(result, wrap_dst, bs);
                work = Clopen::empty_set();
            }
        }
        if (!work.is_empty())
            raise(ErrorKind::HorizonExceeded, "successor image needs deeper materialization");
        return result;
    }

private:
    StageSeqHandle seq_;
    std::vector<OrderedLevelData> levels_;
};

}  // namespace

OrderedSystemResult ordered_sequence_to_system(StageSeqHandle s, int depth, int max_stage) {
    const BaseSeq& bs = s->bases();
    std::vector<OrderedLevelData> levels;
    {
        OrderedLevelData lv;
        lv.stage = 0;
        if (s->stage(0).atom_count() != 1)
            raise(ErrorKind::InvalidDescriptor, "stage 0 must be the trivial partition");
        lv.orbit_order = {{0}};
        lv.succ = {-1};
        lv.pred = {-1};
        lv.base = Clopen::whole_space();
        lv.top = Clopen::whole_space();
        levels.push_back(std::move(lv));
    }

    for (int k = 1; k <= depth; ++k) {
        const OrderedLevelData& prev = levels.back();
        const UnitSystem& pus = s->stage(prev.stage);
        const Clopen alpha =
            pus.atoms()[static_cast<std::size_t>(prev.orbit_order[static_cast<std::size_t>(
                prev.base_orbit)].front())];
        const Clopen beta =
            pus.atoms()[static_cast<std::size_t>(prev.orbit_order[static_cast<std::size_t>(
                prev.top_orbit)].back())];
        const bool same_designated = prev.base_orbit == prev.top_orbit;

        int n = prev.stage + 1;
        for (;; ++n) {
            if (n > max_stage)
                raise(ErrorKind::HorizonExceeded,
                      "no stage supplies fragments of the designated orbits");
            const UnitSystem& fus = s->stage(n);
            bool ok = true;
            for (const auto& orbit : fus.orbits()) {
                long long in_a = 0, in_b = 0;
                for (int i : orbit) {
                    if (clopen_subset(fus.atoms()[static_cast<std::size_t>(i)], alpha, bs)) ++in_a;
                    if (clopen_subset(fus.atoms()[static_cast<std::size_t>(i)], beta, bs)) ++in_b;
                }
                const long long need = same_designated ? 2 : 1;
                if (in_a < need || in_b < need) {
                    ok = false;
                    break;
                }
            }
            if (ok) break;
        }

        const UnitSystem& fus = s->stage(n);
        OrderedLevelData lv;
        lv.stage = n;
        for (const auto& orbit : fus.orbits()) {
            // cells: per previous atom (in previous successor order), the
            // contained atoms of this orbit in canonical order
            std::map<int, std::vector<int>> cell;  // prev atom id -> orbit atoms inside
            for (int i : orbit) {
                int parent = -1;
                for (std::size_t a = 0; a < pus.atom_count(); ++a)
                    if (clopen_subset(fus.atoms()[static_cast<std::size_t>(i)], pus.atoms()[a],
                                      bs)) {
                        parent = static_cast<int>(a);
                        break;
                    }
                if (parent < 0)
                    raise(ErrorKind::Internal, "stage does not refine the previous level");
                cell[parent].push_back(i);
            }
            for (auto& [pa, xs] : cell)
                std::sort(xs.begin(), xs.end(), [&fus](int a, int b) {
                    return fus.atoms()[static_cast<std::size_t>(a)] <
                           fus.atoms()[static_cast<std::size_t>(b)];
                });
            // fragments (po, t): one atom per previous atom of orbit po
            struct Fragment {
                int prev_orbit;
                int copy;
                std::vector<int> atoms;
            };
            std::vector<Fragment> fragments;
            for (std::size_t po = 0; po < prev.orbit_order.size(); ++po) {
                const auto& porder = prev.orbit_order[po];
                const std::size_t copies = cell[porder.front()].size();
                for (const auto& pa : porder)
                    if (cell[pa].size() != copies)
                        raise(ErrorKind::Internal, "unbalanced fragment counts at ordering");
                for (std::size_t t = 0; t < copies; ++t) {
                    Fragment f;
                    f.prev_orbit = static_cast<int>(po);
                    f.copy = static_cast<int>(t);
                    for (const auto& pa : porder) f.atoms.push_back(cell[pa][t]);
                    fragments.push_back(std::move(f));
                }
            }
            // arrange blocks: base-designated fragment first, top-designated
            // fragment (the last copy) last, the rest canonically
            std::size_t first = fragments.size(), last = fragments.size();
            for (std::size_t f = 0; f < fragments.size(); ++f) {
                if (fragments[f].prev_orbit == prev.base_orbit && fragments[f].copy == 0)
                    first = f;
            }
            for (std::size_t f = fragments.size(); f-- > 0;) {
                if (f == first) continue;
                if (fragments[f].prev_orbit == prev.top_orbit) {
                    last = f;
                    break;
                }
            }
            if (first == fragments.size() || last == fragments.size())
                raise(ErrorKind::Internal, "designated fragments missing");
            std::vector<int> order;
            order.insert(order.end(), fragments[first].atoms.begin(),
                         fragments[first].atoms.end());
            for (std::size_t f = 0; f < fragments.size(); ++f) {
                if (f == first || f == last) continue;
                order.insert(order.end(), fragments[f].atoms.begin(), fragments[f].atoms.end());
            }
            order.insert(order.end(), fragments[last].atoms.begin(), fragments[last].atoms.end());
            lv.orbit_order.push_back(std::move(order));
        }

        lv.succ.assign(fus.atom_count(), -1);
        lv.pred.assign(fus.atom_count(), -1);
        lv.base = Clopen::empty_set();
        lv.top = Clopen::empty_set();
        for (const auto& order : lv.orbit_order) {
            for (std::size_t t = 0; t + 1 < order.size(); ++t) {
                lv.succ[static_cast<std::size_t>(order[t])] = order[t + 1];
                lv.pred[static_cast<std::size_t>(order[t + 1])] = order[t];
            }
            lv.base = clopen_union(lv.base, fus.atoms()[static_cast<std::size_t>(order.front())],
                                   bs);
            lv.top = clopen_union(lv.top, fus.atoms()[static_cast<std::size_t>(order.back())], bs);
        }
        // designate the next level's anchor orbits deterministically
        lv.base_orbit = 0;
        lv.top_orbit = static_cast<int>(lv.orbit_order.size()) - 1;
        for (std::size_t o = 0; o < lv.orbit_order.size(); ++o) {
            if (fus.atoms()[static_cast<std::size_t>(lv.orbit_order[o].front())] <
                fus.atoms()[static_cast<std::size_t>(
                    lv.orbit_order[static_cast<std::size_t>(lv.base_orbit)].front())])
                lv.base_orbit = static_cast<int>(o);
            if (fus.atoms()[static_cast<std::size_t>(
                    lv.orbit_order[static_cast<std::size_t>(lv.top_orbit)].back())] <
                fus.atoms()[static_cast<std::size_t>(lv.orbit_order[o].back())])
                lv.top_orbit = static_cast<int>(o);
        }
        levels.push_back(std::move(lv));
    }

    // nested base point, read off the deepest designated base atom
    std::optional<SymbolicPoint> base_point;
    {
        const OrderedLevelData& last = levels.back();
        const UnitSystem& lus = s->stage(last.stage);
        const Clopen& anchor =
            lus.atoms()[static_cast<std::size_t>(last.orbit_order[static_cast<std::size_t>(
                last.base_orbit)].front())];
        const Word w = anchor.words().front();
        for (std::size_t q = 1; q <= w.size() && !base_point; ++q) {
            for (std::size_t pre = 0; pre + 2 * q <= w.size() && !base_point; ++pre) {
                bool fits = true;
                for (std::size_t i = pre; i + q < w.size() && fits; ++i) fits = (w[i] == w[i + q]);
                if (!fits) continue;
                base_point = SymbolicPoint::make(
                    Word(w.begin(), w.begin() + static_cast<long>(pre)),
                    Word(w.begin() + static_cast<long>(pre),
                         w.begin() + static_cast<long>(pre + q)),
                    bs);
            }
        }
        if (!base_point)
            raise(ErrorKind::HorizonExceeded, "base point shows no eventual period at this depth");
    }
    std::vector<OrderedStage> stages;
    for (const auto& lv : levels) {
        OrderedStage os;
        const UnitSystem& us = s->stage(lv.stage);
        for (const auto& order : lv.orbit_order) {
            std::vector<Clopen> atoms;
            for (int i : order) atoms.push_back(us.atoms()[static_cast<std::size_t>(i)]);
            os.orbits.push_back(std::move(atoms));
        }
        os.base = lv.base;
        os.top = lv.top;
        stages.push_back(std::move(os));
    }
    auto system = std::make_shared<OrderedSuccessorSystem>(std::move(s), std::move(levels));
    return OrderedSystemResult{std::move(system), std::move(*base_point), std::move(stages)};
}

}  // namespace cdw
