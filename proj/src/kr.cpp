#include "cdw/kr.hpp"

#include <algorithm>
#include <sstream>

namespace cdw {

namespace {

long long default_bound(const Clopen& u) {
    const int d = u.depth();
    return 1LL << std::min(40, d + 4);
}

bool column_less(const Column& a, const Column& b) {
    if (a.height() != b.height()) return a.height() < b.height();
    return a.atoms[0].words() < b.atoms[0].words();
}

}  // namespace

KRPartition::KRPartition(SystemHandle system, std::vector<Column> columns)
    : system_(std::move(system)), columns_(std::move(columns)) {
    canonicalize_order();
}

KRPartition::KRPartition(SystemHandle system, std::vector<Column> columns, Clopen base, Clopen top)
    : system_(std::move(system)),
      columns_(std::move(columns)),
      base_(std::move(base)),
      top_(std::move(top)) {
    std::sort(columns_.begin(), columns_.end(), column_less);
}

void KRPartition::canonicalize_order() {
    std::sort(columns_.begin(), columns_.end(), column_less);
    const auto& bases = system_->bases();
    base_ = Clopen::empty_set();
    top_ = Clopen::empty_set();
    for (const auto& c : columns_) {
        base_ = clopen_union(base_, c.atoms.front(), bases);
        top_ = clopen_union(top_, c.atoms.back(), bases);
    }
}

std::vector<Clopen> KRPartition::all_atoms() const {
    std::vector<Clopen> out;
    for (const auto& c : columns_) out.insert(out.end(), c.atoms.begin(), c.atoms.end());
    return out;
}

std::size_t KRPartition::min_height() const {
    std::size_t m = columns_.empty() ? 0 : columns_[0].height();
    for (const auto& c : columns_) m = std::min(m, c.height());
    return m;
}

KRPartition first_return_partition(SystemHandle system, const Clopen& base, long long bound) {
    if (base.is_empty()) raise(ErrorKind::InvalidDescriptor, "first-return base must be nonempty");
    if (bound <= 0) bound = default_bound(base);
    const auto& bs = system->bases();

    std::vector<std::pair<long long, Clopen>> level_sets;  // (return time, base piece)
    Clopen remaining = base;
    // b holds {x : phi^i(x) in U, phi^j(x) not in U for 1 <= j < i} at step i
    Clopen b = system->apply(base, Direction::Backward);
    for (long long i = 1; i <= bound && !remaining.is_empty(); ++i) {
        Clopen ui = clopen_intersect(remaining, b, bs);
        if (!ui.is_empty()) {
            level_sets.emplace_back(i, ui);
            remaining = clopen_difference(remaining, ui, bs);
        }
        if (remaining.is_empty()) break;
        b = system->apply(clopen_difference(b, base, bs), Direction::Backward);
    }
    if (!remaining.is_empty())
        raise(ErrorKind::NonMinimalTimeout,
              "return times not found below bound " + std::to_string(bound) + " for base " +
                  clopen_to_string(base));

    std::vector<Column> columns;
    for (const auto& [time, ui] : level_sets) {
        Column c;
        c.atoms.push_back(ui);
        for (long long j = 1; j < time; ++j)
            c.atoms.push_back(system->apply(c.atoms.back(), Direction::Forward));
        columns.push_back(std::move(c));
    }
    return KRPartition(std::move(system), std::move(columns));
}

KRPartition make_compatible_multi(const KRPartition& p, const std::vector<Clopen>& us_in) {
    const auto& bs = p.system().bases();
    // skip clopens that are already unions of atoms
    const auto atoms = p.all_atoms();
    std::vector<Clopen> us;
    for (const auto& u : us_in) {
        bool compat = true;
        for (const auto& a : atoms) {
            const Clopen inter = clopen_intersect(a, u, bs);
            if (!inter.is_empty() && inter != a) {
                compat = false;
                break;
            }
        }
        if (!compat) us.push_back(u);
    }
    if (us.empty()) return p;
    std::vector<Column> columns;
    for (const auto& col : p.columns()) {
        // split the column base by the trace pattern of every u along the column
        std::vector<Clopen> parts{col.atoms.front()};
        for (const auto& u : us) {
            Clopen pulled = u;  // phi^{-j}(u) at level j of the scan below
            for (std::size_t j = 0; j < col.height(); ++j) {
                std::vector<Clopen> next;
                for (const auto& part : parts) {
                    Clopen in = clopen_intersect(part, pulled, bs);
                    Clopen out = clopen_difference(part, pulled, bs);
                    if (!in.is_empty()) next.push_back(in);
                    if (!out.is_empty()) next.push_back(out);
                }
                parts = std::move(next);
                pulled = p.system().apply(pulled, Direction::Backward);
            }
        }
        for (const auto& part : parts) {
            Column c;
            c.atoms.push_back(part);
            for (std::size_t j = 1; j < col.height(); ++j)
                c.atoms.push_back(p.system().apply(c.atoms.back(), Direction::Forward));
            columns.push_back(std::move(c));
        }
    }
    return KRPartition(p.system_handle(), std::move(columns));
}

KRPartition make_compatible(const KRPartition& p, const Clopen& u) {
    return make_compatible_multi(p, {u});
}

KRPartition make_compatible_depth(const KRPartition& p, int d) {
    const auto& bs = p.system().bases();
    if (p.system().cylinder_depth_preserving()) {
        // Cylinder traces along a column are decided at the base: two base
        // points share every depth-d cylinder trace iff they share their
        // depth-d cylinder, so splitting the base by depth-d prefixes is the
        // whole refinement.
        std::vector<Column> columns;
        for (const auto& col : p.columns()) {
            std::map<Word, std::vector<Word>> groups;
            for (const auto& w : col.atoms.front().words()) {
                if (static_cast<int>(w.size()) >= d) {
                    groups[Word(w.begin(), w.begin() + d)].push_back(w);
                } else {
                    for (const auto& ext : refine_to_depth(Clopen::cylinder(w), d, bs))
                        groups[ext].push_back(ext);
                }
            }
            for (auto& [prefix, words] : groups) {
                Column c;
                c.atoms.push_back(normalize(words, bs));
                for (std::size_t j = 1; j < col.height(); ++j)
                    c.atoms.push_back(p.system().apply(c.atoms.back(), Direction::Forward));
                columns.push_back(std::move(c));
            }
        }
        return KRPartition(p.system_handle(), std::move(columns));
    }
    std::vector<Clopen> cylinders;
    for (const auto& w : refine_to_depth(Clopen::whole_space(), d, bs))
        cylinders.push_back(Clopen::cylinder(w));
    return make_compatible_multi(p, cylinders);
}

KRPartition shrink_base(const KRPartition& p, const Clopen& v, long long bound) {
    const auto& bs = p.system().bases();
    if (v.is_empty()) raise(ErrorKind::InvalidDescriptor, "shrink_base needs a nonempty base");
    if (!clopen_subset(v, p.base(), bs))
        raise(ErrorKind::InvalidDescriptor, "shrink_base: new base must be inside the old base");
    if (v == p.base()) return p;
    KRPartition t = first_return_partition(p.system_handle(), v, bound);
    // Splitting against the old base atoms suffices for full refinement: two
    // points with the same base-atom itinerary traverse the same old columns
    // level by level, and the itinerary starts inside the old base since the
    // new base is contained in it.
    std::vector<Clopen> old_bases;
    for (const auto& col : p.columns()) old_bases.push_back(col.atoms.front());
    return make_compatible_multi(t, old_bases);
}

Report verify_kr(const KRPartition& p) {
    Report r;
    r.subject = "kr_partition";
    const auto& bs = p.system().bases();

    const auto atoms = p.all_atoms();
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
    r.require("atoms_cover_space", all.is_whole(), "union is " + clopen_to_string(all));

    bool chain_ok = true;
    detail.clear();
    for (std::size_t i = 0; i < p.columns().size() && chain_ok; ++i) {
        const auto& c = p.columns()[i];
        for (std::size_t j = 0; j + 1 < c.height(); ++j) {
            if (p.system().apply(c.atoms[j], Direction::Forward) != c.atoms[j + 1]) {
                chain_ok = false;
                detail = "column " + std::to_string(i) + ": phi(" + clopen_to_string(c.atoms[j]) +
                         ") != " + clopen_to_string(c.atoms[j + 1]);
                break;
            }
        }
    }
    r.require("columns_mapped_upward", chain_ok, detail);

    Clopen base_from_cols = Clopen::empty_set();
    Clopen top_from_cols = Clopen::empty_set();
    for (const auto& c : p.columns()) {
        base_from_cols = clopen_union(base_from_cols, c.atoms.front(), bs);
        top_from_cols = clopen_union(top_from_cols, c.atoms.back(), bs);
    }
    r.require("base_is_union_of_column_bases", base_from_cols == p.base(),
              clopen_to_string(base_from_cols) + " vs " + clopen_to_string(p.base()));
    r.require("top_is_union_of_column_tops", top_from_cols == p.top(),
              clopen_to_string(top_from_cols) + " vs " + clopen_to_string(p.top()));

    const Clopen top_image = p.system().apply(p.top(), Direction::Forward);
    r.require("top_maps_to_base", top_image == p.base(),
              "phi(top) = " + clopen_to_string(top_image) + " vs " + clopen_to_string(p.base()));
    return r;
}

std::string kr_to_dot(const KRPartition& p) {
    std::ostringstream os;
    os << "digraph tower {\n  rankdir=BT;\n";
    for (std::size_t i = 0; i < p.columns().size(); ++i) {
        const auto& c = p.columns()[i];
        os << "  subgraph cluster_" << i << " {\n    label=\"column " << i << " (height "
           << c.height() << ")\";\n";
        for (std::size_t j = 0; j < c.height(); ++j)
            os << "    c" << i << "_" << j << " [label=\"" << clopen_to_string(c.atoms[j])
               << "\"];\n";
        for (std::size_t j = 0; j + 1 < c.height(); ++j)
            os << "    c" << i << "_" << j << " -> c" << i << "_" << j + 1 << ";\n";
        os << "  }\n";
    }
    os << "}\n";
    return os.str();
}

nlohmann::json kr_to_json(const KRPartition& p) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : p.columns()) {
        nlohmann::json col = nlohmann::json::array();
        for (const auto& a : c.atoms) col.push_back(clopen_to_string(a));
        cols.push_back(col);
    }
    return nlohmann::json{{"system", p.system().descriptor()},
                          {"columns", cols},
                          {"base", clopen_to_string(p.base())},
                          {"top", clopen_to_string(p.top())}};
}

}  // namespace cdw
