#pragma once

#include <string>
#include <vector>

#include "dynamics.hpp"
#include "report.hpp"

namespace cdw {

// One column of a Kakutani-Rokhlin partition: atoms[0] is the base piece and
// phi maps atoms[j] onto atoms[j+1].
struct Column {
    std::vector<Clopen> atoms;
    std::size_t height() const { return atoms.size(); }
};

class KRPartition {
public:
    KRPartition(SystemHandle system, std::vector<Column> columns);

    // Unchecked: keeps the supplied base/top verbatim so that verify_kr can
    // report inconsistencies in externally supplied towers.
    KRPartition(SystemHandle system, std::vector<Column> columns, Clopen base, Clopen top);

    const System& system() const { return *system_; }
    SystemHandle system_handle() const { return system_; }
    const std::vector<Column>& columns() const { return columns_; }
    const Clopen& base() const { return base_; }
    const Clopen& top() const { return top_; }

    std::vector<Clopen> all_atoms() const;
    std::size_t min_height() const;

    // Columns come sorted by (height, least base word); this re-sorts after
    // hand edits in tests.
    void canonicalize_order();

private:
    SystemHandle system_;
    std::vector<Column> columns_;
    Clopen base_;
    Clopen top_;
};

// Columns indexed by first-return time to U; base equals U. The search stops
// with NonMinimalTimeout after `bound` steps (0 picks the default 2^(d+4)
// where d is the depth of U).
KRPartition first_return_partition(SystemHandle system, const Clopen& base, long long bound = 0);

// Refines P by cutting each column along the return-trace pattern of the
// given clopens, so that every one of them becomes a union of atoms.
KRPartition make_compatible(const KRPartition& p, const Clopen& u);
KRPartition make_compatible_multi(const KRPartition& p, const std::vector<Clopen>& us);
// Compatible with every depth-d cylinder.
KRPartition make_compatible_depth(const KRPartition& p, int d);

// Tower with base V obtained by stacking the columns of P traversed between
// successive visits to V. Requires V nonempty and contained in base(P).
KRPartition shrink_base(const KRPartition& p, const Clopen& v, long long bound = 0);

Report verify_kr(const KRPartition& p);

std::string kr_to_dot(const KRPartition& p);
nlohmann::json kr_to_json(const KRPartition& p);

}  // namespace cdw
