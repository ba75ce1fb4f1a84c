#pragma once

#include <memory>
#include <optional>
#include <string>

#include "clopen.hpp"

namespace cdw {

enum class Direction { Forward, Backward };

inline Direction reverse(Direction d) {
    return d == Direction::Forward ? Direction::Backward : Direction::Forward;
}

// A minimal homeomorphism acting exactly on clopens and symbolic points.
// Image and preimage are mutually inverse on both; implementations that
// cannot act on points throw Unsupported.
class System {
public:
    virtual ~System() = default;

    virtual const BaseSeq& bases() const = 0;
    virtual Clopen apply(const Clopen& a, Direction d) const = 0;
    virtual SymbolicPoint apply(const SymbolicPoint& p, Direction d) const = 0;
    virtual std::string descriptor() const = 0;
    // True when the image of every depth-d cylinder is a depth-d cylinder,
    // which admits much cheaper compatibility refinements.
    virtual bool cylinder_depth_preserving() const { return false; }
};

using SystemHandle = std::shared_ptr<const System>;

// The adic odometer over the given base sequence: add 1 at coordinate 0 and
// carry to the right. The image of a depth-d cylinder is a depth-d cylinder;
// the maximal word wraps to the zero word.
class Odometer final : public System {
public:
    explicit Odometer(BaseSeq bases);

    const BaseSeq& bases() const override { return bases_; }
    Clopen apply(const Clopen& a, Direction d) const override;
    SymbolicPoint apply(const SymbolicPoint& p, Direction d) const override;
    std::string descriptor() const override { return "odometer:" + bases_.to_string(); }
    bool cylinder_depth_preserving() const override { return true; }

    Word apply_word(Word w, Direction d) const;

private:
    BaseSeq bases_;
};

SystemHandle make_odometer(BaseSeq bases);

// Parses "odometer:2" or "odometer:2,3|2".
SystemHandle system_from_descriptor(const std::string& text);

// Smallest k by |k| (ties: positive first) with phi^k(p) = q and |k| <= horizon.
std::optional<long long> same_orbit_within(const System& sys, const SymbolicPoint& p,
                                           const SymbolicPoint& q, long long horizon);

}  // namespace cdw
