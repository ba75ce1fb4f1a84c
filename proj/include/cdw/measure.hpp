#pragma once

#include <functional>
#include <string>
#include <vector>

#include "clopen.hpp"
#include "rational.hpp"
#include "report.hpp"

namespace cdw {

// Product measure of the adic odometer over the given bases: each canonical
// word w contributes the product of 1/base over its coordinates. This is the
// unique invariant measure of the odometer.
Rational odometer_measure(const BaseSeq& bases, const Clopen& a);

struct MeasureEvaluator {
    std::string name;
    std::function<Rational(const Clopen&)> eval;
};

// A finite list of exact invariant-measure evaluators; for built-in odometers
// the list is a singleton (unique ergodicity).
class ErgodicList {
public:
    explicit ErgodicList(std::vector<MeasureEvaluator> measures);

    const std::vector<MeasureEvaluator>& measures() const { return measures_; }
    Rational eval(std::size_t i, const Clopen& a) const { return measures_[i].eval(a); }
    std::size_t size() const { return measures_.size(); }

private:
    std::vector<MeasureEvaluator> measures_;
};

ErgodicList odometer_ergodic_list(const BaseSeq& bases);

enum class MeasureOrder { AllLt, AllEq, AllGt, Mixed };

const char* measure_order_name(MeasureOrder o);

// The trichotomy holding simultaneously for every measure in the list.
MeasureOrder compare_measures(const Clopen& a, const Clopen& b, const ErgodicList& m,
                              const BaseSeq& bases);

// A clopen-algebra automorphism described at a fixed depth: a mapping of all
// depth-d words. verify_invariance first checks it is a bijection of the
// depth-d cylinders, then checks measure preservation on each of them.
struct DepthAutomorphism {
    int depth = 0;
    std::vector<std::pair<Word, Word>> images;
};

Report verify_invariance(const DepthAutomorphism& g, const ErgodicList& m, const BaseSeq& bases);

}  // namespace cdw
