#include "cdw/measure.hpp"

#include <algorithm>
#include <set>

#include "cdw/errors.hpp"

namespace cdw {

std::string rational_to_string(const Rational& r) {
    const BigInt num = boost::multiprecision::numerator(r);
    const BigInt den = boost::multiprecision::denominator(r);
    if (den == 1) return num.str();
    return num.str() + "/" + den.str();
}

Rational rational_from_string(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return Rational(BigInt(s));
    return Rational(BigInt(s.substr(0, slash)), BigInt(s.substr(slash + 1)));
}

Rational odometer_measure(const BaseSeq& bases, const Clopen& a) {
    Rational total = 0;
    for (const auto& w : a.words()) {
        Rational mass = 1;
        for (std::size_t i = 0; i < w.size(); ++i) mass /= bases.at(i);
        total += mass;
    }
    return total;
}

ErgodicList::ErgodicList(std::vector<MeasureEvaluator> measures) : measures_(std::move(measures)) {
    if (measures_.empty()) raise(ErrorKind::InvalidDescriptor, "ergodic list must be nonempty");
}

ErgodicList odometer_ergodic_list(const BaseSeq& bases) {
    MeasureEvaluator ev;
    ev.name = "product:" + bases.to_string();
    ev.eval = [bases](const Clopen& a) { return odometer_measure(bases, a); };
    return ErgodicList({std::move(ev)});
}

const char* measure_order_name(MeasureOrder o) {
    switch (o) {
        case MeasureOrder::AllLt: return "ALL_LT";
        case MeasureOrder::AllEq: return "ALL_EQ";
        case MeasureOrder::AllGt: return "ALL_GT";
        case MeasureOrder::Mixed: return "MIXED";
    }
    return "?";
}

MeasureOrder compare_measures(const Clopen& a, const Clopen& b, const ErgodicList& m,
                              const BaseSeq& bases) {
    (void)bases;
    bool lt = true, eq = true, gt = true;
    for (const auto& ev : m.measures()) {
        const Rational ma = ev.eval(a);
        const Rational mb = ev.eval(b);
        lt = lt && (ma < mb);
        eq = eq && (ma == mb);
        gt = gt && (ma > mb);
    }
    if (eq) return MeasureOrder::AllEq;
    if (lt) return MeasureOrder::AllLt;
    if (gt) return MeasureOrder::AllGt;
    return MeasureOrder::Mixed;
}

Report verify_invariance(const DepthAutomorphism& g, const ErgodicList& m, const BaseSeq& bases) {
    Report r;
    r.subject = "depth_automorphism";

    const auto all_words = refine_to_depth(Clopen::whole_space(), g.depth, bases);
    std::set<Word> domain(all_words.begin(), all_words.end());

    std::set<Word> seen_src, seen_dst;
    bool automorphism = true;
    std::string detail;
    for (const auto& [src, dst] : g.images) {
        if (!domain.count(src) || !domain.count(dst)) {
            automorphism = false;
            detail = "entry " + word_to_string(src) + "->" + word_to_string(dst) +
                     " is not a pair of depth-" + std::to_string(g.depth) + " words";
            break;
        }
        if (!seen_src.insert(src).second || !seen_dst.insert(dst).second) {
            automorphism = false;
            detail = "mapping is not a bijection near " + word_to_string(src);
            break;
        }
    }
    if (automorphism && (seen_src.size() != domain.size() || seen_dst.size() != domain.size())) {
        automorphism = false;
        detail = "mapping does not cover all depth-" + std::to_string(g.depth) + " words";
    }
    r.require("is_depth_algebra_automorphism", automorphism, detail);
    if (!automorphism) return r;

    for (const auto& ev : m.measures()) {
        bool ok = true;
        detail.clear();
        for (const auto& [src, dst] : g.images) {
            const Rational ms = ev.eval(Clopen::cylinder(src));
            const Rational md = ev.eval(Clopen::cylinder(dst));
            if (ms != md) {
                ok = false;
                detail = "mu([" + word_to_string(src) + "]) = " + rational_to_string(ms) +
                         " but mu([" + word_to_string(dst) + "]) = " + rational_to_string(md);
                break;
            }
        }
        r.require("preserves_" + ev.name, ok, detail);
    }
    return r;
}

}  // namespace cdw
