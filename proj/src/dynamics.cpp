#include "cdw/dynamics.hpp"

#include <numeric>

namespace cdw {

Odometer::Odometer(BaseSeq bases) : bases_(std::move(bases)) {
    if (!bases_.valid()) raise(ErrorKind::InvalidDescriptor, "invalid odometer bases");
}

Word Odometer::apply_word(Word w, Direction d) const {
    if (d == Direction::Forward) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] + 1 < bases_.at(i)) {
                ++w[i];
                return w;
            }
            w[i] = 0;  // carry
        }
        // maximal word wraps to the zero word (already all zeros here)
        return w;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] > 0) {
            --w[i];
            return w;
        }
        w[i] = static_cast<Letter>(bases_.at(i) - 1);  // borrow
    }
    return w;
}

Clopen Odometer::apply(const Clopen& a, Direction d) const {
    std::vector<Word> out;
    out.reserve(a.words().size());
    for (const auto& w : a.words()) out.push_back(apply_word(w, d));
    return normalize(std::move(out), bases_);
}

namespace {

// Bound past which letter comparisons of an eventually periodic point against
// the eventually periodic base sequence repeat.
std::size_t alignment_bound(const SymbolicPoint& p, const BaseSeq& bases) {
    const std::size_t l = std::lcm(p.period().size(), bases.per.size());
    return std::max(p.preperiod().size(), bases.pre.size()) + l + 1;
}

// Period of p rephased so that it starts at absolute position L >= |preperiod|.
Word period_from(const SymbolicPoint& p, std::size_t L) {
    const Word& v = p.period();
    const std::size_t s = (L - p.preperiod().size()) % v.size();
    Word out(v.begin() + static_cast<long>(s), v.end());
    out.insert(out.end(), v.begin(), v.begin() + static_cast<long>(s));
    return out;
}

}  // namespace

SymbolicPoint Odometer::apply(const SymbolicPoint& p, Direction d) const {
    const std::size_t bound = alignment_bound(p, bases_);
    if (d == Direction::Forward) {
        // find the first coordinate that does not carry
        for (std::size_t i = 0; i < bound; ++i) {
            if (p.at(i) + 1 < bases_.at(i)) {
                Word pre(std::max(i + 1, p.preperiod().size()));
                for (std::size_t j = 0; j < pre.size(); ++j) pre[j] = j < i ? 0 : p.at(j);
                pre[i] = static_cast<Letter>(p.at(i) + 1);
                Word per = period_from(p, pre.size());
                return SymbolicPoint::make(std::move(pre), std::move(per), bases_);
            }
        }
        // p is the maximal point; its image is the zero point
        return SymbolicPoint::make({}, Word{0}, bases_);
    }
    for (std::size_t i = 0; i < bound; ++i) {
        if (p.at(i) > 0) {
            Word pre(std::max(i + 1, p.preperiod().size()));
            for (std::size_t j = 0; j < pre.size(); ++j)
                pre[j] = j < i ? static_cast<Letter>(bases_.at(j) - 1) : p.at(j);
            pre[i] = static_cast<Letter>(p.at(i) - 1);
            Word per = period_from(p, pre.size());
            return SymbolicPoint::make(std::move(pre), std::move(per), bases_);
        }
    }
    // p is the zero point; its preimage is the maximal point
    Word pre(bases_.pre.size());
    for (std::size_t j = 0; j < pre.size(); ++j) pre[j] = static_cast<Letter>(bases_.at(j) - 1);
    Word per(bases_.per.size());
    for (std::size_t j = 0; j < per.size(); ++j) per[j] = static_cast<Letter>(bases_.per[j] - 1);
    return SymbolicPoint::make(std::move(pre), std::move(per), bases_);
}

SystemHandle make_odometer(BaseSeq bases) { return std::make_shared<Odometer>(std::move(bases)); }

SystemHandle system_from_descriptor(const std::string& text) {
    const std::string prefix = "odometer:";
    if (text.rfind(prefix, 0) != 0)
        raise(ErrorKind::InvalidDescriptor, "unknown system descriptor '" + text + "'");
    return make_odometer(BaseSeq::parse(text.substr(prefix.size())));
}

std::optional<long long> same_orbit_within(const System& sys, const SymbolicPoint& p,
                                           const SymbolicPoint& q, long long horizon) {
    if (p == q) return 0;
    SymbolicPoint fwd = p;
    SymbolicPoint bwd = p;
    for (long long k = 1; k <= horizon; ++k) {
        fwd = sys.apply(fwd, Direction::Forward);
        if (fwd == q) return k;
        bwd = sys.apply(bwd, Direction::Backward);
        if (bwd == q) return -k;
    }
    return std::nullopt;
}

}  // namespace cdw
