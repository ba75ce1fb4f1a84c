#pragma once

// Independent oracles used across the test suites. These deliberately avoid
// the library's Clopen/System machinery: depth-d cylinders of the dyadic
// space are modeled as bits of an integer mask, words as little-endian digit
// vectors, and the odometer as integer increment.

#include <cstdint>
#include <random>
#include <vector>

#include "cdw/clopen.hpp"

namespace oracle {

// Depth-d words over base b in canonical (lexicographic) order.
inline std::vector<cdw::Word> all_words(int d, int b = 2) {
    std::vector<cdw::Word> out{cdw::Word{}};
    for (int i = 0; i < d; ++i) {
        std::vector<cdw::Word> next;
        for (const auto& w : out)
            for (int l = 0; l < b; ++l) {
                cdw::Word v = w;
                v.push_back(static_cast<cdw::Letter>(l));
                next.push_back(v);
            }
        out = std::move(next);
    }
    return out;
}

// "Adding 1 with right-carry" on a fixed-length word, digits as given.
inline cdw::Word add_one(cdw::Word w, const cdw::BaseSeq& bases) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] + 1 < bases.at(i)) {
            ++w[i];
            return w;
        }
        w[i] = 0;
    }
    return w;  // wraps to the zero word
}

// The value of a depth-d dyadic word read little-endian; add_one corresponds
// to +1 mod 2^d under this encoding.
inline std::uint64_t word_value(const cdw::Word& w) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < w.size(); ++i) v |= static_cast<std::uint64_t>(w[i]) << i;
    return v;
}

// Bitmask of depth-d dyadic words covered by a clopen; bit i is the word with
// little-endian value i.
inline std::uint64_t mask_at_depth(const cdw::Clopen& a, int d) {
    std::uint64_t m = 0;
    for (const auto& w : cdw::refine_to_depth(a, d, cdw::BaseSeq::constant(2)))
        m |= 1ULL << word_value(w);
    return m;
}

inline cdw::Clopen clopen_from_mask(std::uint64_t mask, int d) {
    const auto words = all_words(d);
    std::vector<cdw::Word> chosen;
    for (const auto& w : words)
        if (mask >> word_value(w) & 1) chosen.push_back(w);
    return cdw::normalize(chosen, cdw::BaseSeq::constant(2));
}

// Deterministic random clopen of depth <= d over base b.
template <class Rng>
cdw::Clopen random_clopen(Rng& rng, int d, int b = 2) {
    const auto words = all_words(d, b);
    std::vector<cdw::Word> chosen;
    std::uniform_int_distribution<int> coin(0, 3);
    for (const auto& w : words)
        if (coin(rng) == 0) chosen.push_back(w);
    return cdw::normalize(chosen, cdw::BaseSeq::constant(b));
}

template <class Rng>
cdw::SymbolicPoint random_point(Rng& rng, const cdw::BaseSeq& bases) {
    std::uniform_int_distribution<int> len(0, 4);
    std::uniform_int_distribution<int> plen(1, 4);
    const int np = len(rng), pp = plen(rng);
    cdw::Word pre, per;
    for (int i = 0; i < np; ++i)
        pre.push_back(static_cast<cdw::Letter>(
            std::uniform_int_distribution<int>(0, bases.at(i) - 1)(rng)));
    for (int i = 0; i < pp; ++i) {
        // stay valid at every position this letter can occupy
        int max_ok = 10;
        for (std::size_t pos = 0; pos < 64; ++pos) max_ok = std::min(max_ok, bases.at(pos));
        per.push_back(
            static_cast<cdw::Letter>(std::uniform_int_distribution<int>(0, max_ok - 1)(rng)));
    }
    return cdw::SymbolicPoint::make(pre, per, bases);
}

}  // namespace oracle
