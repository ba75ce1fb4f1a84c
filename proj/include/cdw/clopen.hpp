#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cdw {

using Letter = std::uint8_t;
using Word = std::vector<Letter>;

// Alphabet sizes per coordinate, eventually periodic. Constant base 2 is the
// default space {0,1}^N. Bases are restricted to 2..10 so that words have an
// unambiguous digit-string text form.
struct BaseSeq {
    std::vector<int> pre;
    std::vector<int> per;  // nonempty

    static BaseSeq constant(int b) { return BaseSeq{{}, {b}}; }

    int at(std::size_t i) const {
        if (i < pre.size()) return pre[i];
        return per[(i - pre.size()) % per.size()];
    }
    bool valid() const;
    bool operator==(const BaseSeq&) const = default;

    std::string to_string() const;                     // "2" or "2,3|2"
    static BaseSeq parse(const std::string& text);
};

std::string word_to_string(const Word& w);             // "" printed as "e" by callers
Word word_from_string(const std::string& text);
bool word_valid(const Word& w, const BaseSeq& bases);
bool is_prefix(const Word& p, const Word& w);

// A clopen subset of X in canonical form: a reduced prefix-free antichain of
// words, sorted. {} denotes the empty set, {""} denotes X.
class Clopen {
public:
    Clopen() = default;

    static Clopen empty_set() { return Clopen(); }
    static Clopen whole_space() { return Clopen(std::vector<Word>{Word{}}); }
    static Clopen cylinder(const Word& w) { return Clopen(std::vector<Word>{w}); }

    const std::vector<Word>& words() const { return words_; }
    bool is_empty() const { return words_.empty(); }
    bool is_whole() const { return words_.size() == 1 && words_[0].empty(); }
    // Max word length; 0 for the empty set and for X.
    int depth() const;

    bool operator==(const Clopen&) const = default;
    auto operator<=>(const Clopen&) const = default;

private:
    friend Clopen normalize(std::vector<Word> words, const BaseSeq& bases);
    explicit Clopen(std::vector<Word> canonical_words) : words_(std::move(canonical_words)) {}
    std::vector<Word> words_;
};

// Unique reduced prefix-free form; validates letters against the bases.
Clopen normalize(std::vector<Word> words, const BaseSeq& bases);

Clopen clopen_union(const Clopen& a, const Clopen& b, const BaseSeq& bases);
Clopen clopen_intersect(const Clopen& a, const Clopen& b, const BaseSeq& bases);
Clopen clopen_complement(const Clopen& a, const BaseSeq& bases);
Clopen clopen_difference(const Clopen& a, const Clopen& b, const BaseSeq& bases);
bool clopen_subset(const Clopen& a, const Clopen& b, const BaseSeq& bases);
bool clopen_disjoint(const Clopen& a, const Clopen& b, const BaseSeq& bases);

// All depth-d words whose cylinders are contained in A. Requires d >= depth(A).
std::vector<Word> refine_to_depth(const Clopen& a, int d, const BaseSeq& bases);

// Text form "[00,01,1]"; "[]" for the empty set, "[e]" for X. Parsing rejects
// letter violations and word lists that are not prefix-free.
std::string clopen_to_string(const Clopen& a);
Clopen clopen_from_string(const std::string& text, const BaseSeq& bases);

// An eventually periodic point of X, canonical: minimal period, then minimal
// preperiod. Canonical forms are equal iff the denoted sequences are equal.
class SymbolicPoint {
public:
    static SymbolicPoint make(Word preperiod, Word period, const BaseSeq& bases);

    const Word& preperiod() const { return pre_; }
    const Word& period() const { return per_; }

    Letter at(std::size_t i) const {
        if (i < pre_.size()) return pre_[i];
        return per_[(i - pre_.size()) % per_.size()];
    }
    Word prefix(std::size_t d) const;

    bool operator==(const SymbolicPoint&) const = default;
    auto operator<=>(const SymbolicPoint&) const = default;

    std::string to_string() const;  // "u(v)", e.g. "0(10)" or "(0)"
    static SymbolicPoint parse(const std::string& text, const BaseSeq& bases);

private:
    SymbolicPoint(Word pre, Word per) : pre_(std::move(pre)), per_(std::move(per)) {}
    Word pre_;
    Word per_;
};

bool contains_point(const Clopen& a, const SymbolicPoint& p);

// True iff the two denoted sequences agree from some coordinate on with no
// shift (the E_0 relation).
bool tails_eventually_equal(const SymbolicPoint& p, const SymbolicPoint& q);

}  // namespace cdw
