#include "cdw/clopen.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace cdw {

namespace {

struct TrieNode {
    bool full = false;  // the whole cylinder at this node is included
    std::map<Letter, TrieNode> kids;
};

void trie_insert(TrieNode& node, const Word& w, std::size_t pos) {
    if (node.full) return;
    if (pos == w.size()) {
        node.full = true;
        node.kids.clear();
        return;
    }
    trie_insert(node.kids[w[pos]], w, pos + 1);
}

// Merge complete sibling sets bottom-up; afterwards a node is full iff its
// cylinder is entirely included and no reduction is possible above it.
void trie_reduce(TrieNode& node, std::size_t depth, const BaseSeq& bases) {
    if (node.full) return;
    for (auto& [letter, kid] : node.kids) trie_reduce(kid, depth + 1, bases);
    const int b = bases.at(depth);
    if (static_cast<int>(node.kids.size()) == b) {
        bool all_full = true;
        for (auto& [letter, kid] : node.kids)
            if (!kid.full) {
                all_full = false;
                break;
            }
        if (all_full) {
            node.full = true;
            node.kids.clear();
        }
    }
}

void trie_collect(const TrieNode& node, Word& scratch, std::vector<Word>& out) {
    if (node.full) {
        out.push_back(scratch);
        return;
    }
    for (const auto& [letter, kid] : node.kids) {
        scratch.push_back(letter);
        trie_collect(kid, scratch, out);
        scratch.pop_back();
    }
}

void trie_complement(const TrieNode& node, std::size_t depth, const BaseSeq& bases, Word& scratch,
                     std::vector<Word>& out) {
    if (node.full) return;
    const int b = bases.at(depth);
    for (int l = 0; l < b; ++l) {
        const auto it = node.kids.find(static_cast<Letter>(l));
        scratch.push_back(static_cast<Letter>(l));
        if (it == node.kids.end())
            out.push_back(scratch);
        else
            trie_complement(it->second, depth + 1, bases, scratch, out);
        scratch.pop_back();
    }
}

void check_bases(const BaseSeq& bases) {
    if (!bases.valid()) raise(ErrorKind::InvalidDescriptor, "invalid base sequence");
}

}  // namespace

bool BaseSeq::valid() const {
    if (per.empty()) return false;
    for (int b : pre)
        if (b < 2 || b > 10) return false;
    for (int b : per)
        if (b < 2 || b > 10) return false;
    return true;
}

std::string BaseSeq::to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < pre.size(); ++i) os << pre[i] << ',';
    for (std::size_t i = 0; i < per.size(); ++i) {
        if (i) os << ',';
        os << per[i];
    }
    if (!pre.empty()) {
        // re-render with the separator between preperiod and period
        std::ostringstream os2;
        for (std::size_t i = 0; i < pre.size(); ++i) {
            if (i) os2 << ',';
            os2 << pre[i];
        }
        os2 << '|';
        for (std::size_t i = 0; i < per.size(); ++i) {
            if (i) os2 << ',';
            os2 << per[i];
        }
        return os2.str();
    }
    return os.str();
}

BaseSeq BaseSeq::parse(const std::string& text) {
    auto parse_list = [](const std::string& s) {
        std::vector<int> out;
        std::string cur;
        std::istringstream is(s);
        while (std::getline(is, cur, ',')) {
            if (cur.empty()) raise(ErrorKind::InvalidDescriptor, "empty base in '" + s + "'");
            for (char c : cur)
                if (!std::isdigit(static_cast<unsigned char>(c)))
                    raise(ErrorKind::InvalidDescriptor, "bad base '" + cur + "'");
            out.push_back(std::stoi(cur));
        }
        return out;
    };
    BaseSeq b;
    const auto bar = text.find('|');
    if (bar == std::string::npos) {
        b.per = parse_list(text);
    } else {
        b.pre = parse_list(text.substr(0, bar));
        b.per = parse_list(text.substr(bar + 1));
    }
    if (!b.valid())
        raise(ErrorKind::InvalidDescriptor, "invalid base sequence '" + text + "' (bases must be 2..10)");
    return b;
}

std::string word_to_string(const Word& w) {
    std::string s;
    s.reserve(w.size());
    for (Letter l : w) s.push_back(static_cast<char>('0' + l));
    return s;
}

Word word_from_string(const std::string& text) {
    Word w;
    w.reserve(text.size());
    for (char c : text) {
        if (c < '0' || c > '9') raise(ErrorKind::InvalidLetter, "bad letter '" + std::string(1, c) + "'");
        w.push_back(static_cast<Letter>(c - '0'));
    }
    return w;
}

bool word_valid(const Word& w, const BaseSeq& bases) {
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] >= bases.at(i)) return false;
    return true;
}

bool is_prefix(const Word& p, const Word& w) {
    if (p.size() > w.size()) return false;
    return std::equal(p.begin(), p.end(), w.begin());
}

int Clopen::depth() const {
    std::size_t d = 0;
    for (const auto& w : words_) d = std::max(d, w.size());
    return static_cast<int>(d);
}

Clopen normalize(std::vector<Word> words, const BaseSeq& bases) {
    check_bases(bases);
    for (const auto& w : words)
        if (!word_valid(w, bases))
            raise(ErrorKind::InvalidLetter,
                  "word '" + word_to_string(w) + "' has a letter exceeding its base");
    TrieNode root;
    for (const auto& w : words) trie_insert(root, w, 0);
    trie_reduce(root, 0, bases);
    std::vector<Word> out;
    Word scratch;
    trie_collect(root, scratch, out);
    std::sort(out.begin(), out.end());
    return Clopen(std::move(out));
}

Clopen clopen_union(const Clopen& a, const Clopen& b, const BaseSeq& bases) {
    std::vector<Word> ws = a.words();
    ws.insert(ws.end(), b.words().begin(), b.words().end());
    return normalize(std::move(ws), bases);
}

Clopen clopen_intersect(const Clopen& a, const Clopen& b, const BaseSeq& bases) {
    std::vector<Word> ws;
    for (const auto& u : a.words())
        for (const auto& v : b.words()) {
            if (is_prefix(u, v))
                ws.push_back(v);
            else if (is_prefix(v, u))
                ws.push_back(u);
        }
    return normalize(std::move(ws), bases);
}

Clopen clopen_complement(const Clopen& a, const BaseSeq& bases) {
    TrieNode root;
    for (const auto& w : a.words()) trie_insert(root, w, 0);
    std::vector<Word> out;
    Word scratch;
    if (a.is_empty()) return Clopen::whole_space();
    trie_complement(root, 0, bases, scratch, out);
    return normalize(std::move(out), bases);
}

Clopen clopen_difference(const Clopen& a, const Clopen& b, const BaseSeq& bases) {
    return clopen_intersect(a, clopen_complement(b, bases), bases);
}

bool clopen_subset(const Clopen& a, const Clopen& b, const BaseSeq& bases) {
    return clopen_intersect(a, b, bases) == a;
}

bool clopen_disjoint(const Clopen& a, const Clopen& b, const BaseSeq& bases) {
    return clopen_intersect(a, b, bases).is_empty();
}

std::vector<Word> refine_to_depth(const Clopen& a, int d, const BaseSeq& bases) {
    if (d < a.depth())
        raise(ErrorKind::DepthTooSmall, "depth " + std::to_string(d) + " < clopen depth " +
                                            std::to_string(a.depth()));
    std::vector<Word> out;
    for (const auto& w : a.words()) {
        // enumerate all extensions of w to length d
        std::vector<Word> frontier{w};
        while (!frontier.empty() && static_cast<int>(frontier.front().size()) < d) {
            std::vector<Word> next;
            for (const auto& u : frontier) {
                const int b = bases.at(u.size());
                for (int l = 0; l < b; ++l) {
                    Word v = u;
                    v.push_back(static_cast<Letter>(l));
                    next.push_back(std::move(v));
                }
            }
            frontier = std::move(next);
        }
        out.insert(out.end(), frontier.begin(), frontier.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string clopen_to_string(const Clopen& a) {
    std::string s = "[";
    for (std::size_t i = 0; i < a.words().size(); ++i) {
        if (i) s += ',';
        const auto& w = a.words()[i];
        s += w.empty() ? "e" : word_to_string(w);
    }
    s += ']';
    return s;
}

Clopen clopen_from_string(const std::string& text, const BaseSeq& bases) {
    if (text.size() < 2 || text.front() != '[' || text.back() != ']')
        raise(ErrorKind::InvalidDescriptor, "clopen must be bracketed: '" + text + "'");
    const std::string inner = text.substr(1, text.size() - 2);
    std::vector<Word> words;
    if (!inner.empty()) {
        std::istringstream is(inner);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok == "e")
                words.push_back(Word{});
            else
                words.push_back(word_from_string(tok));
        }
    }
    for (const auto& w : words)
        if (!word_valid(w, bases))
            raise(ErrorKind::InvalidLetter, "word '" + word_to_string(w) + "' exceeds base");
    for (std::size_t i = 0; i < words.size(); ++i)
        for (std::size_t j = 0; j < words.size(); ++j)
            if (i != j && is_prefix(words[i], words[j]))
                raise(ErrorKind::InvalidDescriptor, "word list is not prefix-free: '" + text + "'");
    return normalize(std::move(words), bases);
}

namespace {

Word rotate_right(Word v) {
    if (v.size() > 1) std::rotate(v.begin(), v.end() - 1, v.end());
    return v;
}

Word primitive_root(const Word& v) {
    const std::size_t n = v.size();
    for (std::size_t d = 1; d <= n / 2; ++d) {
        if (n % d) continue;
        bool ok = true;
        for (std::size_t i = d; i < n && ok; ++i) ok = (v[i] == v[i % d]);
        if (ok) return Word(v.begin(), v.begin() + static_cast<long>(d));
    }
    return v;
}

}  // namespace

SymbolicPoint SymbolicPoint::make(Word preperiod, Word period, const BaseSeq& bases) {
    if (period.empty()) raise(ErrorKind::InvalidDescriptor, "symbolic point needs a nonempty period");
    period = primitive_root(period);
    while (!preperiod.empty() && preperiod.back() == period.back()) {
        preperiod.pop_back();
        period = rotate_right(period);
    }
    SymbolicPoint p(std::move(preperiod), std::move(period));
    // Validate letters over one full alignment cycle of point and base periods.
    const std::size_t lcm = std::lcm(p.per_.size(), bases.per.size());
    const std::size_t bound = p.pre_.size() + bases.pre.size() + lcm + p.per_.size();
    for (std::size_t i = 0; i < bound; ++i)
        if (p.at(i) >= bases.at(i))
            raise(ErrorKind::InvalidLetter, "point letter at position " + std::to_string(i) +
                                                " exceeds its base");
    return p;
}

Word SymbolicPoint::prefix(std::size_t d) const {
    Word w(d);
    for (std::size_t i = 0; i < d; ++i) w[i] = at(i);
    return w;
}

std::string SymbolicPoint::to_string() const {
    return word_to_string(pre_) + "(" + word_to_string(per_) + ")";
}

SymbolicPoint SymbolicPoint::parse(const std::string& text, const BaseSeq& bases) {
    const auto open = text.find('(');
    const auto close = text.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close != text.size() - 1 ||
        close < open)
        raise(ErrorKind::InvalidDescriptor, "symbolic point must look like 'u(v)': '" + text + "'");
    Word pre = word_from_string(text.substr(0, open));
    Word per = word_from_string(text.substr(open + 1, close - open - 1));
    // "0()" is accepted as shorthand for the purely periodic point (0).
    if (per.empty()) {
        if (pre.empty())
            raise(ErrorKind::InvalidDescriptor, "empty symbolic point '" + text + "'");
        per = std::move(pre);
        pre = Word{};
    }
    return make(std::move(pre), std::move(per), bases);
}

bool contains_point(const Clopen& a, const SymbolicPoint& p) {
    for (const auto& w : a.words()) {
        bool match = true;
        for (std::size_t i = 0; i < w.size() && match; ++i) match = (p.at(i) == w[i]);
        if (match) return true;
    }
    return false;
}

bool tails_eventually_equal(const SymbolicPoint& p, const SymbolicPoint& q) {
    // Past both preperiods the pointwise difference is periodic with period
    // lcm of the two periods, so "eventually equal" is decided on one cycle.
    const std::size_t l = std::lcm(p.period().size(), q.period().size());
    const std::size_t start = std::max(p.preperiod().size(), q.preperiod().size());
    for (std::size_t i = start; i < start + l; ++i)
        if (p.at(i) != q.at(i)) return false;
    return true;
}

}  // namespace cdw
