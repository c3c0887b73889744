#pragma once

// Pattern search over an opened index. A base pattern is lifted to k
// super-patterns, one per displacement d: fixed super-characters in the
// middle (the core), and masked ones at either edge where the pattern does
// not fill a whole k-mer.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "encfm/alphabet.hpp"
#include "encfm/block_store.hpp"
#include "encfm/error.hpp"
#include "encfm/fasta.hpp"
#include "encfm/parallel.hpp"

namespace encfm {

inline constexpr char kWildcard = '?';

struct SuperPattern {
    unsigned displacement = 0;
    std::optional<std::string> headMask;  ///< '?' then fixed symbols
    std::vector<std::string> core;        ///< fully fixed k-mers
    std::optional<std::string> tailMask;  ///< fixed symbols then '?'

    std::size_t length() const noexcept { return core.size() + (headMask ? 1 : 0) + (tailMask ? 1 : 0); }

    friend bool operator==(const SuperPattern&, const SuperPattern&) = default;
};

struct MatchPosition {
    std::uint64_t itemIndex = 0;
    std::uint64_t offset = 0;

    friend auto operator<=>(const MatchPosition&, const MatchPosition&) = default;
};

/// Half-open row interval of the BWT matrix.
struct RowRange {
    std::uint64_t begin = 0, end = 0;

    std::uint64_t size() const noexcept { return end - begin; }
    bool empty() const noexcept { return begin >= end; }

    friend bool operator==(const RowRange&, const RowRange&) = default;
};

using RowSet = std::vector<RowRange>;

inline std::uint64_t rowCount(const RowSet& s) {
    std::uint64_t n = 0;
    for (const auto& r : s) n += r.size();
    return n;
}

inline bool isSpecial(char c) noexcept { return c == kTerminator || c == kSeparator; }

/// The k super-patterns of a pattern, d = 0 .. k-1. The pattern must be at
/// least k symbols long.
inline std::vector<SuperPattern> computeSuperPatterns(std::string_view pattern, unsigned k) {
    if (k < 1) throw ParameterError("k must be >= 1");
    if (pattern.size() < k) {
        throw UnsupportedPatternError("pattern length " + std::to_string(pattern.size()) +
                                      " is shorter than k = " + std::to_string(k));
    }
    const std::size_t m = pattern.size();
    std::vector<SuperPattern> out;
    for (unsigned d = 0; d < k; ++d) {
        SuperPattern sp;
        sp.displacement = d;
        const std::size_t slots = (d + m + k - 1) / k;
        for (std::size_t s = 0; s < slots; ++s) {
            std::string kmer(k, kWildcard);
            bool masked = false;
            for (unsigned j = 0; j < k; ++j) {
                const std::size_t g = s * k + j;
                if (g >= d && g - d < m) {
                    kmer[j] = pattern[g - d];
                } else {
                    masked = true;
                }
            }
            if (!masked) {
                sp.core.push_back(std::move(kmer));
            } else if (s == 0) {
                sp.headMask = std::move(kmer);
            } else {
                sp.tailMask = std::move(kmer);
            }
        }
        out.push_back(std::move(sp));
    }
    return out;
}

/// '?' matches any sequence symbol.
inline bool headMatches(std::string_view kmer, std::string_view mask) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == kWildcard ? isSpecial(kmer[i]) : kmer[i] != mask[i]) return false;
    }
    return true;
}

/// '?' matches sequence symbols, possibly followed by '&' padding to the end.
inline bool tailMatches(std::string_view kmer, std::string_view mask) {
    bool padding = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != kWildcard) {
            if (kmer[i] != mask[i]) return false;
            continue;
        }
        if (kmer[i] == kSeparator) {
            padding = true;
        } else if (padding || kmer[i] == kTerminator) {
            return false;
        }
    }
    return true;
}

struct SearchOptions {
    enum class Strategy {
        Auto,            ///< pick the cheaper of the two per super-pattern
        CheckLastChar,   ///< core first, then verify the tail of each row
        TailFirst,       ///< start the backward search from all tail-compatible codes
    };
    Strategy strategy = Strategy::Auto;
    unsigned threads = 1;
};

class Searcher {
public:
    explicit Searcher(IndexReader& reader, SearchOptions opts = {}) : r_(reader), opts_(opts) {
        const auto& codes = r_.index().usedCodes;
        decoded_.reserve(codes.size());
        for (Code c : codes) decoded_.push_back(r_.alphabet().decode(c));
    }

    IndexReader& reader() noexcept { return r_; }

    /// Rows whose suffixes start with `core`.
    RowRange backwardSearch(std::span<const Code> core) {
        if (core.empty()) throw DomainError("backward search needs a non-empty core");
        const Code last = core.back();
        RowRange range{r_.lessThan(last), r_.lessThan(last) + r_.total(last)};
        for (std::size_t i = core.size() - 1; i-- > 0 && !range.empty();) range = step(range, core[i]);
        if (range.empty()) return {};
        return range;
    }

    /// One backward step from `rows` restricted to predecessors matching the head mask.
    RowSet refineByHeadMask(const RowSet& rows, std::string_view mask) {
        return stepAll(rows, compatibleCodes(mask, false));
    }

    RowSet refineByHeadMask(RowRange range, std::string_view mask) {
        return refineByHeadMask(RowSet{range}, mask);
    }

    /// Text position of `row` when the super-character `length - 1` places
    /// after it matches the tail mask.
    std::optional<std::uint64_t> checkLastChar(std::uint64_t row, std::size_t length, std::string_view tailMask) {
        const std::uint64_t pos = r_.locateRow(row);
        const std::uint64_t tail = pos + length - 1;
        if (tail >= r_.size()) return std::nullopt;
        const Code c = r_.extractSuperChars(tail, 1)[0];
        if (!tailMatches(r_.alphabet().decode(c), tailMask)) return std::nullopt;
        return pos;
    }

    std::uint64_t count(std::string_view pattern) {
        std::uint64_t total = 0;
        forEachSuperPattern(pattern, [&](const SuperPattern& sp, Lifted& lifted) {
            return countOne(sp, lifted);
        }, [&](std::uint64_t v) { total += v; });
        return total;
    }

    std::vector<MatchPosition> locate(std::string_view pattern) {
        std::vector<std::uint64_t> global;
        const std::string p = normalize(pattern);
        forEachSuperPatternPositions(p, global);
        std::vector<MatchPosition> out;
        out.reserve(global.size());
        const auto& h = r_.header();
        for (std::uint64_t g : global) {
            out.push_back(toMatch(g, p.size()));
            if (out.back().offset + p.size() > h.originalLengths[out.back().itemIndex]) {
                throw DecodeError("match runs past the end of its item (corrupted index)");
            }
        }
        std::sort(out.begin(), out.end());
        if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
            throw DecodeError("duplicate match position (corrupted index)");
        }
        return out;
    }

    /// Bases [start, start + length) of item `item`.
    std::string extract(std::uint64_t item, std::uint64_t start, std::uint64_t length) {
        const auto& h = r_.header();
        if (item >= h.itemCount()) {
            throw DomainError("item " + std::to_string(item) + " out of range (collection has " +
                              std::to_string(h.itemCount()) + " items)");
        }
        const std::uint64_t len = h.originalLengths[item];
        if (start > len || length > len - start) {
            throw DomainError("range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                              ") exceeds item length " + std::to_string(len));
        }
        if (length == 0) return {};
        const unsigned k = h.k;
        const std::uint64_t first = start / k, last = (start + length - 1) / k;
        const auto codes = r_.extractSuperChars(r_.itemStart(item) + first, last - first + 1);
        std::string s;
        s.reserve(codes.size() * k);
        for (Code c : codes) s += r_.alphabet().decode(c);
        return s.substr(start - first * k, length);
    }

private:
    struct Lifted {
        bool possible = true;
        std::vector<Code> core;
    };

    static std::string normalize(std::string_view pattern) {
        std::string p(pattern);
        for (auto& c : p) c = toUpperAscii(c);
        return p;
    }

    Lifted lift(const SuperPattern& sp) const {
        Lifted l;
        for (const auto& kmer : sp.core) {
            const std::int64_t rank = r_.alphabet().rankOf(kmer);
            if (rank < 0 || kmer.find_first_of("$&") != std::string::npos) {
                l.possible = false;
                return l;
            }
            l.core.push_back(r_.alphabet().skInverse()[static_cast<std::size_t>(rank)]);
        }
        return l;
    }

    /// Used codes matching a mask, ascending.
    std::vector<Code> compatibleCodes(std::string_view mask, bool tail) const {
        std::vector<Code> out;
        const auto& codes = r_.index().usedCodes;
        for (std::size_t u = 0; u < codes.size(); ++u) {
            if (tail ? tailMatches(decoded_[u], mask) : headMatches(decoded_[u], mask)) out.push_back(codes[u]);
        }
        return out;
    }

    RowRange step(RowRange range, Code c) {
        const std::uint64_t base = r_.lessThan(c);
        return {base + r_.occ(c, range.begin), base + r_.occ(c, range.end)};
    }

    RowSet step(const RowSet& rows, Code c) {
        RowSet out;
        for (const auto& range : rows) {
            const auto next = step(range, c);
            if (!next.empty()) out.push_back(next);
        }
        return out;
    }

    RowSet stepAll(const RowSet& rows, const std::vector<Code>& codes) {
        RowSet out;
        for (Code c : codes) {
            for (const auto& range : rows) {
                const auto next = step(range, c);
                if (!next.empty()) out.push_back(next);
            }
        }
        std::sort(out.begin(), out.end(), [](const RowRange& a, const RowRange& b) { return a.begin < b.begin; });
        return out;
    }

    /// Adjacent code ranges of the given codes, merged.
    RowSet rangesOf(const std::vector<Code>& codes) {
        RowSet out;
        for (Code c : codes) {
            const RowRange r{r_.lessThan(c), r_.lessThan(c) + r_.total(c)};
            if (r.empty()) continue;
            if (!out.empty() && out.back().end == r.begin) {
                out.back().end = r.end;
            } else {
                out.push_back(r);
            }
        }
        return out;
    }

    RowSet runCore(RowSet rows, const std::vector<Code>& core) {
        for (std::size_t i = core.size(); i-- > 0 && !rows.empty();) rows = step(rows, core[i]);
        return rows;
    }

    bool useTailFirst(const SuperPattern& sp, const RowSet& coreRows, std::size_t tailRanges) const {
        switch (opts_.strategy) {
            case SearchOptions::Strategy::TailFirst: return true;
            case SearchOptions::Strategy::CheckLastChar: return sp.core.empty();
            case SearchOptions::Strategy::Auto: break;
        }
        if (sp.core.empty()) return true;
        // LF steps for locating and verifying each candidate against occ
        // calls for the widened first steps.
        const std::uint64_t verify = rowCount(coreRows) * r_.header().stride;
        return 2 * (tailRanges + sp.core.size()) <= verify;
    }

    /// Rows of the matrix whose suffix starts with a full occurrence of `sp`.
    /// When verification by CheckLastChar was chosen, `verified` receives the
    /// text positions directly and the returned set is empty.
    RowSet matchRows(const SuperPattern& sp, const Lifted& lifted, std::vector<std::uint64_t>* verified,
                     bool countOnly, std::uint64_t* counted) {
        RowSet coreRows;
        if (!sp.core.empty()) {
            const auto range = backwardSearch(lifted.core);
            if (range.empty()) return {};
            coreRows = {range};
            if (sp.headMask) coreRows = refineByHeadMask(coreRows, *sp.headMask);
            if (!sp.tailMask || coreRows.empty()) return coreRows;
        }
        const auto tailCodes = compatibleCodes(*sp.tailMask, true);
        RowSet tailRows = rangesOf(tailCodes);
        if (useTailFirst(sp, coreRows, tailRows.size())) {
            RowSet rows = runCore(std::move(tailRows), lifted.core);
            if (sp.headMask && !rows.empty()) rows = refineByHeadMask(rows, *sp.headMask);
            return rows;
        }
        for (const auto& range : coreRows) {
            for (std::uint64_t row = range.begin; row < range.end; ++row) {
                if (auto pos = checkLastChar(row, sp.length(), *sp.tailMask)) {
                    if (countOnly) {
                        ++*counted;
                    } else {
                        verified->push_back(*pos);
                    }
                }
            }
        }
        return {};
    }

    std::uint64_t countOne(const SuperPattern& sp, Lifted& lifted) {
        if (!lifted.possible) return 0;
        std::uint64_t counted = 0;
        const auto rows = matchRows(sp, lifted, nullptr, true, &counted);
        return counted + rowCount(rows);
    }

    void positionsOne(const SuperPattern& sp, Lifted& lifted, std::vector<std::uint64_t>& out) {
        if (!lifted.possible) return;
        std::vector<std::uint64_t> pos;
        const auto rows = matchRows(sp, lifted, &pos, false, nullptr);
        for (const auto& range : rows) {
            for (std::uint64_t row = range.begin; row < range.end; ++row) pos.push_back(r_.locateRow(row));
        }
        const unsigned k = r_.header().k;
        for (std::uint64_t p : pos) out.push_back(p * k + sp.displacement);
    }

    bool patternPossible(std::string_view p) const {
        for (char c : p) {
            if (isSpecial(c) || !r_.alphabet().base().contains(c)) return false;
        }
        return true;
    }

    template <typename One, typename Sink>
    void forEachSuperPattern(std::string_view pattern, One&& one, Sink&& sink) {
        const std::string p = normalize(pattern);
        const auto sps = computeSuperPatterns(p, r_.header().k);
        if (!patternPossible(p)) return;
        std::vector<std::uint64_t> results(sps.size(), 0);
        const unsigned workers = std::max(1u, std::min<unsigned>(opts_.threads, static_cast<unsigned>(sps.size())));
        runWorkers(workers, [&](unsigned w) {
            for (std::size_t i = w; i < sps.size(); i += workers) {
                Lifted lifted = lift(sps[i]);
                results[i] = one(sps[i], lifted);
            }
        });
        for (auto v : results) sink(v);
    }

    void forEachSuperPatternPositions(const std::string& p, std::vector<std::uint64_t>& global) {
        const auto sps = computeSuperPatterns(p, r_.header().k);
        if (!patternPossible(p)) return;
        std::vector<std::vector<std::uint64_t>> results(sps.size());
        const unsigned workers = std::max(1u, std::min<unsigned>(opts_.threads, static_cast<unsigned>(sps.size())));
        runWorkers(workers, [&](unsigned w) {
            for (std::size_t i = w; i < sps.size(); i += workers) {
                Lifted lifted = lift(sps[i]);
                positionsOne(sps[i], lifted, results[i]);
            }
        });
        for (auto& v : results) global.insert(global.end(), v.begin(), v.end());
    }

    /// Global base coordinate (super-character position * k + d) to item and offset.
    MatchPosition toMatch(std::uint64_t global, std::size_t) const {
        const unsigned k = r_.header().k;
        const std::uint64_t pos = global / k;
        const auto& h = r_.header();
        std::uint64_t lo = 0, hi = h.itemCount();
        while (hi - lo > 1) {
            const std::uint64_t mid = (lo + hi) / 2;
            if (r_.itemStart(mid) <= pos) lo = mid; else hi = mid;
        }
        return {lo, (pos - r_.itemStart(lo)) * k + global % k};
    }

    IndexReader& r_;
    SearchOptions opts_;
    std::vector<std::string> decoded_;
};

}  // namespace encfm
