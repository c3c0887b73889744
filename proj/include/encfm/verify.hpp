#pragma once

// End-to-end check of an index against the FASTA it was built from: full
// reconstruction of L and the text, then random queries compared with a
// plain substring scan.

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "encfm/block_store.hpp"
#include "encfm/error.hpp"
#include "encfm/fasta.hpp"
#include "encfm/search.hpp"

namespace encfm {

/// All (item, offset) occurrences of an uppercase pattern, overlaps included.
inline std::vector<MatchPosition> scanCollection(const SequenceCollection& c, std::string_view pattern) {
    std::vector<MatchPosition> out;
    if (pattern.empty()) return out;
    for (std::size_t i = 0; i < c.records.size(); ++i) {
        const std::string& s = c.records[i].bases;
        for (auto p = s.find(pattern); p != std::string::npos; p = s.find(pattern, p + 1)) out.push_back({i, p});
    }
    return out;
}

struct VerifyOptions {
    std::uint64_t trials = 100;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::size_t maxPatternLength = 64;
};

struct VerifyReport {
    bool ok = true;
    bool reconstructionOk = false;
    std::uint64_t trialsRun = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> failures;  ///< first few, one line each

    void fail(std::string why) {
        ok = false;
        if (failures.size() < 10) failures.push_back(std::move(why));
    }
};

namespace detail {

/// Rebuilds the text from the decoded last column and checks it, the marked
/// rows and the descriptions against the original collection.
inline void checkReconstruction(IndexReader& reader, const SequenceCollection& fasta, unsigned threads,
                                VerifyReport& rep) {
    const auto& h = reader.header();
    if (h.itemCount() != fasta.size()) {
        rep.fail("index has " + std::to_string(h.itemCount()) + " items, FASTA has " + std::to_string(fasta.size()));
        return;
    }
    for (std::size_t i = 0; i < fasta.size(); ++i) {
        if (h.originalLengths[i] != fasta.records[i].bases.size()) {
            rep.fail("item " + std::to_string(i) + " length differs from the FASTA record");
            return;
        }
    }
    const auto& idx = reader.index();
    const std::uint64_t n = reader.size();
    std::vector<Code> L = reader.decodeAll(threads);

    // LF without per-symbol tables: L becomes used-code indices, plus the rank
    // of each row among equal symbols.
    const std::size_t U = idx.usedCodes.size();
    std::vector<std::uint64_t> C(U + 1, 0), seen(U, 0);
    for (std::size_t u = 0; u < U; ++u) C[u + 1] = C[u] + idx.totals[u];
    std::vector<std::uint32_t> rank(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto u = reader.usedIndex(L[i]);
        if (!u) throw DecodeError("decoded symbol missing from the code table");
        L[i] = *u;
        rank[i] = static_cast<std::uint32_t>(seen[*u]++);
    }
    for (std::size_t u = 0; u < U; ++u) {
        if (seen[u] != idx.totals[u]) throw DecodeError("symbol totals disagree with the decoded column");
    }

    std::vector<Code> text(n);
    const auto& marks = idx.marked.rows;
    std::uint64_t marksHit = 0;
    std::uint64_t row = h.primaryRow, pos = 0;
    for (std::uint64_t step = 0; step < n; ++step) {
        const auto it = std::lower_bound(marks.begin(), marks.end(), row);
        if (it != marks.end() && *it == row) {
            if (idx.marked.positions[it - marks.begin()] != pos) {
                rep.fail("marked row " + std::to_string(row) + " records the wrong text position");
                return;
            }
            ++marksHit;
        }
        pos = (pos + n - 1) % n;
        const std::uint32_t u = L[row];
        text[pos] = idx.usedCodes[u];
        row = C[u] + rank[row];
    }
    if (row != h.primaryRow) {
        rep.fail("LF walk does not return to the primary row");
        return;
    }
    if (marksHit != marks.size()) rep.fail("some marked rows are never reached");

    const auto& alpha = reader.alphabet();
    if (text[n - 1] != 0) rep.fail("text does not end with the terminator");
    for (std::size_t i = 0; i < fasta.size(); ++i) {
        const std::uint64_t start = reader.itemStart(i), padded = h.paddedLengths[i];
        std::string bases;
        bases.reserve(padded * h.k);
        for (std::uint64_t j = 0; j < padded; ++j) bases += alpha.decode(text[start + j]);
        const std::string& want = fasta.records[i].bases;
        if (bases.compare(0, want.size(), want) != 0 ||
            bases.find_first_not_of(kSeparator, want.size()) != std::string::npos) {
            rep.fail("item " + std::to_string(i) + " does not reconstruct to its FASTA record");
            return;
        }
        if (text[start + padded] != alpha.separatorCode() && start + padded != n - 1) {
            rep.fail("item " + std::to_string(i) + " is not followed by a separator");
            return;
        }
        if (reader.description(i) != fasta.records[i].description) {
            rep.fail("description of item " + std::to_string(i) + " differs");
            return;
        }
    }
    rep.reconstructionOk = rep.ok;
}

inline std::string describeHits(const std::vector<MatchPosition>& hits) {
    std::ostringstream o;
    o << hits.size() << " hits";
    if (!hits.empty()) o << ", first " << hits.front().itemIndex << ":" << hits.front().offset;
    return o.str();
}

}  // namespace detail

inline VerifyReport verifyIndex(const EncryptedIndex& index, const IndexKey& key, const SequenceCollection& fasta,
                                const VerifyOptions& opts = {}) {
    VerifyReport rep;
    rep.seed = opts.seed;
    IndexReader reader(index, key);
    try {
        detail::checkReconstruction(reader, fasta, opts.threads, rep);
    } catch (const DecodeError& e) {
        rep.fail(std::string("decryption failed or corrupt index: ") + e.what());
        return rep;
    }
    if (!rep.ok) return rep;

    const unsigned k = reader.header().k;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < fasta.size(); ++i) {
        if (fasta.records[i].bases.size() >= k) usable.push_back(i);
    }
    std::string symbols = reader.header().baseSymbols.substr(2);
    Searcher searcher(reader, {SearchOptions::Strategy::Auto, opts.threads});
    std::mt19937_64 rng(opts.seed);
    for (std::uint64_t t = 0; t < opts.trials; ++t, ++rep.trialsRun) {
        std::string pattern;
        if (!usable.empty() && rng() % 4 != 0) {
            const auto& s = fasta.records[usable[rng() % usable.size()]].bases;
            const std::size_t maxLen = std::min<std::size_t>(s.size(), opts.maxPatternLength);
            const std::size_t len = k + rng() % (maxLen - k + 1);
            pattern = s.substr(rng() % (s.size() - len + 1), len);
        } else {
            const std::size_t len = k + rng() % (std::max<std::size_t>(opts.maxPatternLength, k) - k + 1);
            for (std::size_t j = 0; j < len; ++j) pattern.push_back(symbols[rng() % symbols.size()]);
        }
        const std::string where = "trial " + std::to_string(t) + " (seed " + std::to_string(opts.seed) + "), pattern " +
                                  pattern + ": ";
        try {
            const auto want = scanCollection(fasta, pattern);
            const auto got = searcher.locate(pattern);
            if (got != want) {
                rep.fail(where + "locate gave " + detail::describeHits(got) + ", scan gave " + detail::describeHits(want));
                continue;
            }
            const auto cnt = searcher.count(pattern);
            if (cnt != want.size()) {
                rep.fail(where + "count gave " + std::to_string(cnt) + ", scan gave " + std::to_string(want.size()));
                continue;
            }
            if (!usable.empty()) {
                const std::size_t item = usable[rng() % usable.size()];
                const auto& s = fasta.records[item].bases;
                const std::size_t start = rng() % s.size();
                const std::size_t len = rng() % (std::min<std::size_t>(s.size() - start, 200) + 1);
                if (searcher.extract(item, start, len) != s.substr(start, len)) {
                    rep.fail(where + "extract of item " + std::to_string(item) + " differs");
                }
            }
        } catch (const DecodeError& e) {
            rep.fail(where + "decryption failed or corrupt index: " + e.what());
        }
    }
    return rep;
}

}  // namespace encfm
