#include <gtest/gtest.h>

#include <random>
#include <set>

#include "encfm/search.hpp"
#include "test_support.hpp"

using namespace encfm;

namespace {

using Strategy = SearchOptions::Strategy;

struct Toy {
    SequenceCollection collection;
    IndexKey key;
    ExtendedText text;
    std::vector<std::uint64_t> sa;
    EncryptedIndex index;
};

Toy makeToy(const SequenceCollection& c, std::uint64_t seed, unsigned k, std::uint32_t bs, double sampleRate = 10) {
    Toy t;
    t.collection = c;
    t.key = oracle::keyFromSeed(seed);
    const auto alpha = scrambleExtendedAlphabet(buildBaseAlphabet(c), k, t.key);
    t.text = encodeCollection(c, alpha);
    const auto b = bwt::computeBwt(t.text, alpha.eac());
    t.sa.assign(b.suffixPositions.begin(), b.suffixPositions.end());
    std::vector<std::string> desc;
    for (const auto& r : c.records) desc.push_back(r.description);
    t.index = partitionAndBuild(b, t.text, alpha, t.key, desc, bs, sampleRate);
    return t;
}

std::vector<MatchPosition> naive(const SequenceCollection& c, std::string_view p) {
    std::vector<MatchPosition> out;
    for (const auto& [i, o] : oracle::naiveScan(c, p)) out.push_back({i, o});
    return out;
}

/// A random pattern: mostly substrings of an item, some random strings.
std::string randomPattern(std::mt19937_64& rng, const SequenceCollection& c, std::size_t len) {
    const auto& s = c.records[rng() % c.size()].bases;
    if (rng() % 5 == 0 || s.size() < len) return oracle::randomBases(rng, len);
    const std::size_t at = rng() % (s.size() - len + 1);
    return s.substr(at, len);
}

}  // namespace

TEST(SuperPatterns, NineBasesAtK4) {
    const auto sps = computeSuperPatterns("ACGAACTGA", 4);
    ASSERT_EQ(sps.size(), 4u);
    EXPECT_FALSE(sps[0].headMask);
    EXPECT_EQ(sps[0].core, (std::vector<std::string>{"ACGA", "ACTG"}));
    EXPECT_EQ(sps[0].tailMask, "A???");
    EXPECT_EQ(sps[1].headMask, "?ACG");
    EXPECT_EQ(sps[1].core, (std::vector<std::string>{"AACT"}));
    EXPECT_EQ(sps[1].tailMask, "GA??");
    EXPECT_EQ(sps[2].headMask, "??AC");
    EXPECT_EQ(sps[2].core, (std::vector<std::string>{"GAAC"}));
    EXPECT_EQ(sps[2].tailMask, "TGA?");
    EXPECT_EQ(sps[3].headMask, "???A");
    EXPECT_EQ(sps[3].core, (std::vector<std::string>{"CGAA", "CTGA"}));
    EXPECT_FALSE(sps[3].tailMask);
}

TEST(SuperPatterns, WildcardExpansionCount) {
    // Sigma = {$, &, A, C, G, N, T}: each '?' stands for 5 symbols.
    std::uint64_t total = 0;
    for (const auto& sp : computeSuperPatterns("ACGAACTGA", 4)) {
        std::string all = sp.headMask.value_or("");
        for (const auto& c : sp.core) all += c;
        all += sp.tailMask.value_or("");
        std::uint64_t n = 1;
        for (char ch : all) if (ch == '?') n *= 5;
        total += n;
        std::string stripped;
        for (char ch : all) if (ch != '?') stripped += ch;
        EXPECT_EQ(stripped, "ACGAACTGA");
        EXPECT_EQ(all.size() % 4, 0u);
    }
    EXPECT_EQ(total, 500u);
}

TEST(SuperPatterns, ExactPhaseAndShortPatterns) {
    const auto sps = computeSuperPatterns("ACGT", 4);
    EXPECT_EQ(sps[0].core, (std::vector<std::string>{"ACGT"}));
    EXPECT_FALSE(sps[0].headMask);
    EXPECT_FALSE(sps[0].tailMask);
    // Head and tail only, no core.
    EXPECT_TRUE(sps[1].core.empty());
    EXPECT_EQ(sps[1].headMask, "?ACG");
    EXPECT_EQ(sps[1].tailMask, "T???");
    EXPECT_THROW(computeSuperPatterns("ACG", 4), UnsupportedPatternError);
    EXPECT_THROW(computeSuperPatterns("", 1), UnsupportedPatternError);
}

TEST(Masks, HeadMask) {
    EXPECT_FALSE(headMatches("TCAA", "?ACG"));
    EXPECT_TRUE(headMatches("CACG", "?ACG"));
    EXPECT_FALSE(headMatches("CATT", "?ACG"));
    EXPECT_FALSE(headMatches("&ACG", "?ACG"));
    EXPECT_FALSE(headMatches("$ACG", "?ACG"));
    EXPECT_TRUE(headMatches("ACGT", "ACGT"));
}

TEST(Masks, TailMask) {
    EXPECT_TRUE(tailMatches("AGGT", "A???"));
    EXPECT_FALSE(tailMatches("CGGT", "A???"));
    EXPECT_TRUE(tailMatches("AG&&", "A???"));
    EXPECT_TRUE(tailMatches("A&&&", "A???"));
    EXPECT_FALSE(tailMatches("A&G&", "A???"));
    EXPECT_FALSE(tailMatches("A$$$", "A???"));
    EXPECT_FALSE(tailMatches("AG$$", "A???"));
}

TEST(BackwardSearch, MatchesSortedRotations) {
    std::mt19937_64 rng(3);
    const auto c = oracle::randomCollection(rng, 6, 600);
    const auto t = makeToy(c, 3, 2, 64);
    IndexReader reader(t.index, t.key);
    Searcher s(reader);
    const auto& text = t.text.superChars;
    const std::size_t n = text.size();
    for (int q = 0; q < 300; ++q) {
        const std::size_t len = 1 + rng() % 6;
        std::vector<Code> core(len);
        if (q % 4 == 0) {
            for (auto& x : core) x = static_cast<Code>(rng() % reader.alphabet().eac());
        } else {
            const std::size_t at = rng() % (n - len);
            std::copy(text.begin() + at, text.begin() + at + len, core.begin());
        }
        std::uint64_t lo = n, hi = 0;
        for (std::uint64_t row = 0; row < n; ++row) {
            bool match = true;
            for (std::size_t j = 0; j < len && match; ++j) match = text[(t.sa[row] + j) % n] == core[j];
            if (match) {
                lo = std::min(lo, row);
                hi = row + 1;
            }
        }
        const auto range = s.backwardSearch(core);
        if (lo == n) {
            EXPECT_TRUE(range.empty());
        } else {
            EXPECT_EQ(range, (RowRange{lo, hi}));
        }
    }
    // Single code: range size is its frequency.
    const Code first = text[0];
    EXPECT_EQ(s.backwardSearch(std::vector<Code>{first}).size(),
              static_cast<std::uint64_t>(std::count(text.begin(), text.end(), first)));
}

TEST(RefineByHeadMask, MatchesBruteForce) {
    std::mt19937_64 rng(4);
    const auto c = oracle::randomCollection(rng, 6, 800);
    const auto t = makeToy(c, 4, 3, 64);
    IndexReader reader(t.index, t.key);
    Searcher s(reader);
    const auto& text = t.text.superChars;
    const std::size_t n = text.size();
    std::vector<std::uint64_t> rowOf(n);
    for (std::uint64_t r = 0; r < n; ++r) rowOf[t.sa[r]] = r;
    for (int q = 0; q < 200; ++q) {
        const std::size_t at = 1 + rng() % (n - 3);
        const std::vector<Code> core{text[at], text[at + 1]};
        const auto range = s.backwardSearch(core);
        std::string mask = reader.alphabet().decode(text[at - 1]);
        for (std::size_t j = 0; j < mask.size(); ++j) if (rng() % 2) mask[j] = '?';
        const auto rows = s.refineByHeadMask(range, mask);
        std::set<std::uint64_t> got, expected;
        for (const auto& r : rows) for (auto x = r.begin; x < r.end; ++x) got.insert(x);
        for (auto row = range.begin; row < range.end; ++row) {
            const std::uint64_t prev = (t.sa[row] + n - 1) % n;
            if (headMatches(reader.alphabet().decode(text[prev]), mask)) expected.insert(rowOf[prev]);
        }
        EXPECT_EQ(got, expected);
        EXPECT_TRUE(expected.count(rowOf[at - 1]));
    }
    // No wildcard: an ordinary backward step.
    const std::vector<Code> core{text[5], text[6]};
    const auto range = s.backwardSearch(core);
    const auto rows = s.refineByHeadMask(range, reader.alphabet().decode(text[4]));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0], s.backwardSearch(std::vector<Code>{text[4], text[5], text[6]}));
}

TEST(CheckLastChar, MatchesBruteForce) {
    std::mt19937_64 rng(5);
    const auto c = oracle::randomCollection(rng, 5, 700);
    const auto t = makeToy(c, 5, 2, 64, 5);
    IndexReader reader(t.index, t.key);
    Searcher s(reader);
    const auto& text = t.text.superChars;
    const std::size_t n = text.size();
    for (int q = 0; q < 100; ++q) {
        const std::size_t at = rng() % (n - 4);
        const std::vector<Code> core{text[at], text[at + 1]};
        std::string tail = reader.alphabet().decode(text[at + 2]);
        tail[1] = '?';
        const auto range = s.backwardSearch(core);
        for (auto row = range.begin; row < range.end; ++row) {
            const std::uint64_t pos = t.sa[row];
            const bool expected = pos + 2 < n && tailMatches(reader.alphabet().decode(text[pos + 2]), tail);
            const auto got = s.checkLastChar(row, 3, tail);
            EXPECT_EQ(got.has_value(), expected);
            if (got) EXPECT_EQ(*got, pos);
        }
    }
}

TEST(Search, OracleEquivalenceAcrossStrategies) {
    std::mt19937_64 rng(6);
    for (int corpus = 0; corpus < 6; ++corpus) {
        const unsigned k = 2 + corpus % 3;
        const std::uint32_t bs = corpus % 2 ? 64 : 256;
        const auto c = oracle::randomCollection(rng, 2 + rng() % 10, 3000, "ACGT", 0.01);
        const auto t = makeToy(c, rng(), k, bs, 1 + rng() % 20);
        IndexReader reader(t.index, t.key, 64);
        Searcher autoS(reader), tail(reader, {Strategy::TailFirst, 1}), check(reader, {Strategy::CheckLastChar, 2});
        for (int q = 0; q < 60; ++q) {
            const std::size_t len = std::vector<std::size_t>{k, k + 1, 2 * k - 1, 15, 20, 50}[q % 6];
            const std::string p = randomPattern(rng, c, len);
            const auto expected = naive(c, p);
            ASSERT_EQ(autoS.locate(p), expected) << p << " k=" << k;
            ASSERT_EQ(tail.locate(p), expected) << p;
            ASSERT_EQ(check.locate(p), expected) << p;
            ASSERT_EQ(autoS.count(p), expected.size()) << p;
            ASSERT_EQ(tail.count(p), expected.size()) << p;
            ASSERT_EQ(check.count(p), expected.size()) << p;
        }
    }
}

TEST(Search, ItemEdgesAndOverlaps) {
    SequenceCollection c{{{"a", "AAAAAAAAAAAAAAAAAAAAAAACGT"},
                          {"b", "CGTAAAAA"},
                          {"c", "ACGTACGTACGTACG"},
                          {"d", "TTTTTTTTTTNNNNNRYAAA"},
                          {"e", "GA"}}};
    for (unsigned k : {2u, 3u, 4u}) {
        const auto t = makeToy(c, 9, k, 64, 20);
        IndexReader reader(t.index, t.key);
        Searcher s(reader);
        for (std::string p : {"AAAA", "AAAAA", "ACGT", "CGTA", "CGTAC", "ACGTACG", "ACG", "AAACGT", "TTTTT",
                              "NNNNN", "NRYA", "RYAAA", "GA", "AAAAAAAAAAAAAAAAAAAAAAACGT", "GTAAAAA", "TAAA",
                              "AAAT", "CGTACGTA"}) {
            if (p.size() < k) continue;
            EXPECT_EQ(s.locate(p), naive(c, p)) << p << " k=" << k;
            EXPECT_EQ(s.count(p), naive(c, p).size()) << p << " k=" << k;
        }
        // Occurrences spanning an item boundary are never reported.
        EXPECT_EQ(s.count("ACGTCGT"), 0u);
        // Absent symbols and lower case.
        EXPECT_EQ(s.count("ACGU"), 0u);
        EXPECT_EQ(s.count("AC$T"), 0u);
        EXPECT_EQ(s.count("AC&T"), 0u);
        EXPECT_EQ(s.count("acgt"), s.count("ACGT"));
        EXPECT_THROW(s.count(std::string(k - 1, 'A')), UnsupportedPatternError);
    }
}

TEST(Search, PlantedOccurrenceEveryPhase) {
    std::mt19937_64 rng(8);
    const std::string p = "GATTACAGATTACA";
    for (unsigned k : {2u, 3u, 4u, 5u}) {
        for (unsigned offset = 17; offset < 17 + k; ++offset) {
            std::string s = oracle::randomBases(rng, 200, "C");
            s.replace(offset, p.size(), p);
            SequenceCollection c{{{"x", s}}};
            const auto t = makeToy(c, offset, k, 64);
            IndexReader reader(t.index, t.key);
            Searcher s2(reader);
            EXPECT_EQ(s2.locate(p), (std::vector<MatchPosition>{{0, offset}}));
        }
    }
}

TEST(Search, WholeItemCountsOnce) {
    SequenceCollection c{{{"x", "ACGTTGCAACGTAGGT"}}};
    const auto t = makeToy(c, 1, 4, 64);
    IndexReader reader(t.index, t.key);
    Searcher s(reader);
    EXPECT_EQ(s.count(c.records[0].bases), 1u);
    EXPECT_EQ(s.count("GGGGG"), 0u);
    EXPECT_TRUE(s.locate("GGGGG").empty());
}

TEST(Extract, RecordsAndRanges) {
    std::mt19937_64 rng(9);
    const auto c = oracle::randomCollection(rng, 7, 900, "ACGT", 0.05);
    for (unsigned k : {1u, 3u, 4u}) {
        const auto t = makeToy(c, 10 + k, k, 64, 4);
        IndexReader reader(t.index, t.key);
        Searcher s(reader);
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto& bases = c.records[i].bases;
            EXPECT_EQ(s.extract(i, 0, bases.size()), bases);
            for (int q = 0; q < 20; ++q) {
                const std::size_t start = rng() % bases.size();
                const std::size_t len = rng() % (bases.size() - start + 1);
                EXPECT_EQ(s.extract(i, start, len), bases.substr(start, len));
            }
            EXPECT_EQ(s.extract(i, bases.size(), 0), "");
            EXPECT_THROW(s.extract(i, bases.size(), 1), DomainError);
        }
        EXPECT_THROW(s.extract(c.size(), 0, 0), DomainError);
        // Locate and extract agree.
        const std::string p = c.records[2].bases.substr(5, 12);
        for (const auto& m : s.locate(p)) EXPECT_EQ(s.extract(m.itemIndex, m.offset, p.size()), p);
    }
}

TEST(Search, ParallelSuperPatternsAgree) {
    std::mt19937_64 rng(11);
    const auto c = oracle::randomCollection(rng, 8, 2000);
    const auto t = makeToy(c, 11, 4, 256);
    IndexReader reader(t.index, t.key);
    Searcher one(reader), four(reader, {Strategy::Auto, 4});
    for (int q = 0; q < 50; ++q) {
        const std::string p = randomPattern(rng, c, 20);
        EXPECT_EQ(four.locate(p), one.locate(p));
        EXPECT_EQ(four.count(p), one.count(p));
    }
}

TEST(Search, DecryptCountDoesNotRegress) {
    std::mt19937_64 rng(12);
    const auto c = oracle::randomCollection(rng, 16, 5000);
    const auto key = oracle::keyFromSeed(12);
    const auto idx = buildIndex(c, key, {4, 256, 2, 1, 0});
    IndexReader reader(idx, key);
    Searcher s(reader);
    std::uint64_t total = 0;
    for (int q = 0; q < 20; ++q) {
        const std::string* b = &c.records[q % 16].bases;
        for (int j = 0; b->size() < 200; ++j) b = &c.records[(q + j) % 16].bases;
        const std::string p = b->substr((q * 131) % (b->size() - 50), 50);
        reader.resetCacheStats(true);
        EXPECT_EQ(s.count(p), naive(c, p).size());
        total += reader.cacheStats().decrypts;
    }
    // Frozen from the first verified run.
    EXPECT_LE(total, 523u);
}
