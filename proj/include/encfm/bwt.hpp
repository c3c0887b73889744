#pragma once

// Burrows-Wheeler transform of a scrambled extended text.
//
// The rotation set is partitioned by first super-character into contiguous
// code ranges, ranges are handed to workers in contiguous slices, and each
// range is sorted by multikey quicksort. Characters are compared run by run:
// a maximal run c^l followed by x is a single key, ordered first by c, then
// runs followed by a smaller symbol before runs followed by a larger one,
// then by run length (ascending for the former, descending for the latter).
// Groups still tied at the depth cap are finished by rank doubling over the
// merged order.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "encfm/alphabet.hpp"
#include "encfm/error.hpp"
#include "encfm/parallel.hpp"

namespace encfm::bwt {

using TextPos = std::uint32_t;
/// Run lengths must fit the 31-bit field of a run key.
inline constexpr std::uint64_t kMaxTextLength = 0x7fffffffU;

struct RotationRange {
    std::uint64_t firstCharacter = 0;  // inclusive
    std::uint64_t lastCharacter = 0;   // exclusive
    std::vector<TextPos> rotations;
};

struct BwtResult {
    std::vector<Code> lastColumn;
    std::vector<TextPos> suffixPositions;
    std::uint64_t primaryRow = 0;

    friend bool operator==(const BwtResult&, const BwtResult&) = default;
};

struct BwtOptions {
    unsigned threads = 1;
    unsigned ranges = 0;              ///< 0 selects 16 * threads
    bool statisticalSplit = true;     ///< re-split ranges holding > 4 n/nr rotations
    std::uint64_t depthLimit = 64;    ///< multikey quicksort depth cap, in super-characters
};

struct BwtStats {
    std::uint64_t comparisons = 0;      ///< key loads and partition comparisons
    std::uint64_t tieGroups = 0;        ///< groups left tied at the depth cap
    std::uint64_t refinementRounds = 0;
};

/// A group of adjacent sorted rotations sharing at least `depth` leading
/// super-characters whose mutual order is still unknown.
struct TieGroup {
    std::uint64_t begin = 0, end = 0, depth = 0;
};

inline void validateText(std::span<const Code> text) {
    if (text.empty()) throw InvalidInputError("BWT input is empty");
    if (text.size() > kMaxTextLength) throw ParameterError("text exceeds 2^31-1 super-characters");
    if (text.back() != ScrambledAlphabet::terminatorCode()) {
        throw InvalidInputError("BWT input does not end with the terminator code");
    }
    if (std::count(text.begin(), text.end(), ScrambledAlphabet::terminatorCode()) != 1) {
        throw InvalidInputError("terminator code occurs more than once");
    }
}

inline BwtResult resultFromOrder(std::span<const Code> text, std::vector<TextPos> order) {
    BwtResult r;
    const std::size_t n = text.size();
    r.lastColumn.resize(n);
    for (std::size_t row = 0; row < n; ++row) {
        const TextPos p = order[row];
        r.lastColumn[row] = text[(p + n - 1) % n];
        if (p == 0) r.primaryRow = row;
    }
    r.suffixPositions = std::move(order);
    return r;
}

/// Sorts all rotations by direct cyclic comparison.
inline BwtResult naiveBwt(std::span<const Code> text) {
    validateText(text);
    const std::size_t n = text.size();
    std::vector<TextPos> order(n);
    std::iota(order.begin(), order.end(), TextPos{0});
    auto less = [&](TextPos a, TextPos b) {
        if (a == b) return false;
        for (std::size_t off = 0; off < n;) {
            const std::size_t ia = (a + off) % n, ib = (b + off) % n;
            const std::size_t span = std::min(n - ia, n - ib);
            auto [pa, pb] = std::mismatch(text.begin() + ia, text.begin() + ia + span, text.begin() + ib);
            if (pa != text.begin() + ia + span) return *pa < *pb;
            off += span;
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    return resultFromOrder(text, std::move(order));
}

/// Per-position run keys: key(q) orders suffixes by their leading run.
class RunKeys {
public:
    explicit RunKeys(std::span<const Code> text) : keys_(text.size()), runs_(text.size()) {
        if (text.size() > kMaxTextLength) throw ParameterError("text exceeds 2^31-1 super-characters");
        const std::size_t n = text.size();
        for (std::size_t q = n; q-- > 0;) {
            const bool extends = q + 1 < n && text[q + 1] == text[q];
            runs_[q] = extends ? runs_[q + 1] + 1 : 1;
            const std::size_t next = q + runs_[q];
            const bool ascending = next < n && text[next] > text[q];
            const std::uint64_t len = runs_[q];
            keys_[q] = (std::uint64_t{text[q]} << 32) | (std::uint64_t{ascending} << 31) |
                       (ascending ? (kMaxRun - len) : len);
        }
    }

    std::uint64_t key(std::size_t q) const noexcept { return keys_[q]; }
    std::uint32_t runLength(std::size_t q) const noexcept { return runs_[q]; }

    static std::uint32_t runOfKey(std::uint64_t key) noexcept {
        const std::uint32_t low = static_cast<std::uint32_t>(key) & kMaxRun;
        return (key >> 31) & 1 ? kMaxRun - low : low;
    }

private:
    static constexpr std::uint32_t kMaxRun = 0x7fffffffU;
    std::vector<std::uint64_t> keys_;
    std::vector<std::uint32_t> runs_;
};

/// Sorts `rotations` (all rotations of one range) by multikey quicksort on run
/// keys. Returns groups still tied once their shared prefix reaches
/// `depthLimit`; with an unlimited cap the result is fully sorted.
inline std::vector<TieGroup> sortRange(std::span<TextPos> rotations, const RunKeys& keys,
                                       std::uint64_t depthLimit = std::numeric_limits<std::uint64_t>::max(),
                                       BwtStats* stats = nullptr) {
    std::vector<TieGroup> ties;
    const std::size_t m = rotations.size();
    if (m < 2) return ties;

    struct Item {
        std::uint64_t key;
        TextPos pos;
    };
    std::vector<Item> items(m);
    for (std::size_t i = 0; i < m; ++i) items[i] = {0, rotations[i]};

    struct Frame {
        std::size_t lo, hi;
        std::uint64_t depth;
        bool keysLoaded;
    };
    std::vector<Frame> stack{{0, m, 0, false}};
    std::uint64_t comparisons = 0;

    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        const std::size_t size = f.hi - f.lo;
        if (size < 2) continue;
        if (f.depth >= depthLimit) {
            ties.push_back({f.lo, f.hi, f.depth});
            continue;
        }
        if (!f.keysLoaded) {
            for (std::size_t i = f.lo; i < f.hi; ++i) items[i].key = keys.key(items[i].pos + f.depth);
            comparisons += size;
        }
        if (size <= 16) {
            for (std::size_t i = f.lo + 1; i < f.hi; ++i) {
                Item v = items[i];
                std::size_t j = i;
                while (j > f.lo && items[j - 1].key > v.key) {
                    items[j] = items[j - 1];
                    --j;
                    ++comparisons;
                }
                ++comparisons;
                items[j] = v;
            }
            for (std::size_t i = f.lo; i < f.hi;) {
                std::size_t j = i + 1;
                while (j < f.hi && items[j].key == items[i].key) ++j;
                if (j - i >= 2) stack.push_back({i, j, f.depth + RunKeys::runOfKey(items[i].key), false});
                i = j;
            }
            continue;
        }
        // Tukey's ninther as pivot, then a three-way partition.
        auto med3 = [](std::uint64_t a, std::uint64_t b, std::uint64_t c) {
            return std::max(std::min(a, b), std::min(std::max(a, b), c));
        };
        auto at = [&](std::size_t i) { return items[f.lo + i].key; };
        std::uint64_t pivot;
        if (size > 40) {
            const std::size_t s8 = size / 8;
            pivot = med3(med3(at(0), at(s8), at(2 * s8)), med3(at(size / 2 - s8), at(size / 2), at(size / 2 + s8)),
                         med3(at(size - 1 - 2 * s8), at(size - 1 - s8), at(size - 1)));
        } else {
            pivot = med3(at(0), at(size / 2), at(size - 1));
        }
        std::size_t lt = f.lo, i = f.lo, gt = f.hi;
        while (i < gt) {
            const std::uint64_t k = items[i].key;
            comparisons += 1;
            if (k < pivot) {
                std::swap(items[i++], items[lt++]);
            } else if (k > pivot) {
                std::swap(items[i], items[--gt]);
            } else {
                ++i;
            }
        }
        stack.push_back({f.lo, lt, f.depth, true});
        stack.push_back({gt, f.hi, f.depth, true});
        stack.push_back({lt, gt, f.depth + RunKeys::runOfKey(pivot), false});
    }
    for (std::size_t i = 0; i < m; ++i) rotations[i] = items[i].pos;
    std::sort(ties.begin(), ties.end(), [](const TieGroup& x, const TieGroup& y) { return x.begin < y.begin; });
    if (stats) stats->comparisons += comparisons;
    return ties;
}

/// Range table: nr right-open intervals of equal width covering [0, eac).
inline std::vector<RotationRange> makeRanges(std::uint64_t eac, unsigned nr) {
    if (nr < 1 || nr > eac) throw ParameterError("range count must be in [1, |Sigma^k|]");
    const std::uint64_t width = (eac + nr - 1) / nr;
    std::vector<RotationRange> ranges;
    for (std::uint64_t first = 0; first < eac; first += width) {
        ranges.push_back({first, std::min(eac, first + width), {}});
    }
    return ranges;
}

namespace detail {

inline std::size_t rangeOf(const std::vector<RotationRange>& ranges, Code c) {
    auto it = std::upper_bound(ranges.begin(), ranges.end(), std::uint64_t{c},
                               [](std::uint64_t v, const RotationRange& r) { return v < r.firstCharacter; });
    return static_cast<std::size_t>(it - ranges.begin()) - 1;
}

}  // namespace detail

/// Places every rotation p in the range containing text[p]. Each worker scans
/// a contiguous slice of positions; per-range lists are concatenated in worker
/// order, so every range ends up in ascending position order.
inline void distributeRotations(std::span<const Code> text, std::vector<RotationRange>& ranges, unsigned nt) {
    nt = std::max(1u, nt);
    std::vector<std::vector<std::vector<TextPos>>> local(nt, std::vector<std::vector<TextPos>>(ranges.size()));
    runWorkers(nt, [&](unsigned w) {
        auto [begin, end] = evenSlice(text.size(), w, nt);
        auto& mine = local[w];
        for (std::size_t p = begin; p < end; ++p) {
            mine[detail::rangeOf(ranges, text[p])].push_back(static_cast<TextPos>(p));
        }
    });
    for (std::size_t r = 0; r < ranges.size(); ++r) {
        auto& dst = ranges[r].rotations;
        dst.clear();
        std::size_t total = 0;
        for (unsigned w = 0; w < nt; ++w) total += local[w][r].size();
        dst.reserve(total);
        for (unsigned w = 0; w < nt; ++w) {
            dst.insert(dst.end(), local[w][r].begin(), local[w][r].end());
            std::vector<TextPos>().swap(local[w][r]);
        }
    }
}

/// Re-splits every range holding more than 4 n/nr rotations at the quantiles
/// of its observed first-character frequencies, so that each piece holds about
/// n/nr rotations. Ranges remain a contiguous partition of the code space.
inline void splitHeavyRanges(std::span<const Code> text, std::vector<RotationRange>& ranges, unsigned nr) {
    const std::uint64_t n = text.size();
    const std::uint64_t target = std::max<std::uint64_t>(1, n / nr);
    std::vector<RotationRange> out;
    out.reserve(ranges.size());
    for (auto& range : ranges) {
        if (range.rotations.size() <= 4 * target) {
            out.push_back(std::move(range));
            continue;
        }
        std::vector<Code> firsts;
        firsts.reserve(range.rotations.size());
        for (TextPos p : range.rotations) firsts.push_back(text[p]);
        std::sort(firsts.begin(), firsts.end());
        // Cut points at code boundaries once the running count reaches the target.
        std::vector<std::uint64_t> cuts{range.firstCharacter};
        std::uint64_t acc = 0;
        for (std::size_t i = 0; i < firsts.size();) {
            std::size_t j = i;
            while (j < firsts.size() && firsts[j] == firsts[i]) ++j;
            acc += j - i;
            if (acc >= target && j < firsts.size()) {
                cuts.push_back(std::uint64_t{firsts[j - 1]} + 1);
                acc = 0;
            }
            i = j;
        }
        const std::size_t base = out.size();
        for (std::size_t c = 0; c < cuts.size(); ++c) {
            const std::uint64_t last = c + 1 < cuts.size() ? cuts[c + 1] : range.lastCharacter;
            out.push_back({cuts[c], last, {}});
        }
        for (TextPos p : range.rotations) {
            auto it = std::upper_bound(cuts.begin(), cuts.end(), std::uint64_t{text[p]});
            out[base + static_cast<std::size_t>(it - cuts.begin()) - 1].rotations.push_back(p);
        }
    }
    ranges = std::move(out);
}

/// Contiguous slice [begin, end) of the range array owned by one worker.
struct WorkerSlice {
    std::size_t begin = 0, end = 0;
    std::uint64_t load = 0;

    friend bool operator==(const WorkerSlice&, const WorkerSlice&) = default;
};

/// Greedy split of the range array into at most nt contiguous slices: ranges
/// are appended in order and a slice is closed once its rotation count reaches
/// ceil(total / nt). Every slice load is below ceil(total/nt) + the largest
/// range, hence at most twice the optimal maximum load.
inline std::vector<WorkerSlice> splitRanges(std::span<const std::uint64_t> sizes, unsigned nt) {
    nt = std::max(1u, nt);
    const std::uint64_t total = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0});
    const std::uint64_t target = (total + nt - 1) / nt;
    std::vector<WorkerSlice> slices;
    WorkerSlice cur{0, 0, 0};
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        cur.load += sizes[i];
        cur.end = i + 1;
        if (cur.load >= target && slices.size() + 1 < nt && cur.end < sizes.size()) {
            slices.push_back(cur);
            cur = {cur.end, cur.end, 0};
        }
    }
    if (cur.end > cur.begin || slices.empty()) slices.push_back(cur);
    return slices;
}

inline std::vector<WorkerSlice> splitRanges(const std::vector<RotationRange>& ranges, unsigned nt) {
    std::vector<std::uint64_t> sizes;
    sizes.reserve(ranges.size());
    for (const auto& r : ranges) sizes.push_back(r.rotations.size());
    return splitRanges(sizes, nt);
}

namespace detail {

/// Rank doubling over tied groups. rank[p] is the first row of the group that
/// holds suffix p; groupDepth[row] is the shared prefix length of the tied
/// group starting at row (0 for resolved rows). Each round reads a snapshot
/// and then applies all splits, so the result is independent of scheduling.
inline void refineTies(std::span<const Code> text, std::vector<TextPos>& sa, std::vector<TieGroup> ties,
                       unsigned nt, BwtStats* stats) {
    if (ties.empty()) return;
    const std::size_t n = text.size();
    std::vector<TextPos> rank(n);
    std::vector<TextPos> groupDepth(n, 0);
    for (std::size_t row = 0; row < n; ++row) rank[sa[row]] = static_cast<TextPos>(row);
    for (const auto& t : ties) {
        for (std::size_t row = t.begin; row < t.end; ++row) rank[sa[row]] = static_cast<TextPos>(t.begin);
        groupDepth[t.begin] = static_cast<TextPos>(t.depth);
    }

    struct Keyed {
        TextPos key;
        TextPos pos;
    };
    while (!ties.empty()) {
        if (stats) ++stats->refinementRounds;
        std::vector<std::vector<TieGroup>> produced(std::max(1u, nt));
        const unsigned workers = std::max(1u, nt);
        runWorkers(workers, [&](unsigned w) {
            auto [gb, ge] = evenSlice(ties.size(), w, workers);
            std::vector<Keyed> buf;
            for (std::size_t g = gb; g < ge; ++g) {
                const TieGroup t = ties[g];
                buf.clear();
                for (std::size_t row = t.begin; row < t.end; ++row) {
                    buf.push_back({rank[sa[row] + t.depth], sa[row]});
                }
                std::sort(buf.begin(), buf.end(), [](const Keyed& x, const Keyed& y) { return x.key < y.key; });
                for (std::size_t i = 0; i < buf.size(); ++i) sa[t.begin + i] = buf[i].pos;
                for (std::size_t i = 0; i < buf.size();) {
                    std::size_t j = i + 1;
                    while (j < buf.size() && buf[j].key == buf[i].key) ++j;
                    if (j - i >= 2) {
                        produced[w].push_back({t.begin + i, t.begin + j, t.depth + groupDepth[buf[i].key]});
                    }
                    i = j;
                }
            }
        });
        // Apply: every row of an old group gets its own rank unless a new group covers it.
        for (const auto& t : ties) {
            groupDepth[t.begin] = 0;
            for (std::size_t row = t.begin; row < t.end; ++row) rank[sa[row]] = static_cast<TextPos>(row);
        }
        std::vector<TieGroup> next;
        for (auto& part : produced) next.insert(next.end(), part.begin(), part.end());
        for (const auto& t : next) {
            groupDepth[t.begin] = static_cast<TextPos>(t.depth);
            for (std::size_t row = t.begin; row < t.end; ++row) rank[sa[row]] = static_cast<TextPos>(t.begin);
        }
        ties = std::move(next);
    }
}

}  // namespace detail

/// Parallel BWT; output is identical to naiveBwt for every thread/range count.
inline BwtResult computeBwt(std::span<const Code> text, std::uint64_t eac, const BwtOptions& opts = {},
                            BwtStats* stats = nullptr) {
    validateText(text);
    const unsigned nt = std::max(1u, opts.threads);
    unsigned nr = opts.ranges ? opts.ranges : 16 * nt;
    if (nr > eac) nr = static_cast<unsigned>(eac);
    if (*std::max_element(text.begin(), text.end()) >= eac) {
        throw InvalidInputError("text holds a code outside the extended alphabet");
    }

    auto ranges = makeRanges(eac, nr);
    distributeRotations(text, ranges, nt);
    if (opts.statisticalSplit) splitHeavyRanges(text, ranges, nr);
    const auto slices = splitRanges(ranges, nt);

    const RunKeys keys(text);
    std::vector<std::vector<TieGroup>> rangeTies(ranges.size());
    std::vector<BwtStats> workerStats(slices.size());
    runWorkers(static_cast<unsigned>(slices.size()), [&](unsigned w) {
        for (std::size_t r = slices[w].begin; r < slices[w].end; ++r) {
            rangeTies[r] = sortRange(ranges[r].rotations, keys, opts.depthLimit, &workerStats[w]);
        }
    });

    std::vector<TextPos> sa;
    sa.reserve(text.size());
    std::vector<TieGroup> ties;
    for (std::size_t r = 0; r < ranges.size(); ++r) {
        const std::uint64_t offset = sa.size();
        for (const auto& t : rangeTies[r]) ties.push_back({t.begin + offset, t.end + offset, t.depth});
        sa.insert(sa.end(), ranges[r].rotations.begin(), ranges[r].rotations.end());
        std::vector<TextPos>().swap(ranges[r].rotations);
    }
    if (stats) {
        for (const auto& s : workerStats) stats->comparisons += s.comparisons;
        stats->tieGroups += ties.size();
    }
    detail::refineTies(text, sa, std::move(ties), nt, stats);
    return resultFromOrder(text, std::move(sa));
}

inline BwtResult computeBwt(const ExtendedText& text, std::uint64_t eac, const BwtOptions& opts = {},
                            BwtStats* stats = nullptr) {
    return computeBwt(std::span<const Code>(text.superChars), eac, opts, stats);
}

}  // namespace encfm::bwt
