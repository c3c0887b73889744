#pragma once

// On-disk encrypted FM-index: L is cut into blocks of bs super-characters and
// superblocks of 16 blocks. Each block is remapped to its own alphabet, MTF
// and RLE0 coded, encrypted with a per-block Salsa20 keystream and bit-packed.
// Occurrence counts live in plaintext tables: absolute counts per superblock,
// relative counts per block over the superblock's alphabet.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "encfm/alphabet.hpp"
#include "encfm/bwt.hpp"
#include "encfm/crypto.hpp"
#include "encfm/error.hpp"
#include "encfm/fasta.hpp"
#include "encfm/parallel.hpp"

namespace encfm {

inline constexpr std::uint32_t kBlocksPerSuperblock = 16;
inline constexpr std::uint32_t kMinBlockSize = 64;
inline constexpr std::uint32_t kMaxBlockSize = 1u << 20;

namespace codec {

/// ceil(log2 b), at least 1: the width that holds every value below b.
inline unsigned bitWidth(std::uint64_t b) {
    unsigned w = 1;
    while (w < 64 && (std::uint64_t{1} << w) < b) ++w;
    return w;
}

inline std::size_t packedBytes(std::size_t count, unsigned width) { return (count * width + 7) / 8; }

/// Little-endian bit order: symbol i occupies bits [i*width, (i+1)*width).
inline std::vector<std::uint8_t> packBits(std::span<const std::uint32_t> symbols, unsigned width) {
    if (width < 1 || width > 32) throw DomainError("bit width must be in [1, 32]");
    std::vector<std::uint8_t> out(packedBytes(symbols.size(), width), 0);
    const std::uint64_t limit = std::uint64_t{1} << width;
    std::uint64_t bit = 0;
    for (std::uint32_t s : symbols) {
        if (s >= limit) {
            throw DomainError("symbol " + std::to_string(s) + " does not fit in " + std::to_string(width) + " bits");
        }
        std::uint64_t v = s;
        std::uint64_t at = bit;
        unsigned left = width;
        while (left > 0) {
            const unsigned shift = at & 7;
            const unsigned take = std::min(left, 8 - shift);
            out[at >> 3] |= static_cast<std::uint8_t>((v & ((1u << take) - 1)) << shift);
            v >>= take;
            at += take;
            left -= take;
        }
        bit += width;
    }
    return out;
}

/// True when the unused high bits of the last byte are zero.
inline bool paddingClear(std::span<const std::uint8_t> bytes, std::size_t count, unsigned width) {
    const std::uint64_t used = std::uint64_t(count) * width % 8;
    return used == 0 || bytes.empty() || (bytes[packedBytes(count, width) - 1] >> used) == 0;
}

inline std::vector<std::uint32_t> unpackBits(std::span<const std::uint8_t> bytes, unsigned width, std::size_t count) {
    if (width < 1 || width > 32) throw DomainError("bit width must be in [1, 32]");
    if (bytes.size() < packedBytes(count, width)) throw DecodeError("packed payload shorter than its symbol count");
    std::vector<std::uint32_t> out(count);
    std::uint64_t bit = 0;
    for (auto& s : out) {
        std::uint64_t v = 0;
        unsigned got = 0;
        std::uint64_t at = bit;
        while (got < width) {
            const unsigned shift = at & 7;
            const unsigned take = std::min(width - got, 8 - shift);
            v |= std::uint64_t((bytes[at >> 3] >> shift) & ((1u << take) - 1)) << got;
            got += take;
            at += take;
        }
        s = static_cast<std::uint32_t>(v);
        bit += width;
    }
    return out;
}

/// Move-to-front over [0, alphabetSize) with the list starting in ascending order.
inline std::vector<std::uint32_t> mtf(std::span<const std::uint32_t> symbols, std::uint32_t alphabetSize) {
    std::vector<std::uint32_t> list(alphabetSize);
    for (std::uint32_t i = 0; i < alphabetSize; ++i) list[i] = i;
    std::vector<std::uint32_t> out;
    out.reserve(symbols.size());
    for (std::uint32_t s : symbols) {
        if (s >= alphabetSize) throw DomainError("MTF symbol " + std::to_string(s) + " outside the block alphabet");
        const auto it = std::find(list.begin(), list.end(), s);
        out.push_back(static_cast<std::uint32_t>(it - list.begin()));
        std::rotate(list.begin(), it, it + 1);
    }
    return out;
}

inline std::vector<std::uint32_t> mtfInverse(std::span<const std::uint32_t> ranks, std::uint32_t alphabetSize) {
    std::vector<std::uint32_t> list(alphabetSize);
    for (std::uint32_t i = 0; i < alphabetSize; ++i) list[i] = i;
    std::vector<std::uint32_t> out;
    out.reserve(ranks.size());
    for (std::uint32_t r : ranks) {
        if (r >= alphabetSize) throw DecodeError("MTF rank " + std::to_string(r) + " outside the block alphabet");
        const std::uint32_t s = list[r];
        out.push_back(s);
        std::rotate(list.begin(), list.begin() + r, list.begin() + r + 1);
    }
    return out;
}

/// Zero-run digits: RUNA is digit 1, RUNB digit 2, least significant first.
inline constexpr std::uint32_t kRunA = 0;
inline constexpr std::uint32_t kRunB = 1;

inline void appendZeroRun(std::vector<std::uint32_t>& out, std::uint64_t run) {
    while (run > 0) {
        if (run & 1) {
            out.push_back(kRunA);
            run = (run - 1) / 2;
        } else {
            out.push_back(kRunB);
            run = (run - 2) / 2;
        }
    }
}

/// Zero runs become bijective base-2 digit strings; a nonzero rank r becomes r + 1.
inline std::vector<std::uint32_t> rle0(std::span<const std::uint32_t> ranks) {
    std::vector<std::uint32_t> out;
    out.reserve(ranks.size() / 2 + 1);
    std::uint64_t run = 0;
    for (std::uint32_t r : ranks) {
        if (r == 0) {
            ++run;
            continue;
        }
        appendZeroRun(out, run);
        run = 0;
        out.push_back(r + 1);
    }
    appendZeroRun(out, run);
    return out;
}

/// Inverse of rle0. Decoding stops with DecodeError once the output would
/// exceed `limit` ranks.
inline std::vector<std::uint32_t> rle0Inverse(std::span<const std::uint32_t> symbols,
                                              std::uint64_t limit = std::numeric_limits<std::uint64_t>::max()) {
    std::vector<std::uint32_t> out;
    std::uint64_t run = 0, weight = 1;
    auto flush = [&] {
        if (run > limit - std::min<std::uint64_t>(limit, out.size())) throw DecodeError("RLE0 run overflows the block");
        out.insert(out.end(), run, 0);
        run = 0;
        weight = 1;
    };
    for (std::uint32_t s : symbols) {
        if (s == kRunA || s == kRunB) {
            if (weight > limit) throw DecodeError("RLE0 run overflows the block");
            run += weight * (s == kRunA ? 1 : 2);
            weight *= 2;
            continue;
        }
        flush();
        if (out.size() >= limit) throw DecodeError("RLE0 output overflows the block");
        out.push_back(s - 1);
    }
    flush();
    return out;
}

/// c[i] = (s[i] + v[i]) mod b, v drawn from the block's keystream.
inline void encryptBlock(std::span<std::uint32_t> symbols, const Key32& key, std::uint64_t blockNumber,
                         std::uint32_t b) {
    CipherStream rnd(key, nonce::forBlock(blockNumber));
    for (auto& s : symbols) {
        if (s >= b) throw DomainError("block symbol outside the encryption modulus");
        s = static_cast<std::uint32_t>((s + rnd.nextInt(b)) % b);
    }
}

inline void decryptBlock(std::span<std::uint32_t> symbols, const Key32& key, std::uint64_t blockNumber,
                         std::uint32_t b) {
    CipherStream rnd(key, nonce::forBlock(blockNumber));
    for (auto& s : symbols) {
        if (s >= b) throw DecodeError("ciphertext symbol outside the encryption modulus");
        s = static_cast<std::uint32_t>((s + b - rnd.nextInt(b)) % b);
    }
}

/// Modulus for a block alphabet of size a: the alphabet plus the two run digits.
inline std::uint32_t blockModulus(std::size_t alphabetSize) { return static_cast<std::uint32_t>(alphabetSize + 2); }

}  // namespace codec

struct IndexHeader {
    std::uint32_t k = 0;
    std::uint32_t blockSize = 0;
    double sampleRate = 0;
    std::uint32_t stride = 0;
    std::string baseSymbols;  ///< canonical order, '$' and '&' first
    std::uint64_t textLength = 0;
    std::uint64_t primaryRow = 0;
    std::vector<std::uint64_t> originalLengths;
    std::vector<std::uint64_t> paddedLengths;

    std::uint64_t itemCount() const noexcept { return originalLengths.size(); }

    friend bool operator==(const IndexHeader&, const IndexHeader&) = default;
};

struct SuperblockTable {
    std::vector<std::uint32_t> alphabet;     ///< sorted indices into usedCodes
    std::vector<std::uint64_t> absoluteOcc;  ///< per used code, occurrences before the superblock
    /// relativeOcc[j * alphabet.size() + t]: occurrences of alphabet[t] in the
    /// superblock before its block j. Row 0 is all zero.
    std::vector<std::uint64_t> relativeOcc;

    friend bool operator==(const SuperblockTable&, const SuperblockTable&) = default;
};

struct BlockEntry {
    std::vector<std::uint32_t> alphabet;  ///< sorted indices into the superblock alphabet
    std::uint32_t storedLength = 0;       ///< post-RLE0 symbols
    std::uint32_t originalLength = 0;     ///< L symbols covered
    std::uint64_t payloadOffset = 0;
    std::uint64_t payloadBytes = 0;

    unsigned width() const { return codec::bitWidth(codec::blockModulus(alphabet.size())); }

    friend bool operator==(const BlockEntry&, const BlockEntry&) = default;
};

/// Rows whose text position is a multiple of the stride, sorted by row.
struct MarkedRows {
    std::vector<std::uint64_t> rows;
    std::vector<std::uint64_t> positions;

    friend bool operator==(const MarkedRows&, const MarkedRows&) = default;
};

struct EncryptedIndex {
    IndexHeader header;
    std::vector<Code> usedCodes;       ///< codes occurring in L, ascending
    std::vector<std::uint64_t> totals;  ///< per used code, occurrences in L
    std::vector<SuperblockTable> superblocks;
    std::vector<BlockEntry> blocks;
    std::vector<std::uint8_t> payload;
    MarkedRows marked;
    std::vector<std::vector<std::uint8_t>> descriptions;  ///< encrypted

    std::uint64_t blockCount() const noexcept { return blocks.size(); }

    friend bool operator==(const EncryptedIndex&, const EncryptedIndex&) = default;
};

inline std::uint32_t markStride(double sampleRate) {
    if (!(sampleRate > 0.0) || sampleRate > 100.0) {
        throw ParameterError("sample rate must be a percentage in (0, 100]");
    }
    const double s = std::round(100.0 / sampleRate);
    if (s > 1e9) throw ParameterError("sample rate too small");
    return static_cast<std::uint32_t>(std::max(1.0, s));
}

inline void validateBlockSize(std::uint64_t bs) {
    if (bs < kMinBlockSize || bs > kMaxBlockSize || !std::has_single_bit(bs)) {
        throw ParameterError("block size must be a power of two in [64, 2^20], got " + std::to_string(bs));
    }
}

namespace detail {

inline std::vector<std::uint8_t> xorDescription(const Key32& key, std::uint64_t item,
                                                std::span<const std::uint8_t> in) {
    CipherStream s(key, nonce::forDescription(item));
    std::vector<std::uint8_t> out(in.begin(), in.end());
    for (auto& b : out) b ^= s.nextByte();
    return out;
}

struct EncodedBlock {
    std::vector<std::uint32_t> alphabet;  // superblock-alphabet indices
    std::uint32_t storedLength = 0;
    std::vector<std::uint8_t> bytes;
};

}  // namespace detail

/// Builds the encrypted index from a BWT. `descriptions` holds the plaintext
/// sequence descriptions in item order.
inline EncryptedIndex partitionAndBuild(const bwt::BwtResult& bwt, const ExtendedText& text,
                                        const ScrambledAlphabet& alpha, const IndexKey& key,
                                        const std::vector<std::string>& descriptions, std::uint32_t bs,
                                        double sampleRate, unsigned threads = 1) {
    validateBlockSize(bs);
    const std::uint32_t stride = markStride(sampleRate);
    const std::vector<Code>& L = bwt.lastColumn;
    const std::uint64_t n = L.size();
    if (n == 0) throw InvalidInputError("empty BWT");
    if (descriptions.size() != text.items.size()) throw InvalidInputError("description count differs from item count");

    EncryptedIndex idx;
    auto& h = idx.header;
    h.k = alpha.k();
    h.blockSize = bs;
    h.sampleRate = sampleRate;
    h.stride = stride;
    h.baseSymbols = alpha.base().symbols();
    h.textLength = n;
    h.primaryRow = bwt.primaryRow;
    h.originalLengths = text.originalLengths;
    for (const auto& it : text.items) h.paddedLengths.push_back(it.paddedLength);

    // Used codes and their totals.
    std::unordered_map<Code, std::uint64_t> freq;
    for (Code c : L) ++freq[c];
    for (const auto& [c, f] : freq) idx.usedCodes.push_back(c);
    std::sort(idx.usedCodes.begin(), idx.usedCodes.end());
    std::unordered_map<Code, std::uint32_t> usedIndex;
    for (std::uint32_t u = 0; u < idx.usedCodes.size(); ++u) {
        usedIndex[idx.usedCodes[u]] = u;
        idx.totals.push_back(freq[idx.usedCodes[u]]);
    }
    const std::size_t U = idx.usedCodes.size();

    const std::uint64_t numBlocks = (n + bs - 1) / bs;
    const std::uint64_t sbSpan = std::uint64_t{bs} * kBlocksPerSuperblock;
    const std::uint64_t numSuper = (n + sbSpan - 1) / sbSpan;

    // L as used-code indices.
    std::vector<std::uint32_t> lu(n);
    for (std::uint64_t i = 0; i < n; ++i) lu[i] = usedIndex[L[i]];

    // Superblock tables.
    idx.superblocks.resize(numSuper);
    std::vector<std::uint64_t> running(U, 0);
    for (std::uint64_t s = 0; s < numSuper; ++s) {
        auto& sb = idx.superblocks[s];
        sb.absoluteOcc = running;
        const std::uint64_t begin = s * sbSpan, end = std::min(n, begin + sbSpan);
        std::vector<bool> present(U, false);
        for (std::uint64_t i = begin; i < end; ++i) present[lu[i]] = true;
        std::vector<std::int64_t> slot(U, -1);
        for (std::uint32_t u = 0; u < U; ++u) {
            if (present[u]) {
                slot[u] = static_cast<std::int64_t>(sb.alphabet.size());
                sb.alphabet.push_back(u);
            }
        }
        const std::size_t a = sb.alphabet.size();
        const std::uint64_t blocksHere = (end - begin + bs - 1) / bs;
        sb.relativeOcc.assign(blocksHere * a, 0);
        std::vector<std::uint64_t> within(a, 0);
        for (std::uint64_t j = 0; j < blocksHere; ++j) {
            std::copy(within.begin(), within.end(), sb.relativeOcc.begin() + j * a);
            const std::uint64_t bb = begin + j * bs, be = std::min(end, bb + bs);
            for (std::uint64_t i = bb; i < be; ++i) ++within[slot[lu[i]]];
        }
        for (std::uint64_t i = begin; i < end; ++i) ++running[lu[i]];
    }

    // Blocks: remap, MTF, RLE0, encrypt, pack.
    const Key32 encKey = key.encryptHalf();
    std::vector<detail::EncodedBlock> encoded(numBlocks);
    const unsigned workers = static_cast<unsigned>(std::max<std::uint64_t>(1, std::min<std::uint64_t>(threads, numBlocks)));
    runWorkers(workers, [&](unsigned w) {
        const auto [first, last] = evenSlice(numBlocks, w, workers);
        std::vector<std::int64_t> dense;
        for (std::uint64_t b = first; b < last; ++b) {
            const auto& sb = idx.superblocks[b / kBlocksPerSuperblock];
            const std::uint64_t bb = b * bs, be = std::min(n, bb + bs);
            // Superblock-alphabet slot of every used code in this block.
            std::vector<std::uint32_t> slots;
            slots.reserve(be - bb);
            for (std::uint64_t i = bb; i < be; ++i) {
                const auto it = std::lower_bound(sb.alphabet.begin(), sb.alphabet.end(), lu[i]);
                slots.push_back(static_cast<std::uint32_t>(it - sb.alphabet.begin()));
            }
            dense.assign(sb.alphabet.size(), -1);
            for (std::uint32_t t : slots) dense[t] = 0;
            auto& eb = encoded[b];
            for (std::uint32_t t = 0; t < sb.alphabet.size(); ++t) {
                if (dense[t] == 0) {
                    dense[t] = static_cast<std::int64_t>(eb.alphabet.size());
                    eb.alphabet.push_back(t);
                }
            }
            std::vector<std::uint32_t> remapped;
            remapped.reserve(slots.size());
            for (std::uint32_t t : slots) remapped.push_back(static_cast<std::uint32_t>(dense[t]));
            const std::uint32_t a = static_cast<std::uint32_t>(eb.alphabet.size());
            auto symbols = codec::rle0(codec::mtf(remapped, a));
            const std::uint32_t mod = codec::blockModulus(a);
            codec::encryptBlock(symbols, encKey, b, mod);
            eb.storedLength = static_cast<std::uint32_t>(symbols.size());
            eb.bytes = codec::packBits(symbols, codec::bitWidth(mod));
        }
    });

    idx.blocks.resize(numBlocks);
    std::uint64_t total = 0;
    for (const auto& eb : encoded) total += eb.bytes.size();
    idx.payload.reserve(total);
    for (std::uint64_t b = 0; b < numBlocks; ++b) {
        auto& be = idx.blocks[b];
        be.alphabet = std::move(encoded[b].alphabet);
        be.storedLength = encoded[b].storedLength;
        be.originalLength = static_cast<std::uint32_t>(std::min<std::uint64_t>(bs, n - b * bs));
        be.payloadOffset = idx.payload.size();
        be.payloadBytes = encoded[b].bytes.size();
        idx.payload.insert(idx.payload.end(), encoded[b].bytes.begin(), encoded[b].bytes.end());
    }

    for (std::uint64_t r = 0; r < n; ++r) {
        const std::uint64_t p = bwt.suffixPositions[r];
        if (p % stride == 0) {
            idx.marked.rows.push_back(r);
            idx.marked.positions.push_back(p);
        }
    }

    for (std::size_t i = 0; i < descriptions.size(); ++i) {
        const auto& d = descriptions[i];
        idx.descriptions.push_back(detail::xorDescription(
            encKey, i, std::span(reinterpret_cast<const std::uint8_t*>(d.data()), d.size())));
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr char kIndexMagic[8] = {'E', 'N', 'C', 'F', 'M', 'I', 'X', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void packed(std::span<const std::uint64_t> values, unsigned width) {
        std::vector<std::uint32_t> v32;
        if (width <= 32) {
            v32.assign(values.begin(), values.end());
            bytes(codec::packBits(v32, width));
            return;
        }
        // Wide values: low and high halves as two packed arrays.
        std::vector<std::uint32_t> hi;
        for (std::uint64_t v : values) {
            v32.push_back(static_cast<std::uint32_t>(v));
            hi.push_back(static_cast<std::uint32_t>(v >> 32));
        }
        bytes(codec::packBits(v32, 32));
        bytes(codec::packBits(hi, width - 32));
    }
    void mask(std::span<const std::uint32_t> members, std::size_t universe) {
        std::vector<std::uint8_t> m((universe + 7) / 8, 0);
        for (std::uint32_t x : members) m[x >> 3] |= static_cast<std::uint8_t>(1u << (x & 7));
        bytes(m);
    }
    std::vector<std::uint8_t>& data() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::size_t offset() const noexcept { return pos_; }
    bool atEnd() const noexcept { return pos_ == in_.size(); }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > in_.size() - pos_) {
            throw FormatError("truncated index at offset " + std::to_string(pos_) + " while reading " + what);
        }
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return take(1, what)[0]; }
    std::uint32_t u32(const char* what) {
        auto b = take(4, what);
        return salsa20::load32(b.data());
    }
    std::uint64_t u64(const char* what) {
        auto b = take(8, what);
        return std::uint64_t{salsa20::load32(b.data())} | (std::uint64_t{salsa20::load32(b.data() + 4)} << 32);
    }
    std::vector<std::uint64_t> packed(std::size_t count, unsigned width, const char* what) {
        std::vector<std::uint64_t> out(count);
        if (width <= 32) {
            const auto bytes = take(codec::packedBytes(count, width), what);
            if (!codec::paddingClear(bytes, count, width)) fail(std::string("stray padding bits in ") + what);
            auto v = codec::unpackBits(bytes, width, count);
            std::copy(v.begin(), v.end(), out.begin());
            return out;
        }
        auto lo = codec::unpackBits(take(codec::packedBytes(count, 32), what), 32, count);
        const auto hiBytes = take(codec::packedBytes(count, width - 32), what);
        if (!codec::paddingClear(hiBytes, count, width - 32)) fail(std::string("stray padding bits in ") + what);
        auto hi = codec::unpackBits(hiBytes, width - 32, count);
        for (std::size_t i = 0; i < count; ++i) out[i] = lo[i] | (std::uint64_t{hi[i]} << 32);
        return out;
    }
    std::vector<std::uint32_t> mask(std::size_t universe, const char* what) {
        auto m = take((universe + 7) / 8, what);
        std::vector<std::uint32_t> members;
        for (std::size_t x = 0; x < universe; ++x) {
            if (m[x >> 3] & (1u << (x & 7))) members.push_back(static_cast<std::uint32_t>(x));
        }
        if (universe % 8 != 0 && (m.back() >> (universe % 8)) != 0) fail("stray bits in alphabet mask");
        return members;
    }
    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError("malformed index at offset " + std::to_string(pos_) + ": " + why);
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

inline std::uint64_t superblockBlocks(const IndexHeader& h, std::uint64_t s) {
    const std::uint64_t span = std::uint64_t{h.blockSize} * kBlocksPerSuperblock;
    const std::uint64_t begin = s * span, end = std::min(h.textLength, begin + span);
    return (end - begin + h.blockSize - 1) / h.blockSize;
}

}  // namespace detail

/// Header, superblock tables, block directory, payloads, marked rows,
/// encrypted descriptions; little-endian throughout.
inline std::vector<std::uint8_t> serializeIndex(const EncryptedIndex& idx) {
    detail::ByteWriter w;
    const auto& h = idx.header;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kIndexMagic), 8));
    w.u32(kFormatVersion);
    w.u32(h.k);
    w.u32(h.blockSize);
    w.u64(std::bit_cast<std::uint64_t>(h.sampleRate));
    w.u32(h.stride);
    w.u8(static_cast<std::uint8_t>(h.baseSymbols.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(h.baseSymbols.data()), h.baseSymbols.size()));
    w.u64(h.textLength);
    w.u64(h.primaryRow);
    w.u64(h.itemCount());
    for (std::size_t i = 0; i < h.itemCount(); ++i) {
        w.u64(h.originalLengths[i]);
        w.u64(h.paddedLengths[i]);
    }
    w.u32(static_cast<std::uint32_t>(idx.usedCodes.size()));
    for (Code c : idx.usedCodes) w.u32(c);
    const unsigned countWidth = codec::bitWidth(h.textLength + 1);
    w.packed(idx.totals, countWidth);

    const std::size_t U = idx.usedCodes.size();
    const unsigned relWidth = codec::bitWidth(std::uint64_t{h.blockSize} * (kBlocksPerSuperblock - 1) + 1);
    w.u64(idx.superblocks.size());
    for (const auto& sb : idx.superblocks) {
        w.mask(sb.alphabet, U);
        w.packed(sb.absoluteOcc, countWidth);
        const std::size_t a = sb.alphabet.size();
        w.packed(std::span(sb.relativeOcc).subspan(std::min(a, sb.relativeOcc.size())), relWidth);
    }

    w.u64(idx.blocks.size());
    for (std::uint64_t b = 0; b < idx.blocks.size(); ++b) {
        const auto& be = idx.blocks[b];
        w.u32(be.storedLength);
        w.mask(be.alphabet, idx.superblocks[b / kBlocksPerSuperblock].alphabet.size());
    }
    w.u64(idx.payload.size());
    w.bytes(idx.payload);

    const unsigned rowWidth = codec::bitWidth(h.textLength);
    const unsigned sampleWidth = codec::bitWidth(h.textLength / std::max<std::uint32_t>(1, h.stride) + 1);
    w.u64(idx.marked.rows.size());
    w.packed(idx.marked.rows, rowWidth);
    std::vector<std::uint64_t> samples;
    samples.reserve(idx.marked.positions.size());
    for (std::uint64_t p : idx.marked.positions) samples.push_back(p / h.stride);
    w.packed(samples, sampleWidth);

    for (const auto& d : idx.descriptions) {
        w.u32(static_cast<std::uint32_t>(d.size()));
        w.bytes(d);
    }
    return std::move(w.data());
}

inline EncryptedIndex deserializeIndex(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    EncryptedIndex idx;
    auto& h = idx.header;
    const auto magic = r.take(8, "magic");
    if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kIndexMagic))) {
        throw FormatError("not an encfm index (bad magic at offset 0)");
    }
    const std::uint32_t version = r.u32("format version");
    if (version != kFormatVersion) {
        throw FormatError("unsupported index format version " + std::to_string(version) + " at offset 8");
    }
    h.k = r.u32("k");
    if (h.k < 1 || h.k > kMaxK) r.fail("k out of range");
    h.blockSize = r.u32("block size");
    try {
        validateBlockSize(h.blockSize);
    } catch (const ParameterError&) {
        r.fail("invalid block size");
    }
    h.sampleRate = std::bit_cast<double>(r.u64("sample rate"));
    h.stride = r.u32("stride");
    try {
        if (markStride(h.sampleRate) != h.stride) r.fail("stride does not match sample rate");
    } catch (const ParameterError&) {
        r.fail("invalid sample rate");
    }
    const std::uint8_t nsym = r.u8("alphabet size");
    const auto sym = r.take(nsym, "alphabet");
    h.baseSymbols.assign(sym.begin(), sym.end());
    if (nsym < 3 || h.baseSymbols[0] != kTerminator || h.baseSymbols[1] != kSeparator ||
        !std::is_sorted(h.baseSymbols.begin() + 2, h.baseSymbols.end()) ||
        std::adjacent_find(h.baseSymbols.begin() + 2, h.baseSymbols.end()) != h.baseSymbols.end()) {
        r.fail("invalid base alphabet");
    }
    h.textLength = r.u64("text length");
    if (h.textLength == 0 || h.textLength > bwt::kMaxTextLength) r.fail("invalid text length");
    h.primaryRow = r.u64("primary row");
    if (h.primaryRow >= h.textLength) r.fail("primary row out of range");
    const std::uint64_t items = r.u64("item count");
    if (items == 0 || items >= h.textLength) r.fail("invalid item count");
    std::uint64_t expectLength = 1;
    for (std::uint64_t i = 0; i < items; ++i) {
        h.originalLengths.push_back(r.u64("item length"));
        h.paddedLengths.push_back(r.u64("item padded length"));
        if (h.paddedLengths.back() != (h.originalLengths.back() + h.k - 1) / h.k) r.fail("inconsistent item length");
        expectLength += h.paddedLengths.back() + 1;
        if (expectLength > h.textLength) r.fail("item lengths exceed text length");
    }
    if (expectLength != h.textLength) r.fail("item lengths do not add up to the text length");

    std::uint64_t eac = 0;
    try {
        eac = extendedCardinality(nsym, h.k);
    } catch (const ParameterError&) {
        r.fail("alphabet too large for k");
    }
    const std::uint32_t U = r.u32("used code count");
    if (U == 0 || U > h.textLength) r.fail("invalid used code count");
    for (std::uint32_t u = 0; u < U; ++u) {
        idx.usedCodes.push_back(r.u32("used code"));
        if (idx.usedCodes.back() >= eac || (u > 0 && idx.usedCodes[u] <= idx.usedCodes[u - 1])) {
            r.fail("used codes not ascending within the code space");
        }
    }
    if (idx.usedCodes[0] != ScrambledAlphabet::terminatorCode()) r.fail("terminator code missing");
    const unsigned countWidth = codec::bitWidth(h.textLength + 1);
    idx.totals = r.packed(U, countWidth, "code totals");
    std::uint64_t sum = 0;
    for (std::uint64_t t : idx.totals) {
        if (t == 0) r.fail("zero total for a used code");
        sum += t;
    }
    if (sum != h.textLength || idx.totals[0] != 1) r.fail("code totals do not add up");

    const std::uint64_t numBlocks = (h.textLength + h.blockSize - 1) / h.blockSize;
    const std::uint64_t numSuper = (numBlocks + kBlocksPerSuperblock - 1) / kBlocksPerSuperblock;
    const unsigned relWidth = codec::bitWidth(std::uint64_t{h.blockSize} * (kBlocksPerSuperblock - 1) + 1);
    if (r.u64("superblock count") != numSuper) r.fail("superblock count mismatch");
    idx.superblocks.resize(numSuper);
    for (std::uint64_t s = 0; s < numSuper; ++s) {
        auto& sb = idx.superblocks[s];
        sb.alphabet = r.mask(U, "superblock alphabet");
        if (sb.alphabet.empty()) r.fail("empty superblock alphabet");
        sb.absoluteOcc = r.packed(U, countWidth, "absolute occurrences");
        const std::size_t a = sb.alphabet.size();
        const std::uint64_t nb = detail::superblockBlocks(h, s);
        auto rest = r.packed((nb - 1) * a, relWidth, "relative occurrences");
        sb.relativeOcc.assign(a, 0);
        sb.relativeOcc.insert(sb.relativeOcc.end(), rest.begin(), rest.end());
    }

    if (r.u64("block count") != numBlocks) r.fail("block count mismatch");
    idx.blocks.resize(numBlocks);
    std::uint64_t offset = 0;
    for (std::uint64_t b = 0; b < numBlocks; ++b) {
        auto& be = idx.blocks[b];
        be.storedLength = r.u32("stored length");
        be.alphabet = r.mask(idx.superblocks[b / kBlocksPerSuperblock].alphabet.size(), "block alphabet");
        if (be.alphabet.empty()) r.fail("empty block alphabet");
        be.originalLength = static_cast<std::uint32_t>(std::min<std::uint64_t>(h.blockSize, h.textLength - b * h.blockSize));
        if (be.storedLength > be.originalLength) r.fail("stored length exceeds block size");
        be.payloadOffset = offset;
        be.payloadBytes = codec::packedBytes(be.storedLength, be.width());
        offset += be.payloadBytes;
    }
    const std::uint64_t payloadSize = r.u64("payload size");
    if (payloadSize != offset) r.fail("payload size does not match the block directory");
    const auto payload = r.take(payloadSize, "payload");
    idx.payload.assign(payload.begin(), payload.end());

    const std::uint64_t marks = r.u64("marked row count");
    const std::uint64_t expectMarks = (h.textLength + h.stride - 1) / h.stride;
    if (marks != expectMarks) r.fail("marked row count does not match the stride");
    idx.marked.rows = r.packed(marks, codec::bitWidth(h.textLength), "marked rows");
    const auto samples =
        r.packed(marks, codec::bitWidth(h.textLength / h.stride + 1), "marked positions");
    for (std::uint64_t i = 0; i < marks; ++i) {
        if (idx.marked.rows[i] >= h.textLength || (i > 0 && idx.marked.rows[i] <= idx.marked.rows[i - 1])) {
            r.fail("marked rows not ascending");
        }
        idx.marked.positions.push_back(samples[i] * h.stride);
        if (idx.marked.positions.back() >= h.textLength) r.fail("marked position out of range");
    }

    for (std::uint64_t i = 0; i < items; ++i) {
        const std::uint32_t len = r.u32("description length");
        const auto d = r.take(len, "description");
        idx.descriptions.emplace_back(d.begin(), d.end());
    }
    if (!r.atEnd()) r.fail("trailing bytes after the index");
    return idx;
}

// ---------------------------------------------------------------------------
// Keyed access

/// Plain block: the original codes, with per-symbol ranks inside the block.
struct DecodedBlock {
    std::uint64_t blockNumber = 0;
    std::vector<Code> symbols;
    std::vector<std::uint32_t> rankInBlock;  ///< occurrences of symbols[i] in symbols[0, i)
    std::vector<Code> alphabet;              ///< sorted codes of the block alphabet
    std::vector<std::vector<std::uint32_t>> positions;

    /// Occurrences of c in symbols[0, off).
    std::uint64_t countBefore(Code c, std::uint64_t off) const {
        const auto it = std::lower_bound(alphabet.begin(), alphabet.end(), c);
        if (it == alphabet.end() || *it != c) return 0;
        const auto& p = positions[it - alphabet.begin()];
        return static_cast<std::uint64_t>(std::lower_bound(p.begin(), p.end(), off) - p.begin());
    }
};

struct CacheStats {
    std::uint64_t decrypts = 0;        ///< block decodes performed
    std::uint64_t distinctBlocks = 0;  ///< distinct blocks decoded since the last reset
    std::uint64_t hits = 0;
};

/// Bounded LRU of decoded blocks; all members serialize on one mutex.
class BlockCache {
public:
    explicit BlockCache(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

    template <typename Decode>
    std::shared_ptr<const DecodedBlock> get(std::uint64_t b, Decode&& decode) {
        {
            std::lock_guard lock(m_);
            auto it = map_.find(b);
            if (it != map_.end()) {
                lru_.splice(lru_.begin(), lru_, it->second.second);
                ++stats_.hits;
                return it->second.first;
            }
        }
        auto block = std::make_shared<const DecodedBlock>(decode(b));
        std::lock_guard lock(m_);
        ++stats_.decrypts;
        if (touched_.insert(b).second) ++stats_.distinctBlocks;
        auto it = map_.find(b);
        if (it != map_.end()) return it->second.first;
        lru_.push_front(b);
        map_.emplace(b, std::make_pair(block, lru_.begin()));
        while (map_.size() > capacity_) {
            map_.erase(lru_.back());
            lru_.pop_back();
        }
        return block;
    }

    CacheStats stats() const {
        std::lock_guard lock(m_);
        return stats_;
    }

    /// Clears counters and the distinct-block set; optionally drops cached blocks.
    void resetStats(bool dropBlocks = false) {
        std::lock_guard lock(m_);
        stats_ = {};
        touched_.clear();
        if (dropBlocks) {
            map_.clear();
            lru_.clear();
        }
    }

    std::vector<std::uint64_t> touchedBlocks() const {
        std::lock_guard lock(m_);
        std::vector<std::uint64_t> v(touched_.begin(), touched_.end());
        std::sort(v.begin(), v.end());
        return v;
    }

private:
    std::size_t capacity_;
    mutable std::mutex m_;
    std::list<std::uint64_t> lru_;
    std::unordered_map<std::uint64_t, std::pair<std::shared_ptr<const DecodedBlock>, std::list<std::uint64_t>::iterator>>
        map_;
    std::unordered_set<std::uint64_t> touched_;
    CacheStats stats_;
};

/// An index opened with its key. The reader borrows the index, which must
/// outlive it; the key and the decoded blocks stay inside the reader.
class IndexReader {
public:
    static constexpr std::size_t kDefaultCacheBlocks = 256;

    IndexReader(const EncryptedIndex& index, const IndexKey& key, std::size_t cacheBlocks = kDefaultCacheBlocks)
        : idx_(index), encKey_(key.encryptHalf()), cache_(cacheBlocks) {
        const auto& h = idx_.header;
        alpha_ = scrambleExtendedAlphabet(BaseAlphabet(std::string_view(h.baseSymbols).substr(2)), h.k, key);
        cumulative_.resize(idx_.usedCodes.size() + 1, 0);
        for (std::size_t u = 0; u < idx_.usedCodes.size(); ++u) cumulative_[u + 1] = cumulative_[u] + idx_.totals[u];
        rowOfSample_.resize(idx_.marked.rows.size());
        for (std::size_t i = 0; i < idx_.marked.rows.size(); ++i) {
            rowOfSample_[idx_.marked.positions[i] / h.stride] = idx_.marked.rows[i];
        }
        itemStart_.push_back(0);
        for (std::uint64_t p : h.paddedLengths) itemStart_.push_back(itemStart_.back() + p + 1);
    }

    const EncryptedIndex& index() const noexcept { return idx_; }
    const IndexHeader& header() const noexcept { return idx_.header; }
    const ScrambledAlphabet& alphabet() const noexcept { return alpha_; }
    std::uint64_t size() const noexcept { return idx_.header.textLength; }
    std::uint64_t itemStart(std::uint64_t item) const { return itemStart_.at(item); }

    std::optional<std::uint32_t> usedIndex(Code c) const {
        const auto it = std::lower_bound(idx_.usedCodes.begin(), idx_.usedCodes.end(), c);
        if (it == idx_.usedCodes.end() || *it != c) return std::nullopt;
        return static_cast<std::uint32_t>(it - idx_.usedCodes.begin());
    }

    /// Number of symbols in L smaller than c.
    std::uint64_t lessThan(Code c) const {
        const auto it = std::lower_bound(idx_.usedCodes.begin(), idx_.usedCodes.end(), c);
        return cumulative_[it - idx_.usedCodes.begin()];
    }

    std::uint64_t total(Code c) const {
        const auto u = usedIndex(c);
        return u ? idx_.totals[*u] : 0;
    }

    /// occ(c, block start) from the tables alone.
    std::uint64_t occAtBlock(std::uint32_t u, std::uint64_t b) const {
        if (b >= idx_.blocks.size()) return idx_.totals[u];
        const auto& sb = idx_.superblocks[b / kBlocksPerSuperblock];
        std::uint64_t r = sb.absoluteOcc[u];
        const auto it = std::lower_bound(sb.alphabet.begin(), sb.alphabet.end(), u);
        if (it != sb.alphabet.end() && *it == u) {
            r += sb.relativeOcc[(b % kBlocksPerSuperblock) * sb.alphabet.size() + (it - sb.alphabet.begin())];
        }
        return r;
    }

    /// True when code index u occurs in block b, read from the block directory.
    bool blockHas(std::uint32_t u, std::uint64_t b) const {
        const auto& sb = idx_.superblocks[b / kBlocksPerSuperblock];
        const auto it = std::lower_bound(sb.alphabet.begin(), sb.alphabet.end(), u);
        if (it == sb.alphabet.end() || *it != u) return false;
        const auto t = static_cast<std::uint32_t>(it - sb.alphabet.begin());
        const auto& ba = idx_.blocks[b].alphabet;
        return std::binary_search(ba.begin(), ba.end(), t);
    }

    /// Occurrences of c in L[0, pos). Decrypts at most one block.
    std::uint64_t occ(Code c, std::uint64_t pos) {
        if (pos > size()) throw DomainError("occ position beyond the end of L");
        const auto u = usedIndex(c);
        if (!u) return 0;
        const std::uint64_t bs = idx_.header.blockSize;
        const std::uint64_t b = pos / bs, off = pos % bs;
        std::uint64_t r = occAtBlock(*u, b);
        if (off == 0 || !blockHas(*u, b)) return r;
        return r + block(b)->countBefore(c, off);
    }

    Code symbolAt(std::uint64_t row) {
        if (row >= size()) throw DomainError("row out of range");
        const std::uint64_t bs = idx_.header.blockSize;
        return block(row / bs)->symbols[row % bs];
    }

    /// L[row] and LF(row).
    std::pair<Code, std::uint64_t> lf(std::uint64_t row) {
        const std::uint64_t bs = idx_.header.blockSize;
        const std::uint64_t b = row / bs, off = row % bs;
        const auto blk = block(b);
        const Code c = blk->symbols[off];
        const std::uint32_t u = *usedIndex(c);
        return {c, cumulative_[u] + occAtBlock(u, b) + blk->rankInBlock[off]};
    }

    std::optional<std::uint64_t> markedPosition(std::uint64_t row) const {
        const auto& rows = idx_.marked.rows;
        const auto it = std::lower_bound(rows.begin(), rows.end(), row);
        if (it == rows.end() || *it != row) return std::nullopt;
        return idx_.marked.positions[it - rows.begin()];
    }

    /// Text position (in super-characters) of the suffix at `row`.
    std::uint64_t locateRow(std::uint64_t row) {
        std::uint64_t steps = 0;
        for (;;) {
            if (auto p = markedPosition(row)) return *p + steps;
            row = lf(row).second;
            ++steps;
        }
    }

    /// Super-characters text[pos, pos + count).
    std::vector<Code> extractSuperChars(std::uint64_t pos, std::uint64_t count) {
        if (pos > size() || count > size() - pos) throw DomainError("text range out of bounds");
        std::vector<Code> out(count);
        if (count == 0) return out;
        const std::uint64_t end = pos + count;
        const std::uint64_t stride = idx_.header.stride;
        std::uint64_t q = (end + stride - 1) / stride * stride;
        std::uint64_t row;
        if (q >= size()) {
            q = size();
            row = idx_.header.primaryRow;
        } else {
            row = rowOfSample_[q / stride];
        }
        for (std::uint64_t p = q; p > pos;) {
            const auto [c, next] = lf(row);
            --p;
            if (p < end) out[p - pos] = c;
            row = next;
        }
        return out;
    }

    std::string description(std::uint64_t item) const {
        const auto& d = idx_.descriptions.at(item);
        const auto plain = detail::xorDescription(encKey_, item, d);
        return std::string(plain.begin(), plain.end());
    }

    std::shared_ptr<const DecodedBlock> block(std::uint64_t b) {
        return cache_.get(b, [this](std::uint64_t n) { return decodeBlock(n); });
    }

    /// Decrypts and decodes block b without the cache, checking its symbol
    /// counts against the occurrence tables.
    DecodedBlock decodeBlock(std::uint64_t b) const {
        if (b >= idx_.blocks.size()) throw DomainError("block number out of range");
        const auto& be = idx_.blocks[b];
        const auto& sb = idx_.superblocks[b / kBlocksPerSuperblock];
        const std::uint32_t a = static_cast<std::uint32_t>(be.alphabet.size());
        const std::uint32_t mod = codec::blockModulus(a);
        const auto bytes = std::span(idx_.payload).subspan(be.payloadOffset, be.payloadBytes);
        if (!codec::paddingClear(bytes, be.storedLength, codec::bitWidth(mod))) {
            throw DecodeError("block " + std::to_string(b) + " has stray padding bits (corrupted index)");
        }
        auto symbols = codec::unpackBits(bytes, codec::bitWidth(mod), be.storedLength);
        codec::decryptBlock(symbols, encKey_, b, mod);
        const auto dense = codec::mtfInverse(codec::rle0Inverse(symbols, be.originalLength), a);
        if (dense.size() != be.originalLength) {
            throw DecodeError("block " + std::to_string(b) + " decodes to the wrong length (wrong key or corrupted index)");
        }
        DecodedBlock out;
        out.blockNumber = b;
        std::vector<std::uint32_t> used(a);
        for (std::uint32_t i = 0; i < a; ++i) {
            used[i] = sb.alphabet[be.alphabet[i]];
            out.alphabet.push_back(idx_.usedCodes[used[i]]);
        }
        out.positions.resize(a);
        out.symbols.resize(dense.size());
        out.rankInBlock.resize(dense.size());
        for (std::uint32_t i = 0; i < dense.size(); ++i) {
            out.symbols[i] = out.alphabet[dense[i]];
            out.rankInBlock[i] = static_cast<std::uint32_t>(out.positions[dense[i]].size());
            out.positions[dense[i]].push_back(i);
        }
        for (std::uint32_t i = 0; i < a; ++i) {
            if (out.positions[i].size() != occAtBlock(used[i], b + 1) - occAtBlock(used[i], b)) {
                throw DecodeError("block " + std::to_string(b) +
                                  " disagrees with the occurrence tables (wrong key or corrupted index)");
            }
        }
        return out;
    }

    /// Cheap wrong-key probe: the first block must decode consistently.
    void checkKey() const {
        if (!idx_.blocks.empty()) (void)decodeBlock(0);
    }

    /// The whole last column, decoded block by block.
    std::vector<Code> decodeAll(unsigned threads = 1) const {
        std::vector<Code> L(size());
        const std::uint64_t nb = idx_.blocks.size();
        const unsigned workers = static_cast<unsigned>(std::max<std::uint64_t>(1, std::min<std::uint64_t>(threads, nb)));
        runWorkers(workers, [&](unsigned w) {
            const auto [first, last] = evenSlice(nb, w, workers);
            for (std::uint64_t b = first; b < last; ++b) {
                const auto blk = decodeBlock(b);
                std::copy(blk.symbols.begin(), blk.symbols.end(), L.begin() + b * idx_.header.blockSize);
            }
        });
        return L;
    }

    CacheStats cacheStats() const { return cache_.stats(); }
    void resetCacheStats(bool dropBlocks = false) { cache_.resetStats(dropBlocks); }
    std::vector<std::uint64_t> touchedBlocks() const { return cache_.touchedBlocks(); }

private:
    const EncryptedIndex& idx_;
    Key32 encKey_;
    ScrambledAlphabet alpha_;
    std::vector<std::uint64_t> cumulative_;
    std::vector<std::uint64_t> rowOfSample_;
    std::vector<std::uint64_t> itemStart_;
    BlockCache cache_;
};

// ---------------------------------------------------------------------------
// Whole pipeline

struct BuildOptions {
    unsigned k = 4;
    std::uint32_t blockSize = 16384;
    double sampleRate = 2.0;
    unsigned threads = 1;
    unsigned ranges = 0;  ///< 0 selects 16 * threads
};

struct BuildStats {
    std::uint64_t eac = 0;
    std::uint64_t textLength = 0;
    double alphabetSeconds = 0, bwtSeconds = 0, blockSeconds = 0;
};

inline EncryptedIndex buildIndex(const SequenceCollection& collection, const IndexKey& key,
                                 const BuildOptions& opts = {}, BuildStats* stats = nullptr) {
    using clock = std::chrono::steady_clock;
    validateBlockSize(opts.blockSize);
    markStride(opts.sampleRate);
    if (opts.threads < 1) throw ParameterError("thread count must be >= 1");
    auto t0 = clock::now();
    const BaseAlphabet base = buildBaseAlphabet(collection);
    const ScrambledAlphabet alpha = scrambleExtendedAlphabet(base, opts.k, key);
    const ExtendedText text = encodeCollection(collection, alpha);
    auto t1 = clock::now();
    bwt::BwtOptions bo;
    bo.threads = opts.threads;
    bo.ranges = opts.ranges;
    const auto result = bwt::computeBwt(text, alpha.eac(), bo);
    auto t2 = clock::now();
    std::vector<std::string> descriptions;
    descriptions.reserve(collection.size());
    for (const auto& r : collection.records) descriptions.push_back(r.description);
    auto idx = partitionAndBuild(result, text, alpha, key, descriptions, opts.blockSize, opts.sampleRate, opts.threads);
    auto t3 = clock::now();
    if (stats) {
        stats->eac = alpha.eac();
        stats->textLength = text.size();
        stats->alphabetSeconds = std::chrono::duration<double>(t1 - t0).count();
        stats->bwtSeconds = std::chrono::duration<double>(t2 - t1).count();
        stats->blockSeconds = std::chrono::duration<double>(t3 - t2).count();
    }
    return idx;
}

}  // namespace encfm
