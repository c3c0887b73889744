#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "encfm/crypto.hpp"
#include "encfm/error.hpp"
#include "encfm/fasta.hpp"

namespace encfm {

inline constexpr char kTerminator = '$';
inline constexpr char kSeparator = '&';
inline constexpr unsigned kMaxK = 8;
inline constexpr std::uint64_t kMaxExtendedCardinality = std::uint64_t{1} << 32;

/// Super-character code in the scrambled extended alphabet.
using Code = std::uint32_t;

/// Observed symbols plus '$' and '&', in canonical order: '$', '&', then
/// ascending character order. This is the unscrambled order of single symbols.
class BaseAlphabet {
public:
    BaseAlphabet() { index_.fill(-1); }

    explicit BaseAlphabet(std::string_view observed) : BaseAlphabet() {
        std::string rest;
        for (char c : observed) {
            if (c == kTerminator || c == kSeparator) {
                throw InvalidInputError(std::string("collection contains reserved symbol '") + c + "'");
            }
            rest.push_back(c);
        }
        std::sort(rest.begin(), rest.end());
        rest.erase(std::unique(rest.begin(), rest.end()), rest.end());
        symbols_ = std::string{kTerminator, kSeparator} + rest;
        for (std::size_t i = 0; i < symbols_.size(); ++i) {
            index_[static_cast<unsigned char>(symbols_[i])] = static_cast<int>(i);
        }
    }

    const std::string& symbols() const noexcept { return symbols_; }
    unsigned size() const noexcept { return static_cast<unsigned>(symbols_.size()); }
    bool contains(char c) const noexcept { return index_[static_cast<unsigned char>(c)] >= 0; }

    /// Canonical index of c, or -1 when absent.
    int indexOf(char c) const noexcept { return index_[static_cast<unsigned char>(c)]; }
    char symbolAt(unsigned i) const noexcept { return symbols_[i]; }

    friend bool operator==(const BaseAlphabet& a, const BaseAlphabet& b) { return a.symbols_ == b.symbols_; }

private:
    std::string symbols_;
    std::array<int, 256> index_{};
};

inline BaseAlphabet buildBaseAlphabet(const SequenceCollection& collection) {
    if (collection.empty()) throw InvalidInputError("cannot build an alphabet for an empty collection");
    std::array<bool, 256> seen{};
    for (const auto& rec : collection.records) {
        for (char c : rec.bases) seen[static_cast<unsigned char>(c)] = true;
    }
    std::string observed;
    for (unsigned c = 0; c < 256; ++c) {
        if (seen[c]) observed.push_back(static_cast<char>(c));
    }
    return BaseAlphabet(observed);
}

inline std::uint64_t extendedCardinality(unsigned sigma, unsigned k) {
    std::uint64_t eac = 1;
    for (unsigned i = 0; i < k; ++i) {
        eac *= sigma;
        if (eac > kMaxExtendedCardinality) {
            throw ParameterError("extended alphabet |Sigma|^k = " + std::to_string(sigma) + "^" +
                                 std::to_string(k) + " exceeds the 2^32 code space");
        }
    }
    return eac;
}

/// Sigma^k with a keyed permutation of its lexicographic order.
///
/// `sk[code]` is the unscrambled (lexicographic) rank of the k-mer holding
/// scrambled code `code`; `skInverse` maps ranks back to codes. The all-'$'
/// k-mer has rank 0 and keeps code 0.
class ScrambledAlphabet {
public:
    ScrambledAlphabet() = default;
    ScrambledAlphabet(BaseAlphabet base, unsigned k, std::vector<Code> sk)
        : base_(std::move(base)), k_(k), sk_(std::move(sk)) {
        eac_ = sk_.size();
        skInverse_.resize(sk_.size());
        for (std::size_t i = 0; i < sk_.size(); ++i) skInverse_[sk_[i]] = static_cast<Code>(i);
        separatorCode_ = codeOf(std::string(k_, kSeparator));
    }

    const BaseAlphabet& base() const noexcept { return base_; }
    unsigned k() const noexcept { return k_; }
    std::uint64_t eac() const noexcept { return eac_; }
    const std::vector<Code>& sk() const noexcept { return sk_; }
    const std::vector<Code>& skInverse() const noexcept { return skInverse_; }

    static constexpr Code terminatorCode() noexcept { return 0; }
    Code separatorCode() const noexcept { return separatorCode_; }

    /// Unscrambled rank of a k-mer, or -1 if a symbol is outside the alphabet.
    std::int64_t rankOf(std::string_view kmer) const noexcept {
        std::uint64_t r = 0;
        const unsigned sigma = base_.size();
        for (char c : kmer) {
            const int i = base_.indexOf(c);
            if (i < 0) return -1;
            r = r * sigma + static_cast<unsigned>(i);
        }
        return static_cast<std::int64_t>(r);
    }

    Code codeOf(std::string_view kmer) const {
        if (kmer.size() != k_) throw DomainError("k-mer length differs from k");
        const std::int64_t r = rankOf(kmer);
        if (r < 0) throw EncodingError("k-mer '" + std::string(kmer) + "' has a symbol outside the alphabet");
        return skInverse_[static_cast<std::size_t>(r)];
    }

    std::string decode(Code code) const {
        if (code >= eac_) throw DomainError("super-character code " + std::to_string(code) + " out of range");
        std::string out(k_, '\0');
        std::uint64_t r = sk_[code];
        const unsigned sigma = base_.size();
        for (unsigned i = k_; i-- > 0;) {
            out[i] = base_.symbolAt(static_cast<unsigned>(r % sigma));
            r /= sigma;
        }
        return out;
    }

private:
    BaseAlphabet base_;
    unsigned k_ = 0;
    std::uint64_t eac_ = 0;
    std::vector<Code> sk_;
    std::vector<Code> skInverse_;
    Code separatorCode_ = 0;
};

/// Keyed Fisher-Yates shuffle of the identity on [0, |Sigma|^k), leaving
/// index 0 fixed. Draws come from the Salsa20 stream on the scramble key half
/// with nonce 0; a draw of 0 is rejected and redrawn.
inline ScrambledAlphabet scrambleExtendedAlphabet(const BaseAlphabet& base, unsigned k, const IndexKey& key) {
    if (k < 1 || k > kMaxK) throw ParameterError("k must be in [1, 8], got " + std::to_string(k));
    const std::uint64_t eac = extendedCardinality(base.size(), k);
    std::vector<Code> sk(eac);
    for (std::uint64_t i = 0; i < eac; ++i) sk[i] = static_cast<Code>(i);
    CipherStream rnd(key.scrambleHalf(), nonce::kScramble);
    // Stops at i = 2: nextInt(1) can only yield the rejected value 0.
    for (std::uint64_t i = eac; i >= 2; --i) {
        std::uint64_t toSwapWith;
        do {
            toSwapWith = rnd.nextInt(i);
        } while (toSwapWith == 0);
        std::swap(sk[i - 1], sk[toSwapWith]);
    }
    return ScrambledAlphabet(base, k, std::move(sk));
}

struct ItemSpan {
    std::uint64_t start = 0;         ///< offset of the item's first super-character
    std::uint64_t paddedLength = 0;  ///< ceil(bases / k), separator excluded

    friend bool operator==(const ItemSpan&, const ItemSpan&) = default;
};

struct ExtendedText {
    std::vector<Code> superChars;
    std::vector<ItemSpan> items;
    std::vector<std::uint64_t> originalLengths;

    std::size_t size() const noexcept { return superChars.size(); }
};

/// S_C = S_1^k & ... S_n^k & $, each item right-padded with '&' to a multiple
/// of k, every k-mer replaced by its scrambled code.
inline ExtendedText encodeCollection(const SequenceCollection& collection, const ScrambledAlphabet& alpha) {
    const unsigned k = alpha.k();
    ExtendedText out;
    std::uint64_t total = 1;
    for (const auto& rec : collection.records) total += (rec.bases.size() + k - 1) / k + 1;
    out.superChars.reserve(total);
    out.items.reserve(collection.size());
    out.originalLengths.reserve(collection.size());

    std::string kmer(k, kSeparator);
    for (std::size_t item = 0; item < collection.size(); ++item) {
        const std::string& bases = collection.records[item].bases;
        const std::uint64_t start = out.superChars.size();
        for (std::size_t i = 0; i < bases.size(); i += k) {
            for (unsigned j = 0; j < k; ++j) {
                kmer[j] = (i + j < bases.size()) ? bases[i + j] : kSeparator;
            }
            const std::int64_t rank = alpha.rankOf(kmer);
            if (rank < 0) {
                throw EncodingError("item " + std::to_string(item) + " offset " + std::to_string(i) +
                                    ": symbol outside the index alphabet");
            }
            out.superChars.push_back(alpha.skInverse()[static_cast<std::size_t>(rank)]);
        }
        out.items.push_back({start, out.superChars.size() - start});
        out.originalLengths.push_back(bases.size());
        out.superChars.push_back(alpha.separatorCode());
    }
    out.superChars.push_back(ScrambledAlphabet::terminatorCode());
    return out;
}

using BigInt = boost::multiprecision::cpp_int;

/// Number of symbol orderings consistent with the decreasing frequency array:
/// the product over each distinct nonzero frequency f of (#symbols with
/// frequency f)!.
inline BigInt degreeOfHomophony(std::span<const Code> text) {
    std::unordered_map<Code, std::uint64_t> freq;
    for (Code c : text) ++freq[c];
    std::map<std::uint64_t, std::uint64_t> tie;
    for (const auto& [code, f] : freq) ++tie[f];
    BigInt result = 1;
    for (const auto& [f, m] : tie) {
        for (std::uint64_t i = 2; i <= m; ++i) result *= i;
    }
    return result;
}

inline BigInt degreeOfHomophony(const ExtendedText& text) { return degreeOfHomophony(text.superChars); }

}  // namespace encfm
