#pragma once

// Synthetic collections: a uniform random reference and individuals derived
// from it by point mutations and short insertions/deletions.

#include <cstdint>
#include <random>
#include <string>

#include "encfm/error.hpp"
#include "encfm/fasta.hpp"

namespace encfm {

struct CorpusSpec {
    std::uint64_t referenceLength = 500000;
    std::uint64_t individuals = 100;
    double mutationRate = 0.001;
    double indelRate = 0.00013;
    std::uint64_t indelMin = 1;
    std::uint64_t indelMax = 16;
    std::uint64_t seed = 1;
    bool includeReference = false;

    void validate() const {
        if (!(mutationRate >= 0 && mutationRate <= 1)) throw ParameterError("mutation rate must be in [0, 1]");
        if (!(indelRate >= 0 && indelRate <= 1)) throw ParameterError("indel rate must be in [0, 1]");
        if (mutationRate + indelRate > 1) throw ParameterError("mutation and indel rates add up to more than 1");
        if (indelMin < 1 || indelMin > indelMax) throw ParameterError("indel length range must satisfy 1 <= min <= max");
        if (referenceLength < 1) throw ParameterError("reference length must be >= 1");
    }
};

struct MutationCounts {
    std::uint64_t points = 0;
    std::uint64_t insertions = 0;
    std::uint64_t deletions = 0;
};

namespace detail {

// Draws built directly on the engine output so a seed gives the same corpus
// with any standard library.
inline double unitDraw(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline std::uint64_t belowDraw(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

inline constexpr char kBases[4] = {'A', 'C', 'G', 'T'};

}  // namespace detail

inline std::string randomReference(std::mt19937_64& rng, std::uint64_t length) {
    std::string s(length, 'A');
    for (auto& c : s) c = detail::kBases[detail::belowDraw(rng, 4)];
    return s;
}

/// One individual: each reference position independently undergoes a point
/// mutation (to a different base) with probability mutationRate, or starts
/// an insertion or deletion (equally likely) with probability indelRate.
inline std::string deriveIndividual(const std::string& reference, const CorpusSpec& spec, std::mt19937_64& rng,
                                    MutationCounts* counts = nullptr) {
    std::string out;
    out.reserve(reference.size() + reference.size() / 100);
    const std::uint64_t span = spec.indelMax - spec.indelMin + 1;
    for (std::size_t i = 0; i < reference.size();) {
        const double u = detail::unitDraw(rng);
        if (u < spec.mutationRate) {
            const char from = reference[i];
            char to;
            do {
                to = detail::kBases[detail::belowDraw(rng, 4)];
            } while (to == from);
            out.push_back(to);
            if (counts) ++counts->points;
            ++i;
        } else if (u < spec.mutationRate + spec.indelRate) {
            const std::uint64_t len = spec.indelMin + detail::belowDraw(rng, span);
            if (detail::belowDraw(rng, 2) == 0) {
                for (std::uint64_t j = 0; j < len; ++j) out.push_back(detail::kBases[detail::belowDraw(rng, 4)]);
                out.push_back(reference[i]);
                ++i;
                if (counts) ++counts->insertions;
            } else {
                i += len;
                if (counts) ++counts->deletions;
            }
        } else {
            out.push_back(reference[i]);
            ++i;
        }
    }
    if (out.empty()) out.push_back(reference[0]);
    return out;
}

inline SequenceCollection generateCorpus(const CorpusSpec& spec, MutationCounts* counts = nullptr) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::string reference = randomReference(rng, spec.referenceLength);
    SequenceCollection c;
    if (spec.includeReference) c.records.push_back({"reference length=" + std::to_string(reference.size()), reference});
    for (std::uint64_t i = 0; i < spec.individuals; ++i) {
        c.records.push_back({"individual_" + std::to_string(i), deriveIndividual(reference, spec, rng, counts)});
    }
    return c;
}

}  // namespace encfm
