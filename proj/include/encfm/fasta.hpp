#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "encfm/error.hpp"

namespace encfm {

struct SequenceRecord {
    std::string description;
    std::string bases;

    std::size_t length() const noexcept { return bases.size(); }

    friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

struct SequenceCollection {
    std::vector<SequenceRecord> records;

    std::uint64_t totalBases() const noexcept {
        std::uint64_t total = 0;
        for (const auto& r : records) total += r.bases.size();
        return total;
    }

    bool empty() const noexcept { return records.empty(); }
    std::size_t size() const noexcept { return records.size(); }

    friend bool operator==(const SequenceCollection&, const SequenceCollection&) = default;
};

/// IUPAC nucleotide codes: bases A C G T U, ambiguity codes, and the gap '-'.
inline constexpr std::string_view kIupacSymbols = "ACGTURYSWKMBDHVN-";

constexpr bool isIupac(char c) noexcept {
    return kIupacSymbols.find(c) != std::string_view::npos;
}

constexpr char toUpperAscii(char c) noexcept {
    return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
}

namespace detail {

inline bool isBlank(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace detail

/// Reads a multi-record FASTA stream. Sequence lines are concatenated with
/// whitespace removed and symbols upper-cased; descriptions are kept verbatim
/// (only a trailing '\r' is dropped).
inline SequenceCollection parseFasta(std::istream& in) {
    SequenceCollection out;
    std::string line;
    std::uint64_t lineNo = 0;
    std::uint64_t headerLine = 0;
    bool open = false;

    auto closeRecord = [&]() {
        if (open && out.records.back().bases.empty()) {
            throw ParseError("line " + std::to_string(headerLine) +
                             ": record has an empty sequence body");
        }
    };

    while (std::getline(in, line)) {
        ++lineNo;
        if (!line.empty() && line.front() == '>') {
            closeRecord();
            std::string desc = line.substr(1);
            if (!desc.empty() && desc.back() == '\r') desc.pop_back();
            out.records.push_back({std::move(desc), {}});
            open = true;
            headerLine = lineNo;
            continue;
        }
        for (char raw : line) {
            if (detail::isBlank(raw)) continue;
            if (!open) {
                throw ParseError("line " + std::to_string(lineNo) +
                                 ": sequence data before any '>' header");
            }
            const char c = toUpperAscii(raw);
            if (!isIupac(c)) {
                throw ParseError("line " + std::to_string(lineNo) +
                                 ": symbol '" + std::string(1, raw) +
                                 "' is not an IUPAC nucleotide code");
            }
            out.records.back().bases.push_back(c);
        }
    }
    if (in.bad()) throw IoError("read failure while parsing FASTA");
    closeRecord();
    return out;
}

inline SequenceCollection parseFasta(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parseFasta(in);
}

inline void writeFasta(std::ostream& out, const SequenceCollection& collection,
                       std::size_t lineWidth = 80) {
    if (lineWidth < 1) throw ParameterError("FASTA line width must be >= 1");
    for (const auto& rec : collection.records) {
        out << '>' << rec.description << '\n';
        for (std::size_t i = 0; i < rec.bases.size(); i += lineWidth) {
            out.write(rec.bases.data() + i,
                      static_cast<std::streamsize>(std::min(lineWidth, rec.bases.size() - i)));
            out << '\n';
        }
    }
    if (!out) throw IoError("write failure while writing FASTA");
}

inline std::string writeFasta(const SequenceCollection& collection, std::size_t lineWidth = 80) {
    std::ostringstream out;
    writeFasta(out, collection, lineWidth);
    return out.str();
}

}  // namespace encfm
