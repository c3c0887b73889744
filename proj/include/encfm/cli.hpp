#pragma once

// The `encfm` command line. Kept in a header so tests can drive it in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "encfm/block_store.hpp"
#include "encfm/corpus.hpp"
#include "encfm/crypto.hpp"
#include "encfm/error.hpp"
#include "encfm/fasta.hpp"
#include "encfm/search.hpp"
#include "encfm/verify.hpp"

namespace encfm::cli {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kOther = 1;
inline constexpr int kUsage = 2;
inline constexpr int kIo = 3;
inline constexpr int kFormat = 4;
inline constexpr int kKey = 5;
inline constexpr int kVerify = 6;
}  // namespace exit_code

inline constexpr const char* kDecryptFailed = "decryption failed or corrupt index";

inline int exitCodeFor(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Parameter:
        case ErrorKind::Domain:
        case ErrorKind::Unsupported: return exit_code::kUsage;
        case ErrorKind::Io: return exit_code::kIo;
        case ErrorKind::Parse:
        case ErrorKind::InvalidInput:
        case ErrorKind::Encoding:
        case ErrorKind::Format: return exit_code::kFormat;
        case ErrorKind::Key:
        case ErrorKind::Decode: return exit_code::kKey;
    }
    return exit_code::kOther;
}

struct BuildConfig {
    std::string fastaPath;
    std::string keyPath;
    std::string outputPath;
    BuildOptions options;
    bool force = false;
};

namespace detail {

inline std::vector<std::uint8_t> readBytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path);
    return buf;
}

inline SequenceCollection readFastaFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open FASTA file " + path);
    return parseFasta(in);
}

/// Writes through a temporary file and renames, so a failed run never leaves
/// a truncated output behind.
inline void writeOutput(const std::string& path, bool force, const std::function<void(std::ostream&)>& body) {
    if (!force && std::filesystem::exists(path)) throw IoError("refusing to overwrite " + path + " (use --force)");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        body(out);
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw IoError("write failure on " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::vector<std::string> collectPatterns(const std::vector<std::string>& literal, const std::string& file) {
    std::vector<std::string> out = literal;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw IoError("cannot open patterns file " + file);
        for (std::string line; std::getline(in, line);) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) out.push_back(line);
        }
    }
    if (out.empty()) throw ParameterError("no patterns given");
    return out;
}

struct OpenIndex {
    EncryptedIndex index;
    IndexKey key;
};

inline OpenIndex openIndex(const std::string& indexPath, const std::string& keyPath) {
    OpenIndex o;
    o.key = readKeyFile(keyPath);
    o.index = deserializeIndex(readBytes(indexPath));
    return o;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

struct QueryStats {
    std::vector<double> millis;
    CacheStats cache;
    std::uint64_t blocks = 0;

    void print(std::ostream& err) const {
        double total = 0;
        for (double m : millis) total += m;
        err << "patterns=" << millis.size() << "\n"
            << "total_ms=" << total << "\n"
            << "median_ms=" << median(millis) << "\n"
            << "blocks=" << blocks << "\n"
            << "blocks_decrypted=" << cache.distinctBlocks << "\n"
            << "decrypts=" << cache.decrypts << "\n";
    }
};

}  // namespace detail

inline void cmdKeygen(const std::string& outPath, bool force) { writeKeyFile(outPath, generateKey(), force); }

inline void cmdBuild(const BuildConfig& cfg, std::ostream& out) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const IndexKey key = readKeyFile(cfg.keyPath);
    const std::uint64_t inputBytes = std::filesystem::file_size(cfg.fastaPath);
    const SequenceCollection c = detail::readFastaFile(cfg.fastaPath);
    BuildStats stats;
    const EncryptedIndex idx = buildIndex(c, key, cfg.options, &stats);
    const auto bytes = serializeIndex(idx);
    detail::writeOutput(cfg.outputPath, cfg.force, [&](std::ostream& o) {
        o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    });
    const double seconds = std::chrono::duration<double>(clock::now() - t0).count();
    out << "# ratio = index_bytes / input_fasta_bytes\n"
        << "input_bytes=" << inputBytes << "\n"
        << "index_bytes=" << bytes.size() << "\n"
        << "ratio=" << std::setprecision(6) << (inputBytes ? double(bytes.size()) / double(inputBytes) : 0.0) << "\n"
        << "seconds=" << seconds << "\n"
        << "threads=" << cfg.options.threads << "\n"
        << "items=" << c.size() << "\n"
        << "bases=" << c.totalBases() << "\n"
        << "k=" << cfg.options.k << "\n"
        << "bs=" << cfg.options.blockSize << "\n"
        << "sample_rate=" << cfg.options.sampleRate << "\n"
        << "eac=" << stats.eac << "\n"
        << "text_length=" << stats.textLength << "\n"
        << "blocks=" << idx.blockCount() << "\n"
        << "bwt_seconds=" << stats.bwtSeconds << "\n"
        << "block_seconds=" << stats.blockSeconds << "\n";
}

inline detail::QueryStats cmdCount(const std::string& indexPath, const std::string& keyPath,
                                   const std::vector<std::string>& patterns, unsigned threads, std::ostream& out) {
    const auto o = detail::openIndex(indexPath, keyPath);
    IndexReader reader(o.index, o.key);
    reader.checkKey();
    reader.resetCacheStats(true);
    Searcher s(reader, {SearchOptions::Strategy::Auto, threads});
    detail::QueryStats qs;
    for (const auto& p : patterns) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto n = s.count(p);
        qs.millis.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (patterns.size() > 1) out << p << '\t';
        out << n << '\n';
    }
    qs.cache = reader.cacheStats();
    qs.blocks = o.index.blockCount();
    return qs;
}

inline detail::QueryStats cmdLocate(const std::string& indexPath, const std::string& keyPath,
                                    const std::vector<std::string>& patterns, unsigned threads, std::ostream& out) {
    const auto o = detail::openIndex(indexPath, keyPath);
    IndexReader reader(o.index, o.key);
    reader.checkKey();
    reader.resetCacheStats(true);
    Searcher s(reader, {SearchOptions::Strategy::Auto, threads});
    detail::QueryStats qs;
    for (const auto& p : patterns) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto hits = s.locate(p);
        qs.millis.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        for (const auto& h : hits) {
            if (patterns.size() > 1) out << p << '\t';
            out << h.itemIndex << '\t' << h.offset << '\n';
        }
    }
    qs.cache = reader.cacheStats();
    qs.blocks = o.index.blockCount();
    return qs;
}

/// length < 0 means "to the end of the item".
inline void cmdExtract(const std::string& indexPath, const std::string& keyPath, std::uint64_t item,
                       std::uint64_t start, std::int64_t length, std::ostream& out) {
    const auto o = detail::openIndex(indexPath, keyPath);
    IndexReader reader(o.index, o.key);
    reader.checkKey();
    Searcher s(reader);
    const auto& h = reader.header();
    if (item >= h.itemCount()) {
        throw DomainError("item " + std::to_string(item) + " out of range (collection has " +
                          std::to_string(h.itemCount()) + " items)");
    }
    const std::uint64_t itemLength = h.originalLengths[item];
    if (start > itemLength) throw DomainError("start " + std::to_string(start) + " exceeds item length");
    const std::uint64_t len = length < 0 ? itemLength - start : static_cast<std::uint64_t>(length);
    SequenceRecord rec{reader.description(item), s.extract(item, start, len)};
    if (start != 0 || len != itemLength) {
        rec.description += " region=" + std::to_string(start) + "-" + std::to_string(start + len);
    }
    writeFasta(out, SequenceCollection{{std::move(rec)}}, 60);
}

inline VerifyReport cmdVerify(const std::string& indexPath, const std::string& keyPath, const std::string& fastaPath,
                              const VerifyOptions& opts) {
    const IndexKey key = readKeyFile(keyPath);
    const SequenceCollection fasta = detail::readFastaFile(fastaPath);
    EncryptedIndex idx;
    try {
        idx = deserializeIndex(detail::readBytes(indexPath));
    } catch (const FormatError& e) {
        VerifyReport rep;
        rep.seed = opts.seed;
        rep.fail(std::string("index does not parse: ") + e.what());
        return rep;
    }
    return verifyIndex(idx, key, fasta, opts);
}

inline void cmdGenCorpus(const CorpusSpec& spec, const std::string& outPath, bool force) {
    const auto c = generateCorpus(spec);
    detail::writeOutput(outPath, force, [&](std::ostream& o) { writeFasta(o, c, 60); });
}

/// Parses argv and runs one command; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Encrypted compressed full-text index for genomic collections"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "encfm 1.0");

    bool force = false;
    std::string keyPath, outPath, indexPath, fastaPath, patternsFile;
    unsigned threads = 1;
    bool showStats = false;

    auto* keygen = app.add_subcommand("keygen", "Write a fresh random 64-byte key file");
    keygen->add_option("--out,-o", outPath, "Key file to create")->required();
    keygen->add_flag("--force", force, "Overwrite an existing file");

    BuildConfig cfg;
    auto* build = app.add_subcommand("build", "Build an encrypted index from a FASTA file");
    build->add_option("fasta", cfg.fastaPath, "Input FASTA")->required();
    build->add_option("--key", cfg.keyPath, "Key file")->required();
    build->add_option("--out,-o", cfg.outputPath, "Index file to write")->required();
    build->add_option("--k", cfg.options.k, "Extension order (1-8)")->capture_default_str();
    build->add_option("--bs", cfg.options.blockSize, "Block size in symbols (power of two)")->capture_default_str();
    build->add_option("--sample-rate", cfg.options.sampleRate, "Percent of rows marked for locate")
        ->capture_default_str();
    build->add_option("--threads", cfg.options.threads, "Worker threads")->capture_default_str();
    build->add_option("--ranges", cfg.options.ranges, "Sort ranges (0 = 16 per thread)")->capture_default_str();
    build->add_flag("--force", cfg.force, "Overwrite an existing index");

    std::vector<std::string> patterns;
    auto addQueryOptions = [&](CLI::App* sub) {
        sub->add_option("patterns", patterns, "Patterns (IUPAC symbols)");
        sub->add_option("--index,-i", indexPath, "Index file")->required();
        sub->add_option("--key", keyPath, "Key file")->required();
        sub->add_option("--patterns-file", patternsFile, "One pattern per line");
        sub->add_option("--threads", threads, "Worker threads")->capture_default_str();
        sub->add_flag("--stats", showStats, "Print timing and block counts to stderr");
    };
    auto* count = app.add_subcommand("count", "Count occurrences of patterns");
    addQueryOptions(count);
    auto* locate = app.add_subcommand("locate", "List occurrences as item<TAB>offset");
    addQueryOptions(locate);

    std::uint64_t item = 0, start = 0;
    std::int64_t length = -1;
    auto* extract = app.add_subcommand("extract", "Print a region of an item as FASTA");
    extract->add_option("--index,-i", indexPath, "Index file")->required();
    extract->add_option("--key", keyPath, "Key file")->required();
    extract->add_option("--item", item, "Item number (0-based)")->required();
    extract->add_option("--start", start, "First base (0-based)")->capture_default_str();
    extract->add_option("--length", length, "Number of bases (default: to the end)");

    VerifyOptions vopts;
    std::optional<std::uint64_t> seed;
    auto* verify = app.add_subcommand("verify", "Check an index against its source FASTA");
    verify->add_option("fasta", fastaPath, "Source FASTA")->required();
    verify->add_option("--index,-i", indexPath, "Index file")->required();
    verify->add_option("--key", keyPath, "Key file")->required();
    verify->add_option("--trials", vopts.trials, "Random query trials")->capture_default_str();
    verify->add_option("--seed", seed, "Trial seed (default: random)");
    verify->add_option("--threads", vopts.threads, "Worker threads")->capture_default_str();

    CorpusSpec spec;
    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic collection of mutated copies");
    gen->add_option("--out,-o", outPath, "FASTA file to create")->required();
    gen->add_option("--reference-length", spec.referenceLength, "Reference length")->capture_default_str();
    gen->add_option("--individuals", spec.individuals, "Number of individuals")->capture_default_str();
    gen->add_option("--mutation-rate", spec.mutationRate, "Point mutation rate per base")->capture_default_str();
    gen->add_option("--indel-rate", spec.indelRate, "Insertion/deletion rate per base")->capture_default_str();
    gen->add_option("--indel-min", spec.indelMin, "Shortest indel")->capture_default_str();
    gen->add_option("--indel-max", spec.indelMax, "Longest indel")->capture_default_str();
    gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    gen->add_flag("--with-reference", spec.includeReference, "Also write the reference as the first record");
    gen->add_flag("--force", force, "Overwrite an existing file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? exit_code::kOk : exit_code::kUsage;
    }

    try {
        if (keygen->parsed()) {
            cmdKeygen(outPath, force);
        } else if (build->parsed()) {
            cmdBuild(cfg, out);
        } else if (count->parsed() || locate->parsed()) {
            const auto all = detail::collectPatterns(patterns, patternsFile);
            const auto qs = count->parsed() ? cmdCount(indexPath, keyPath, all, threads, out)
                                            : cmdLocate(indexPath, keyPath, all, threads, out);
            if (showStats) qs.print(err);
        } else if (extract->parsed()) {
            cmdExtract(indexPath, keyPath, item, start, length, out);
        } else if (verify->parsed()) {
            vopts.seed = seed ? *seed : std::random_device{}();
            const auto rep = cmdVerify(indexPath, keyPath, fastaPath, vopts);
            if (!rep.ok) {
                err << "verify: FAIL (reproduce with --seed " << rep.seed << ")\n";
                for (const auto& f : rep.failures) err << "  " << f << "\n";
                return exit_code::kVerify;
            }
            out << "verify: pass (reconstruction ok, " << rep.trialsRun << " trials, seed " << rep.seed << ")\n";
        } else if (gen->parsed()) {
            cmdGenCorpus(spec, outPath, force);
        }
    } catch (const DecodeError&) {
        err << "error: " << kDecryptFailed << "\n";
        return exit_code::kKey;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exitCodeFor(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kOther;
    }
    return exit_code::kOk;
}

}  // namespace encfm::cli
