#pragma once

// Salsa20/20 keystream (256-bit key, 64-bit nonce) and the key material used
// by the index: the first key half seeds alphabet scrambling, the second half
// seeds per-block encryption.

#include <fcntl.h>
#include <sys/random.h>
#include <sys/stat.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "encfm/error.hpp"

namespace encfm {

using Key32 = std::array<std::uint8_t, 32>;

namespace salsa20 {

inline constexpr std::uint32_t load32(const std::uint8_t* p) noexcept {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline constexpr void store32(std::uint8_t* p, std::uint32_t v) noexcept {
    p[0] = std::uint8_t(v);
    p[1] = std::uint8_t(v >> 8);
    p[2] = std::uint8_t(v >> 16);
    p[3] = std::uint8_t(v >> 24);
}

/// One 64-byte keystream block for (key, nonce, block counter).
inline void block(const Key32& key, std::uint64_t nonce, std::uint64_t counter,
                  std::uint8_t out[64]) noexcept {
    // "expand 32-byte k"
    constexpr std::uint32_t c0 = 0x61707865, c1 = 0x3320646e, c2 = 0x79622d32, c3 = 0x6b206574;
    std::uint32_t in[16];
    in[0] = c0;
    for (int i = 0; i < 4; ++i) in[1 + i] = load32(key.data() + 4 * i);
    in[5] = c1;
    in[6] = std::uint32_t(nonce);
    in[7] = std::uint32_t(nonce >> 32);
    in[8] = std::uint32_t(counter);
    in[9] = std::uint32_t(counter >> 32);
    in[10] = c2;
    for (int i = 0; i < 4; ++i) in[11 + i] = load32(key.data() + 16 + 4 * i);
    in[15] = c3;

    std::uint32_t x[16];
    std::memcpy(x, in, sizeof x);
    auto qr = [&x](int a, int b, int c, int d) {
        x[b] ^= std::rotl(x[a] + x[d], 7);
        x[c] ^= std::rotl(x[b] + x[a], 9);
        x[d] ^= std::rotl(x[c] + x[b], 13);
        x[a] ^= std::rotl(x[d] + x[c], 18);
    };
    for (int round = 0; round < 20; round += 2) {
        qr(0, 4, 8, 12);
        qr(5, 9, 13, 1);
        qr(10, 14, 2, 6);
        qr(15, 3, 7, 11);
        qr(0, 1, 2, 3);
        qr(5, 6, 7, 4);
        qr(10, 11, 8, 9);
        qr(15, 12, 13, 14);
    }
    for (int i = 0; i < 16; ++i) store32(out + 4 * i, x[i] + in[i]);
}

}  // namespace salsa20

/// Nonce assignments under one key half. Scrambling uses nonce 0 with the
/// first half; data block b uses 1 + b with the second half; sequence
/// descriptions use the reserved range starting at 2^48.
namespace nonce {
inline constexpr std::uint64_t kScramble = 0;
inline constexpr std::uint64_t kMetadataBase = std::uint64_t{1} << 48;
inline constexpr std::uint64_t forBlock(std::uint64_t blockNumber) noexcept { return 1 + blockNumber; }
inline constexpr std::uint64_t forDescription(std::uint64_t item) noexcept { return kMetadataBase + item; }
}  // namespace nonce

/// Positioned Salsa20/20 keystream. Single owner; cheap to construct.
class CipherStream {
public:
    CipherStream(const Key32& key, std::uint64_t nonceValue) : key_(key), nonce_(nonceValue) {}

    std::uint64_t position() const noexcept { return position_; }

    std::uint8_t nextByte() {
        const std::size_t off = position_ & 63;
        if (off == 0) salsa20::block(key_, nonce_, position_ >> 6, buf_.data());
        ++position_;
        return buf_[off];
    }

    void read(std::span<std::uint8_t> out) {
        for (auto& b : out) b = nextByte();
    }

    /// Four keystream bytes read as a little-endian uint32, reduced mod bound.
    /// Bound may be as large as 2^32.
    std::uint64_t nextInt(std::uint64_t bound) {
        if (bound < 1) throw DomainError("nextInt bound must be >= 1");
        std::uint8_t b[4];
        for (auto& x : b) x = nextByte();
        return std::uint64_t{salsa20::load32(b)} % bound;
    }

private:
    Key32 key_;
    std::uint64_t nonce_;
    std::uint64_t position_ = 0;
    std::array<std::uint8_t, 64> buf_{};
};

inline CipherStream newStream(const Key32& key, std::uint64_t nonceValue) {
    return CipherStream(key, nonceValue);
}

/// n successive nextInt(bound) draws from a fresh stream.
inline std::vector<std::uint32_t> keystreamSymbols(const Key32& key, std::uint64_t nonceValue,
                                                   std::size_t count, std::uint32_t bound) {
    if (bound < 1) throw DomainError("keystream bound must be >= 1");
    CipherStream s(key, nonceValue);
    std::vector<std::uint32_t> out(count);
    for (auto& v : out) v = static_cast<std::uint32_t>(s.nextInt(bound));
    return out;
}

/// 64-byte index secret.
class IndexKey {
public:
    static constexpr std::size_t kSize = 64;

    IndexKey() = default;
    explicit IndexKey(std::span<const std::uint8_t> bytes) {
        if (bytes.size() != kSize) {
            throw KeyError("index key must be exactly 64 bytes, got " + std::to_string(bytes.size()));
        }
        std::memcpy(bytes_.data(), bytes.data(), kSize);
    }

    const std::array<std::uint8_t, kSize>& bytes() const noexcept { return bytes_; }

    Key32 scrambleHalf() const noexcept {
        Key32 k;
        std::memcpy(k.data(), bytes_.data(), 32);
        return k;
    }

    Key32 encryptHalf() const noexcept {
        Key32 k;
        std::memcpy(k.data(), bytes_.data() + 32, 32);
        return k;
    }

    friend bool operator==(const IndexKey&, const IndexKey&) = default;

private:
    std::array<std::uint8_t, kSize> bytes_{};
};

/// Draws 64 bytes from the kernel CSPRNG. Never falls back to a weaker source.
inline IndexKey generateKey() {
    std::array<std::uint8_t, IndexKey::kSize> buf{};
    std::size_t got = 0;
    while (got < buf.size()) {
        const ssize_t r = ::getrandom(buf.data() + got, buf.size() - got, 0);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw KeyError(std::string("system entropy source unavailable: ") + std::strerror(errno));
        }
        got += static_cast<std::size_t>(r);
    }
    return IndexKey(buf);
}

/// Created 0600 from the start so the key is never briefly readable by others.
inline void writeKeyFile(const std::filesystem::path& path, const IndexKey& key, bool force = false) {
    if (!force && std::filesystem::exists(path)) {
        throw IoError("refusing to overwrite existing key file " + path.string() + " (use --force)");
    }
    if (force) std::filesystem::remove(path);
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0600);
    if (fd < 0) throw IoError("cannot open key file for writing: " + path.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < IndexKey::kSize) {
        const ssize_t w = ::write(fd, key.bytes().data() + done, IndexKey::kSize - done);
        if (w < 0 && errno == EINTR) continue;
        if (w <= 0) {
            ::close(fd);
            throw IoError("write failure on key file: " + path.string());
        }
        done += static_cast<std::size_t>(w);
    }
    if (::close(fd) != 0) throw IoError("write failure on key file: " + path.string());
}

/// Reads a raw 64-byte key file. Group/other-readable files are rejected.
inline IndexKey readKeyFile(const std::filesystem::path& path) {
    struct ::stat st {};
    if (::stat(path.c_str(), &st) != 0) throw IoError("cannot stat key file: " + path.string());
    if ((st.st_mode & (S_IRWXG | S_IRWXO)) != 0) {
        throw KeyError("key file " + path.string() + " is accessible by group/others; chmod 600 it");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open key file: " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() != IndexKey::kSize) {
        throw KeyError("key file " + path.string() + " must contain exactly 64 bytes");
    }
    return IndexKey(buf);
}

}  // namespace encfm
