#pragma once

// 64-bit FNV-1a. Used for file checksums and content hashes (corpus
// fingerprints, manifest stage hashes); not a cryptographic hash.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace steerkit {

class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

    Fnv1a64& update(std::span<const std::uint8_t> bytes) {
        for (auto b : bytes) {
            state_ ^= b;
            state_ *= kPrime;
        }
        return *this;
    }
    Fnv1a64& update(std::string_view s) {
        return update({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    }
    // Length-prefixed, so ("ab","c") and ("a","bc") hash differently.
    Fnv1a64& field(std::string_view s) {
        update_u64(s.size());
        return update(s);
    }
    Fnv1a64& update_u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        return update(b);
    }

    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(std::string_view s) { return Fnv1a64{}.update(s).digest(); }

// Fixed-width lowercase hex, 16 characters.
std::string hex64(std::uint64_t v);
// Inverse of hex64; throws FormatError on malformed input.
std::uint64_t parse_hex64(std::string_view s);

}  // namespace steerkit
