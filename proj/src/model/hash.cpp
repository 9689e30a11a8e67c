#include "steerkit/hash.hpp"

#include <charconv>

#include "steerkit/errors.hpp"

namespace steerkit {

std::string hex64(std::uint64_t v) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = kDigits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::uint64_t parse_hex64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw FormatError("malformed 64-bit hex value '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace steerkit
